//! Training runs, their manifests, and the ablation grid.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context;
use hardpix::hardmine::FusionOp;
use hardpix::losses::{Baseline, LossConfig, WeightSource};
use hardpix::synthdata::{generate_dataset, load_dataset, Dataset};
use hardpix::tinynet::{
    evaluate, save_checkpoint, train, EpochLog, EvalReport, LrSchedule, TrainOutcome, LR_PATIENCE,
    LR_REL_TOLERANCE,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::exit::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "params.ckpt";

/// Where the scenes of a run came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Regenerated in memory from `config.data`.
    Generated,
    /// Loaded from a dataset directory written by `generate`.
    Directory(PathBuf),
}

pub fn load_data(cfg: &RunConfig, source: &DataSource) -> anyhow::Result<Dataset> {
    match source {
        DataSource::Generated => Ok(generate_dataset(
            &cfg.data.scene,
            cfg.data.n_train,
            cfg.data.n_test,
        )?),
        DataSource::Directory(dir) => {
            let manifest = if dir.is_dir() {
                dir.join(hardpix::synthdata::MANIFEST_FILE)
            } else {
                dir.clone()
            };
            if !manifest.exists() {
                return Err(CliError::Missing(manifest.display().to_string()).into());
            }
            let ds =
                load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
            if ds.spec.classes != cfg.data.scene.classes {
                return Err(CliError::Config(format!(
                    "data.scene.classes is {} but the dataset has {}",
                    cfg.data.scene.classes, ds.spec.classes
                ))
                .into());
            }
            Ok(ds)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRule {
    pub schedule: LrSchedule,
    pub patience_epochs: usize,
    pub relative_tolerance: f64,
}

/// Everything needed to replay a training run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub run_seed: u64,
    pub data_seed: u64,
    pub data: DataSource,
    pub lr_rule: LrRule,
    pub epochs: Vec<EpochLog>,
    pub final_lr: f64,
    pub final_metrics: EvalReport,
    pub wall_clock_seconds: f64,
}

pub struct TrainReport {
    pub outcome: TrainOutcome,
    /// Metrics on the test split.
    pub eval: EvalReport,
}

pub fn train_and_eval(cfg: &RunConfig, data: &Dataset) -> anyhow::Result<TrainReport> {
    let outcome = train(&data.train, &data.test, &cfg.net, &cfg.loss, &cfg.train)?;
    if data.test.is_empty() {
        return Err(CliError::Config(
            "data.n_test: evaluation needs at least one test scene".into(),
        )
        .into());
    }
    let eval = evaluate(&outcome.params, &data.test, cfg.correlation_bins)?;
    Ok(TrainReport { outcome, eval })
}

/// Deterministic metrics file: no timings, no paths.
pub fn metrics_json(config_hash: &str, eval: &EvalReport) -> Vec<u8> {
    #[derive(Serialize)]
    struct Metrics<'a> {
        config_hash: &'a str,
        #[serde(flatten)]
        eval: &'a EvalReport,
    }
    let mut out =
        serde_json::to_vec_pretty(&Metrics { config_hash, eval }).expect("metrics serialize");
    out.push(b'\n');
    out
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Trains, evaluates, and writes checkpoint, manifest and metrics into
/// `run_dir`.
pub fn run_train(cfg: &RunConfig, data: DataSource, run_dir: &Path) -> anyhow::Result<RunManifest> {
    let start = Instant::now();
    let dataset = load_data(cfg, &data)?;
    let report = train_and_eval(cfg, &dataset)?;
    let config_hash = cfg.hash();
    save_checkpoint(&report.outcome.params, &run_dir.join(CHECKPOINT_FILE))?;
    write_file(
        &run_dir.join(METRICS_FILE),
        &metrics_json(&config_hash, &report.eval),
    )?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        config: cfg.clone(),
        run_seed: cfg.seed,
        data_seed: cfg.data.scene.seed,
        data,
        lr_rule: LrRule {
            schedule: cfg.train.lr_schedule,
            patience_epochs: LR_PATIENCE,
            relative_tolerance: LR_REL_TOLERANCE,
        },
        epochs: report.outcome.log,
        final_lr: report.outcome.final_lr,
        final_metrics: report.eval,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_file(&run_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

pub fn read_run_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let bytes = std::fs::read(&path).map_err(|e| CliError::from_io(&path, e))?;
    let m: RunManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    m.config.validate()?;
    Ok(m)
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cross-entropy only.
    Ls,
    /// Cross-entropy plus depth regression.
    LsLd,
    /// Hard term weighted by depth prediction error alone.
    HardDpe,
    /// Hard term weighted by depth-aware segmentation error alone.
    HardDse,
    /// Hard term with the fused weight map.
    Hard,
    /// Hard term plus the four side-output terms.
    MultiScale,
    /// Multi-scale objective trained with the curriculum.
    Curriculum,
    Ohem,
    Focal,
    Lmp,
    /// Hard term with a specific fusion operator.
    Fusion(FusionOp),
}

impl Variant {
    pub const TABLE: [Variant; 10] = [
        Variant::Ls,
        Variant::LsLd,
        Variant::HardDpe,
        Variant::HardDse,
        Variant::Hard,
        Variant::MultiScale,
        Variant::Curriculum,
        Variant::Ohem,
        Variant::Focal,
        Variant::Lmp,
    ];

    pub fn id(self) -> String {
        match self {
            Variant::Ls => "ls".into(),
            Variant::LsLd => "ls_ld".into(),
            Variant::HardDpe => "lh_r".into(),
            Variant::HardDse => "lh_z".into(),
            Variant::Hard => "lh".into(),
            Variant::MultiScale => "ms".into(),
            Variant::Curriculum => "cl".into(),
            Variant::Ohem => "ohem".into(),
            Variant::Focal => "focal".into(),
            Variant::Lmp => "lmp".into(),
            Variant::Fusion(op) => format!("fusion_{}", op.name()),
        }
    }

    pub fn label(self) -> String {
        match self {
            Variant::Ls => "L_s".into(),
            Variant::LsLd => "L_s+L_d".into(),
            Variant::HardDpe => "+L_h(R)".into(),
            Variant::HardDse => "+L_h(Z)".into(),
            Variant::Hard => "+L_h".into(),
            Variant::MultiScale => "+MS".into(),
            Variant::Curriculum => "+CL".into(),
            Variant::Ohem => "L_s+L_d+OHEM".into(),
            Variant::Focal => "L_s+L_d+FL".into(),
            Variant::Lmp => "L_s+L_d+LMP".into(),
            Variant::Fusion(op) => format!("+L_h ({})", op.name()),
        }
    }

    pub fn parse(id: &str) -> Result<Variant, CliError> {
        if let Some(op) = id.strip_prefix("fusion_") {
            return op
                .parse()
                .map(Variant::Fusion)
                .map_err(|_| CliError::Config(format!("variants: unknown fusion {op:?}")));
        }
        Variant::TABLE
            .into_iter()
            .find(|v| v.id() == id)
            .ok_or_else(|| CliError::Config(format!("variants: unknown variant {id:?}")))
    }

    /// The loss configuration of this row, derived from `base`. Fusion,
    /// grid, bin size and baseline hyperparameters carry over; the row
    /// decides which terms are on.
    pub fn loss(self, base: &LossConfig) -> LossConfig {
        let with = |alpha: f64, beta: f64, depth: bool| LossConfig {
            alpha,
            beta,
            depth_loss: depth,
            curriculum: false,
            weight_source: WeightSource::Both,
            baseline: Baseline::None,
            ..base.clone()
        };
        match self {
            Variant::Ls => with(0.0, 0.0, false),
            Variant::LsLd => with(0.0, 0.0, true),
            Variant::HardDpe => LossConfig {
                weight_source: WeightSource::Dpe,
                ..with(base.alpha, 0.0, true)
            },
            Variant::HardDse => LossConfig {
                weight_source: WeightSource::Dse,
                ..with(base.alpha, 0.0, true)
            },
            Variant::Hard => with(base.alpha, 0.0, true),
            Variant::MultiScale => with(base.alpha, base.beta, true),
            Variant::Curriculum => LossConfig {
                curriculum: true,
                ..with(base.alpha, base.beta, true)
            },
            Variant::Ohem => LossConfig {
                baseline: Baseline::Ohem,
                ..with(base.alpha, 0.0, true)
            },
            Variant::Focal => LossConfig {
                baseline: Baseline::Focal,
                ..with(base.alpha, 0.0, true)
            },
            Variant::Lmp => LossConfig {
                baseline: Baseline::Lmp,
                ..with(base.alpha, 0.0, true)
            },
            Variant::Fusion(op) => LossConfig {
                fusion: op,
                ..with(base.alpha, 0.0, true)
            },
        }
    }

    pub fn config(self, base: &RunConfig, seed: u64) -> RunConfig {
        RunConfig {
            seed,
            loss: self.loss(&base.loss),
            ..base.clone()
        }
        .resolved()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub mean_iou: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,label,mean_iou,std_iou");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                r.variant.id(),
                r.label,
                r.mean_iou,
                r.std_iou
            ));
            for v in &r.per_seed {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains every (variant, seed) pair on the same scenes. With `jobs > 1` runs
/// execute on worker threads; results are slotted by index so the table does
/// not depend on scheduling.
pub fn ablate(
    base: &RunConfig,
    data: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    jobs: usize,
) -> anyhow::Result<AblationTable> {
    let tasks: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let slots: Vec<Mutex<Option<anyhow::Result<AblationRun>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(variant, seed)) = tasks.get(i) else {
            break;
        };
        let cfg = variant.config(base, seed);
        log::info!("ablation: {} seed {seed}", variant.label());
        let result = train_and_eval(&cfg, data).map(|r| AblationRun {
            variant,
            seed,
            config_hash: cfg.hash(),
            mean_iou: r.eval.metrics.mean_iou,
            pixel_acc: r.eval.metrics.pixel_acc,
            mean_acc: r.eval.metrics.mean_acc,
            spearman: r.eval.correlation.spearman,
        });
        *slots[i].lock().expect("slot lock") = Some(result);
    };
    let jobs = jobs.clamp(1, tasks.len().max(1));
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    let runs = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every task ran"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows = variants
        .iter()
        .map(|&v| {
            let per_seed: Vec<f64> = runs
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.mean_iou)
                .collect();
            let n = per_seed.len() as f64;
            let mean = per_seed.iter().sum::<f64>() / n;
            let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            AblationRow {
                variant: v,
                label: v.label(),
                mean_iou: mean,
                std_iou: var.sqrt(),
                per_seed,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
        runs,
    })
}
