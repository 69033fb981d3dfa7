//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hardpix::grids::{Grid, LogDepthMap, LossWeightMap, Mask, SegLabelMap};
use hardpix::hardmine::{curriculum_mask, curriculum_pace_over, dpe_map, dse_map, fuse};
use hardpix::io::{write_pgm_scaled, PgmDepth};
use hardpix::losses::Targets;
use hardpix::synthdata::{generate_split, Scene};
use hardpix::tinynet::{evaluate, load_checkpoint, predict, EvalReport, ParamStore};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hash_json, load_config, RunConfig};
use crate::exit::CliError;
use crate::run::{
    ablate, load_data, metrics_json, read_run_manifest, run_train, write_file, DataSource, Variant,
};

/// Environment variable naming the directory under which run directories
/// are created.
pub const OUT_ROOT_ENV: &str = "HARDPIX_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "hardpix",
    version,
    about = "Depth-guided hard pixel mining experiments"
)]
pub struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "runs")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set loss.alpha=0 --set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Dataset directory written by `generate`; regenerated in memory when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        load_config(self.config.as_deref(), &self.overrides)
    }

    fn source(&self) -> DataSource {
        match &self.dataset {
            Some(p) => DataSource::Directory(p.clone()),
            None => DataSource::Generated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset described by the config.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Target directory; defaults to a hashed directory under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, evaluate on the test split, and write checkpoint and manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Re-run exactly from a previous run's manifest instead of a config.
        #[arg(long, conflicts_with_all = ["config", "overrides", "dataset"])]
        replay: Option<PathBuf>,
    },
    /// Segmentation metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `params.ckpt` written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Depth-error versus segmentation-error correlation of a checkpoint.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `params.ckpt` written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Export the DPE, DSE and fused weight maps of one scene, plus the
    /// curriculum mask at selected epochs.
    Weightmap {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `params.ckpt` written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Position of the scene within the split.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Number of evenly spaced epochs at which to export the curriculum mask.
        #[arg(long, default_value_t = 5)]
        mask_epochs: usize,
    },
    /// Train every variant of the ablation grid over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated variant ids; the full table by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Number of seeds, starting from the config seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Independent runs to execute in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Directory for one command invocation, named by the hash of its inputs.
fn run_dir(root: &Path, command: &str, hash: &str) -> PathBuf {
    root.join(format!("{command}-{}", &hash[..16]))
}

fn scenes(data: &hardpix::synthdata::Dataset, split: Split) -> &[Scene] {
    match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    }
}

fn load_params(path: &Path, cfg: &RunConfig) -> anyhow::Result<ParamStore> {
    if !path.exists() {
        return Err(CliError::Missing(path.display().to_string()).into());
    }
    let params = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if params.spec().classes != cfg.data.scene.classes {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes, data.scene.classes is {}",
            params.spec().classes,
            cfg.data.scene.classes
        ))
        .into());
    }
    Ok(params)
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Hash over a command's config plus the checkpoint and split it reads.
fn eval_hash(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    extra: &str,
) -> anyhow::Result<String> {
    Ok(hash_json(&serde_json::json!({
        "config": cfg,
        "checkpoint": file_digest(checkpoint)?,
        "split": split,
        "extra": extra,
    })))
}

fn print_metrics(eval: &EvalReport) {
    let m = &eval.metrics;
    println!(
        "mean IoU {:.4}  pixel acc {:.4}  mean acc {:.4}  log-depth MAE {:.4}",
        m.mean_iou, m.pixel_acc, m.mean_acc, eval.log_depth_mae
    );
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let root = &cli.out_root;
    match cli.command {
        Command::Generate { cfg, out } => {
            let config = cfg.load()?;
            let dir = out.unwrap_or_else(|| {
                let hash = hash_json(&serde_json::to_value(&config.data).expect("serializable"));
                run_dir(root, "data", &hash)
            });
            let m = generate_split(
                &config.data.scene,
                config.data.n_train,
                config.data.n_test,
                &dir,
            )?;
            println!("wrote {} train / {} test scenes", m.n_train, m.n_test);
            println!("{}", dir.display());
        }
        Command::Train { cfg, replay } => {
            let (config, source) = match replay {
                Some(path) => {
                    let m = read_run_manifest(&path)?;
                    (m.config, m.data)
                }
                None => (cfg.load()?, cfg.source()),
            };
            let dir = run_dir(root, "train", &config.hash());
            let manifest = run_train(&config, source, &dir)?;
            print_metrics(&manifest.final_metrics);
            println!("{}", dir.display());
        }
        Command::Eval {
            cfg,
            checkpoint,
            split,
        } => {
            let config = cfg.load()?;
            let params = load_params(&checkpoint, &config)?;
            let data = load_data(&config, &cfg.source())?;
            let eval = evaluate(&params, scenes(&data, split), config.correlation_bins)?;
            let hash = eval_hash(&config, &checkpoint, split, "eval")?;
            let dir = run_dir(root, "eval", &hash);
            write_file(&dir.join("metrics.json"), &metrics_json(&hash, &eval))?;
            let mut csv = String::from("class,iou,accuracy\n");
            for (c, (iou, acc)) in eval
                .metrics
                .iou_per_class
                .iter()
                .zip(&eval.metrics.acc_per_class)
                .enumerate()
            {
                let f = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                csv.push_str(&format!("{c},{},{}\n", f(iou), f(acc)));
            }
            write_file(&dir.join("iou.csv"), csv.as_bytes())?;
            print_metrics(&eval);
            println!("{}", dir.display());
        }
        Command::Analyze {
            cfg,
            checkpoint,
            split,
        } => {
            let config = cfg.load()?;
            let params = load_params(&checkpoint, &config)?;
            let data = load_data(&config, &cfg.source())?;
            let eval = evaluate(&params, scenes(&data, split), config.correlation_bins)?;
            let hash = eval_hash(&config, &checkpoint, split, "analyze")?;
            let dir = run_dir(root, "analyze", &hash);
            let mut csv = String::from("bin,lower,upper,count,errors,error_rate\n");
            for (i, b) in eval.correlation.bins.iter().enumerate() {
                let rate = b.error_rate.map(|r| r.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{i},{},{},{},{},{rate}\n",
                    b.lower, b.upper, b.count, b.errors
                ));
            }
            write_file(&dir.join("correlation.csv"), csv.as_bytes())?;
            let mut json = serde_json::to_vec_pretty(&eval.correlation)?;
            json.push(b'\n');
            write_file(&dir.join("correlation.json"), &json)?;
            match eval.correlation.spearman {
                Some(s) => println!("Spearman(bin, error rate) = {s:.4}"),
                None => {
                    println!("Spearman undefined (fewer than two nonempty bins or constant rates)")
                }
            }
            println!("{}", dir.display());
        }
        Command::Weightmap {
            cfg,
            checkpoint,
            split,
            scene,
            mask_epochs,
        } => {
            let config = cfg.load()?;
            let params = load_params(&checkpoint, &config)?;
            let data = load_data(&config, &cfg.source())?;
            let list = scenes(&data, split);
            let s = list.get(scene).ok_or_else(|| {
                CliError::Config(format!(
                    "scene: index {scene} but the split has {} scenes",
                    list.len()
                ))
            })?;
            let hash = eval_hash(
                &config,
                &checkpoint,
                split,
                &format!("weightmap:{scene}:{mask_epochs}"),
            )?;
            let dir = run_dir(root, "weightmap", &hash);
            export_weight_maps(&params, s, &config, mask_epochs, &dir)?;
            println!("{}", dir.display());
        }
        Command::Ablate {
            cfg,
            variants,
            seeds,
            jobs,
        } => {
            let config = cfg.load()?;
            let variants = if variants.is_empty() {
                Variant::TABLE.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| Variant::parse(v.trim()))
                    .collect::<Result<_, _>>()?
            };
            if seeds == 0 {
                return Err(CliError::Config("seeds: need at least one".into()).into());
            }
            let seed_list: Vec<u64> = (config.seed..config.seed + seeds).collect();
            let data = load_data(&config, &cfg.source())?;
            let table = ablate(&config, &data, &variants, &seed_list, jobs)?;
            let hash = hash_json(&serde_json::json!({
                "config": config,
                "variants": variants,
                "seeds": seed_list,
                "data": cfg.source(),
            }));
            let dir = run_dir(root, "ablate", &hash);
            write_file(&dir.join("table.csv"), table.to_csv().as_bytes())?;
            let mut json = serde_json::to_vec_pretty(&table)?;
            json.push(b'\n');
            write_file(&dir.join("ablation.json"), &json)?;
            println!("{:<16} {:>9} {:>8}", "variant", "mean IoU", "std");
            for r in &table.rows {
                println!("{:<16} {:>9.4} {:>8.4}", r.label, r.mean_iou, r.std_iou);
            }
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn write_map(grid: &Grid<f64>, path: &Path, v_max: f64) -> anyhow::Result<()> {
    Ok(write_pgm_scaled(grid, path, PgmDepth::Eight, v_max)?)
}

fn write_mask(mask: &Mask, path: &Path) -> anyhow::Result<()> {
    write_map(&mask.grid().map(|&b| if b { 1.0 } else { 0.0 }), path, 1.0)
}

/// Writes `R.pgm`, `Z.pgm`, `M.pgm` and `mask_eXXX.pgm` files for one scene.
/// Maps are scaled so the largest possible value is white.
pub fn export_weight_maps(
    params: &ParamStore,
    scene: &Scene,
    cfg: &RunConfig,
    mask_epochs: usize,
    dir: &Path,
) -> anyhow::Result<()> {
    let (labels, depth) = predict(params, &scene.rgb)?;
    export_prediction_maps(&labels, &depth, scene, cfg, mask_epochs, dir)
}

/// As [`export_weight_maps`], from predictions already made.
pub fn export_prediction_maps(
    labels: &SegLabelMap,
    depth: &LogDepthMap,
    scene: &Scene,
    cfg: &RunConfig,
    mask_epochs: usize,
    dir: &Path,
) -> anyhow::Result<()> {
    let targets = Targets::for_config(scene.labels.clone(), &scene.depth, &cfg.loss)?;
    let r = dpe_map(depth, &targets.log_depth)?;
    let z = dse_map(labels, &targets.labels, &targets.partition)?;
    let m: LossWeightMap = fuse(&r, &z, cfg.loss.fusion)?;
    write_map(r.grid(), &dir.join("R.pgm"), 1.0)?;
    write_map(z.grid(), &dir.join("Z.pgm"), 1.0)?;
    write_map(m.grid(), &dir.join("M.pgm"), cfg.loss.fusion.output_max())?;
    let total = cfg.train.epochs.max(1);
    let count = mask_epochs.min(total);
    for k in 0..count {
        // Evenly spaced from the first to the last training epoch.
        let epoch = if count == 1 {
            0
        } else {
            k * (total - 1) / (count - 1)
        };
        let pace = curriculum_pace_over(&m, targets.valid_mask(), epoch, total)?;
        write_mask(
            &curriculum_mask(&m, &pace),
            &dir.join(format!("mask_e{epoch:03}.pgm")),
        )?;
    }
    Ok(())
}
