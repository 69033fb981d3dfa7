//! Shared inputs for the benchmarks in `benches/`.

use hardpix::losses::{LossConfig, Targets};
use hardpix::synthdata::{generate_scene, Scene, SceneSpec};
use hardpix::tinynet::{forward, ForwardTrace, NetSpec, ParamStore};

/// One default-sized scene, an initialized network, and its outputs on the scene.
pub struct Fixture {
    pub scene: Scene,
    pub params: ParamStore,
    pub trace: ForwardTrace,
    pub loss: LossConfig,
    pub targets: Targets,
}

impl Fixture {
    pub fn new() -> Self {
        let spec = SceneSpec::default();
        let scene = generate_scene(&spec, 0).expect("default spec is valid");
        let params = ParamStore::init(&NetSpec::default()).expect("default net is valid");
        let trace = forward(&params, &scene.rgb, true).expect("64x64 input");
        let loss = LossConfig::default();
        let targets = Targets::for_config(scene.labels.clone(), &scene.depth, &loss)
            .expect("matching shapes");
        Fixture {
            scene,
            params,
            trace,
            loss,
            targets,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
