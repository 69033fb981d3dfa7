//! Small encoder-decoder network with a shared encoder, a depth decoder whose
//! stage outputs are added into the segmentation decoder, four side outputs,
//! and hand-written reverse-mode gradients.

mod checkpoint;
pub mod layers;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use train::{
    evaluate, predict, train, EpochLog, EvalReport, LrSchedule, TrainConfig, TrainOutcome,
    ValSummary, LR_PATIENCE, LR_REL_TOLERANCE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{log_depth_max, Grid, LogDepthMap, SegProbMap};
use crate::io::RgbImage;
use crate::losses::{HeadGrads, SIDE_OUTPUTS};
use layers::{
    conv_backward, conv_forward, relu_backward_in_place, relu_in_place, upsample_bilinear,
    upsample_bilinear_backward, ConvShape, Tensor,
};

pub const ENCODER_STAGES: usize = 4;
/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << ENCODER_STAGES;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub in_channels: usize,
    pub base_width: usize,
    pub classes: usize,
    pub init_seed: u64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            in_channels: 3,
            base_width: 8,
            classes: 6,
            init_seed: 0,
        }
    }
}

// Layer order is part of the checkpoint layout.
const ENC: usize = 0;
const DEPTH_DEC: usize = 4;
const SEG_DEC: usize = 8;
const SIDE: usize = 12;
const HEAD: usize = 16;
const DEPTH_HEAD: usize = 17;
const LAYERS: usize = 18;

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::invalid("net.in_channels", "must be positive"));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("net.base_width", "must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("net.classes", "need at least two classes"));
        }
        Ok(())
    }

    /// Channel widths of the four encoder stages.
    pub fn encoder_widths(&self) -> [usize; ENCODER_STAGES] {
        let w = self.base_width;
        [w, 2 * w, 2 * w, 2 * w]
    }

    /// Output width of decoder stage `k` (0-based): it matches the encoder
    /// skip it is added to at the next stage.
    fn decoder_width(&self, k: usize) -> usize {
        let enc = self.encoder_widths();
        if k + 1 < ENCODER_STAGES {
            enc[ENCODER_STAGES - 2 - k]
        } else {
            self.base_width
        }
    }

    fn layer_shapes(&self) -> Vec<(String, ConvShape)> {
        let enc = self.encoder_widths();
        let conv = |in_c, out_c, k, stride| ConvShape {
            in_c,
            out_c,
            k,
            stride,
        };
        let mut out = Vec::with_capacity(LAYERS);
        let mut prev = self.in_channels;
        for (k, &w) in enc.iter().enumerate() {
            out.push((format!("enc{}", k + 1), conv(prev, w, 3, 2)));
            prev = w;
        }
        for prefix in ["depth_dec", "seg_dec"] {
            let mut prev = enc[ENCODER_STAGES - 1];
            for k in 0..ENCODER_STAGES {
                let w = self.decoder_width(k);
                out.push((format!("{prefix}{}", k + 1), conv(prev, w, 3, 1)));
                prev = w;
            }
        }
        for k in 0..SIDE_OUTPUTS {
            out.push((
                format!("side{}", k + 1),
                conv(self.decoder_width(k), self.classes, 1, 1),
            ));
        }
        out.push(("head".into(), conv(self.base_width, self.classes, 3, 1)));
        out.push(("depth_head".into(), conv(self.base_width, 1, 1, 1)));
        debug_assert_eq!(out.len(), LAYERS);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// Every kernel and bias of the network plus a momentum buffer per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    spec: NetSpec,
    shapes: Vec<ConvShape>,
    tensors: Vec<NamedTensor>,
    momentum: Vec<Vec<f64>>,
}

impl ParamStore {
    /// He-style fan-in uniform initialization from `spec.init_seed`; biases
    /// start at zero except the depth head, which starts mid-range.
    pub fn init(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut store = Self::zeros(spec)?;
        for (l, shape) in store.shapes.clone().iter().enumerate() {
            let bound = (6.0 / shape.fan_in() as f64).sqrt();
            for v in &mut store.tensors[2 * l].values {
                *v = rng.gen_range(-bound..bound);
            }
        }
        store.tensors[2 * DEPTH_HEAD + 1].values[0] = log_depth_max() / 2.0;
        Ok(store)
    }

    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut shapes = Vec::with_capacity(LAYERS);
        let mut tensors = Vec::with_capacity(2 * LAYERS);
        for (name, s) in spec.layer_shapes() {
            tensors.push(NamedTensor {
                name: format!("{name}.weight"),
                dims: vec![s.out_c, s.in_c, s.k, s.k],
                values: vec![0.0; s.weight_len()],
            });
            tensors.push(NamedTensor {
                name: format!("{name}.bias"),
                dims: vec![s.out_c],
                values: vec![0.0; s.out_c],
            });
            shapes.push(s);
        }
        let momentum = tensors.iter().map(|t| vec![0.0; t.values.len()]).collect();
        Ok(ParamStore {
            spec: spec.clone(),
            shapes,
            tensors,
            momentum,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].values
    }

    pub fn momentum(&self) -> &[Vec<f64>] {
        &self.momentum
    }

    pub fn reset_momentum(&mut self) {
        for m in &mut self.momentum {
            m.fill(0.0);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Replaces all values from an ordered list of named tensors.
    pub fn load_tensors(&mut self, tensors: Vec<NamedTensor>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (have, new) in self.tensors.iter().zip(&tensors) {
            if have.name != new.name || have.dims != new.dims {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    new.name, new.dims, have.name, have.dims
                )));
            }
        }
        self.tensors = tensors;
        self.reset_momentum();
        Ok(())
    }

    fn weight(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer].values
    }

    fn bias(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer + 1].values
    }

    fn conv(&self, layer: usize, x: &Tensor) -> Tensor {
        conv_forward(x, self.weight(layer), self.bias(layer), self.shapes[layer])
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|t| vec![0.0; t.values.len()])
                .collect(),
        }
    }
}

/// Parameter gradients laid out like [`ParamStore::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t {
                *v *= s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }
}

/// Momentum SGD: `v = momentum * v + g + weight_decay * p; p -= lr * v`.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.tensors.len() != params.tensors.len() {
        return Err(Error::ShapeMismatch {
            expected: (params.tensors.len(), 1),
            actual: (grads.tensors.len(), 1),
        });
    }
    for (t, g) in params.tensors.iter().zip(&grads.tensors) {
        if t.values.len() != g.len() {
            return Err(Error::ShapeMismatch {
                expected: (t.values.len(), 1),
                actual: (g.len(), 1),
            });
        }
    }
    for ((t, v), g) in params
        .tensors
        .iter_mut()
        .zip(&mut params.momentum)
        .zip(&grads.tensors)
    {
        for ((p, vi), &gi) in t.values.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi + weight_decay * *p;
            *p -= lr * *vi;
        }
    }
    Ok(())
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
struct Caches {
    input: Tensor,
    enc: Vec<Tensor>,
    depth_in: Vec<Tensor>,
    depth_out: Vec<Tensor>,
    seg_in: Vec<Tensor>,
    seg_relu: Vec<Tensor>,
    seg_out: Vec<Tensor>,
    /// Upsampled depth before clamping.
    raw_depth: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Pixel-major `H x W x C` logits of the final output.
    pub main_logits: Vec<f64>,
    /// Four side logits, each upsampled to `H x W x C`.
    pub side_logits: Vec<Vec<f64>>,
    pub log_depth: LogDepthMap,
    caches: Option<Caches>,
}

impl ForwardTrace {
    pub fn main_probs(&self) -> Result<SegProbMap> {
        SegProbMap::from_logits(self.height, self.width, self.classes, &self.main_logits)
    }

    pub fn side_probs(&self) -> Result<Vec<SegProbMap>> {
        self.side_logits
            .iter()
            .map(|l| SegProbMap::from_logits(self.height, self.width, self.classes, l))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.main_logits
            .iter()
            .chain(self.side_logits.iter().flatten())
            .chain(self.log_depth.as_slice())
            .all(|v| v.is_finite())
    }

    pub fn has_caches(&self) -> bool {
        self.caches.is_some()
    }
}

fn up2(x: &Tensor) -> Tensor {
    upsample_bilinear(x, 2 * x.h, 2 * x.w)
}

/// Runs the network. With `keep_caches` false the trace cannot be used for
/// [`backward`].
pub fn forward(params: &ParamStore, image: &RgbImage, keep_caches: bool) -> Result<ForwardTrace> {
    let (h, w) = (image.height, image.width);
    if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(Error::invalid(
            "image",
            format!("{h}x{w} is not a positive multiple of {SIZE_MULTIPLE} in each dimension"),
        ));
    }
    let spec = &params.spec;
    if spec.in_channels != 3 {
        return Err(Error::invalid(
            "net.in_channels",
            "RGB input needs 3 channels",
        ));
    }
    let centered: Vec<f64> = image.data.iter().map(|v| v - 0.5).collect();
    let input = Tensor::from_pixel_major(3, h, w, &centered);

    let mut enc = Vec::with_capacity(ENCODER_STAGES);
    for k in 0..ENCODER_STAGES {
        let mut e = params.conv(ENC + k, enc.last().unwrap_or(&input));
        relu_in_place(&mut e);
        enc.push(e);
    }

    let mut depth_in = Vec::with_capacity(ENCODER_STAGES);
    let mut depth_out: Vec<Tensor> = Vec::with_capacity(ENCODER_STAGES);
    let mut seg_in = Vec::with_capacity(ENCODER_STAGES);
    let mut seg_relu = Vec::with_capacity(ENCODER_STAGES);
    let mut seg_out: Vec<Tensor> = Vec::with_capacity(ENCODER_STAGES);
    for k in 0..ENCODER_STAGES {
        let skip = &enc[ENCODER_STAGES - 1 - k];
        let (dx, sx) = if k == 0 {
            (skip.clone(), skip.clone())
        } else {
            (
                up2(&depth_out[k - 1]).added(skip),
                up2(&seg_out[k - 1]).added(skip),
            )
        };
        let mut dd = params.conv(DEPTH_DEC + k, &dx);
        relu_in_place(&mut dd);
        let mut r = params.conv(SEG_DEC + k, &sx);
        relu_in_place(&mut r);
        let t = r.added(&dd);
        depth_in.push(dx);
        depth_out.push(dd);
        seg_in.push(sx);
        seg_relu.push(r);
        seg_out.push(t);
    }

    let side_logits = (0..SIDE_OUTPUTS)
        .map(|k| upsample_bilinear(&params.conv(SIDE + k, &seg_out[k]), h, w).to_pixel_major())
        .collect();
    let main_logits =
        upsample_bilinear(&params.conv(HEAD, &seg_out[ENCODER_STAGES - 1]), h, w).to_pixel_major();
    let raw_depth = upsample_bilinear(
        &params.conv(DEPTH_HEAD, &depth_out[ENCODER_STAGES - 1]),
        h,
        w,
    )
    .data;
    let lmax = log_depth_max();
    let log_depth = LogDepthMap::new_unchecked(Grid::new(
        h,
        w,
        raw_depth.iter().map(|v| v.clamp(0.0, lmax)).collect(),
    )?);

    let caches = keep_caches.then_some(Caches {
        input,
        enc,
        depth_in,
        depth_out,
        seg_in,
        seg_relu,
        seg_out,
        raw_depth,
    });
    Ok(ForwardTrace {
        height: h,
        width: w,
        classes: spec.classes,
        main_logits,
        side_logits,
        log_depth,
        caches,
    })
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: (expected, 1),
            actual: (actual, 1),
        });
    }
    Ok(())
}

/// Head-gradient tensor at full resolution, pulled back through the final
/// upsample and a head convolution. Returns the gradient for the head input.
fn head_backward(
    params: &ParamStore,
    grads: &mut Gradients,
    layer: usize,
    input: &Tensor,
    grad_full: Tensor,
) -> Tensor {
    let g = upsample_bilinear_backward(&grad_full, input.h, input.w);
    let (gw, gb) = grads.layer_mut(layer);
    conv_backward(
        input,
        &g,
        params.weight(layer),
        params.shapes[layer],
        gw,
        gb,
        true,
    )
    .expect("input gradient requested")
}

/// Parameter gradients of a scalar loss given its gradients at the heads.
/// Side gradients may be empty when no side term is active.
pub fn backward(params: &ParamStore, trace: &ForwardTrace, head: &HeadGrads) -> Result<Gradients> {
    let c = trace
        .caches
        .as_ref()
        .ok_or_else(|| Error::invalid("trace", "forward pass was run without caches"))?;
    let (h, w, classes) = (trace.height, trace.width, trace.classes);
    check_len(h * w * classes, head.main.len())?;
    check_len(h * w, head.depth.len())?;
    if !head.sides.is_empty() {
        check_len(SIDE_OUTPUTS, head.sides.len())?;
        for s in &head.sides {
            check_len(h * w * classes, s.len())?;
        }
    }

    let mut grads = params.zero_grads();
    let last = ENCODER_STAGES - 1;

    // Heads.
    let mut g_seg_out: Vec<Tensor> = c
        .seg_out
        .iter()
        .map(|t| Tensor::zeros(t.c, t.h, t.w))
        .collect();
    let mut g_depth_out: Vec<Tensor> = c
        .depth_out
        .iter()
        .map(|t| Tensor::zeros(t.c, t.h, t.w))
        .collect();
    let g = head_backward(
        params,
        &mut grads,
        HEAD,
        &c.seg_out[last],
        Tensor::from_pixel_major(classes, h, w, &head.main),
    );
    g_seg_out[last].add_assign(&g);
    for (k, gs) in head.sides.iter().enumerate() {
        let g = head_backward(
            params,
            &mut grads,
            SIDE + k,
            &c.seg_out[k],
            Tensor::from_pixel_major(classes, h, w, gs),
        );
        g_seg_out[k].add_assign(&g);
    }
    let lmax = log_depth_max();
    let g_depth_full = Tensor {
        c: 1,
        h,
        w,
        data: head
            .depth
            .iter()
            .zip(&c.raw_depth)
            .map(|(&g, &v)| if (0.0..=lmax).contains(&v) { g } else { 0.0 })
            .collect(),
    };
    let g = head_backward(
        params,
        &mut grads,
        DEPTH_HEAD,
        &c.depth_out[last],
        g_depth_full,
    );
    g_depth_out[last].add_assign(&g);

    // Segmentation decoder, last stage first.
    let mut g_enc: Vec<Tensor> = c.enc.iter().map(|t| Tensor::zeros(t.c, t.h, t.w)).collect();
    for k in (0..ENCODER_STAGES).rev() {
        let g_t = std::mem::replace(&mut g_seg_out[k], Tensor::zeros(0, 0, 0));
        g_depth_out[k].add_assign(&g_t);
        let mut g_r = g_t;
        relu_backward_in_place(&c.seg_relu[k], &mut g_r);
        let (gw, gb) = grads.layer_mut(SEG_DEC + k);
        let layer = SEG_DEC + k;
        let g_in = conv_backward(
            &c.seg_in[k],
            &g_r,
            params.weight(layer),
            params.shapes[layer],
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        g_enc[ENCODER_STAGES - 1 - k].add_assign(&g_in);
        if k > 0 {
            let prev = &c.seg_out[k - 1];
            g_seg_out[k - 1].add_assign(&upsample_bilinear_backward(&g_in, prev.h, prev.w));
        }
    }

    // Depth decoder.
    for k in (0..ENCODER_STAGES).rev() {
        let mut g_d = std::mem::replace(&mut g_depth_out[k], Tensor::zeros(0, 0, 0));
        relu_backward_in_place(&c.depth_out[k], &mut g_d);
        let layer = DEPTH_DEC + k;
        let (gw, gb) = grads.layer_mut(layer);
        let g_in = conv_backward(
            &c.depth_in[k],
            &g_d,
            params.weight(layer),
            params.shapes[layer],
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        g_enc[ENCODER_STAGES - 1 - k].add_assign(&g_in);
        if k > 0 {
            let prev = &c.depth_out[k - 1];
            g_depth_out[k - 1].add_assign(&upsample_bilinear_backward(&g_in, prev.h, prev.w));
        }
    }

    // Encoder.
    for k in (0..ENCODER_STAGES).rev() {
        let mut g_e = std::mem::replace(&mut g_enc[k], Tensor::zeros(0, 0, 0));
        relu_backward_in_place(&c.enc[k], &mut g_e);
        let input = if k == 0 { &c.input } else { &c.enc[k - 1] };
        let layer = ENC + k;
        let (gw, gb) = grads.layer_mut(layer);
        let g_in = conv_backward(
            input,
            &g_e,
            params.weight(layer),
            params.shapes[layer],
            gw,
            gb,
            k > 0,
        );
        if let Some(g_in) = g_in {
            g_enc[k - 1].add_assign(&g_in);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(
            h,
            w,
            (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn spec(width: usize) -> NetSpec {
        NetSpec {
            base_width: width,
            classes: 3,
            init_seed: 5,
            ..NetSpec::default()
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = ParamStore::zeros(&spec(2)).unwrap();
        let t = forward(&p, &image(16, 16, 1), false).unwrap();
        assert!(t.main_logits.iter().all(|&v| v == 0.0));
        let probs = t.main_probs().unwrap();
        assert!(probs
            .as_slice()
            .iter()
            .all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(t.side_logits.len(), SIDE_OUTPUTS);
    }

    #[test]
    fn shapes_and_depth_range() {
        let p = ParamStore::init(&spec(2)).unwrap();
        let t = forward(&p, &image(32, 16, 2), true).unwrap();
        assert_eq!(t.main_logits.len(), 32 * 16 * 3);
        for s in &t.side_logits {
            assert_eq!(s.len(), t.main_logits.len());
        }
        assert!(t
            .log_depth
            .as_slice()
            .iter()
            .all(|&v| (0.0..=log_depth_max()).contains(&v)));
    }

    #[test]
    fn rejects_indivisible_input() {
        let p = ParamStore::init(&spec(2)).unwrap();
        assert!(forward(&p, &image(8, 8, 3), false).is_err());
        assert!(forward(&p, &image(16, 24, 3), false).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let p = ParamStore::init(&spec(3)).unwrap();
        let img = image(16, 16, 4);
        let a = forward(&p, &img, false).unwrap();
        let b = forward(&ParamStore::init(&spec(3)).unwrap(), &img, false).unwrap();
        assert_eq!(a.main_logits, b.main_logits);
        assert_eq!(a.log_depth, b.log_depth);
    }

    #[test]
    fn backward_needs_caches() {
        let p = ParamStore::init(&spec(2)).unwrap();
        let t = forward(&p, &image(16, 16, 5), false).unwrap();
        let hg = HeadGrads {
            main: vec![0.0; 16 * 16 * 3],
            sides: vec![],
            depth: vec![0.0; 256],
        };
        assert!(backward(&p, &t, &hg).is_err());
    }

    #[test]
    fn zero_head_gradients_give_zero_grads() {
        let p = ParamStore::init(&spec(2)).unwrap();
        let t = forward(&p, &image(16, 16, 6), true).unwrap();
        let hg = HeadGrads {
            main: vec![0.0; 16 * 16 * 3],
            sides: vec![vec![0.0; 16 * 16 * 3]; 4],
            depth: vec![0.0; 256],
        };
        assert!(backward(&p, &t, &hg).unwrap().is_zero());
    }

    #[test]
    fn sgd_plain_and_zero_lr() {
        let mut p = ParamStore::init(&spec(2)).unwrap();
        let before = p.clone();
        let mut g = p.zero_grads();
        for t in &mut g.tensors {
            t.fill(0.5);
        }
        sgd_step(&mut p, &g, 0.0, 0.9, 5e-4).unwrap();
        assert_eq!(p.tensors, before.tensors);

        let mut p = before.clone();
        sgd_step(&mut p, &g, 0.1, 0.0, 0.0).unwrap();
        for (a, b) in p.tensors.iter().zip(&before.tensors) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(*x, y - 0.1 * 0.5);
            }
        }
    }

    #[test]
    fn sgd_rejects_mismatched_grads() {
        let mut p = ParamStore::init(&spec(2)).unwrap();
        let mut g = p.zero_grads();
        g.tensors[0].pop();
        assert!(sgd_step(&mut p, &g, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn side_count_is_four() {
        assert_eq!(
            spec(2)
                .layer_shapes()
                .iter()
                .filter(|(n, _)| n.starts_with("side"))
                .count(),
            4
        );
    }
}
