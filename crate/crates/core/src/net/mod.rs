//! Factorized (2+1)D residual video classifier.
//!
//! Every t×d×d convolution is split into a 1×d×d spatial convolution into
//! `M` midplane channels, batch-norm, activation, and a t×1×1 temporal
//! convolution. Stages after the first downsample by 2 on every axis with
//! strided convolutions; there is no max pooling. Global average pooling
//! feeds a linear head, and the pooled vector is the feature tap.

pub mod checkpoint;
pub mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ConvGeometry, NormMode, ParamId, ParamStore, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use config::{midplane_channels, Activation, NetworkConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch-norm layer: trainable scale/shift plus running statistics.
#[derive(Clone, Debug)]
pub struct NormLayer<T = f32> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: RunningStats<T>,
}

impl<T: Real> NormLayer<T> {
    fn cast<U: Real>(&self) -> NormLayer<U> {
        NormLayer {
            name: self.name.clone(),
            gamma: self.gamma,
            beta: self.beta,
            stats: self.stats.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Factorized {
    spatial: ParamId,
    mid_norm: usize,
    temporal: ParamId,
    spatial_geom: ConvGeometry,
    temporal_geom: ConvGeometry,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    conv1: Factorized,
    norm1: usize,
    conv2: Factorized,
    norm2: usize,
    shortcut: Option<(ParamId, usize, ConvGeometry)>,
}

#[derive(Clone, Debug)]
struct Layers {
    stem: Factorized,
    stem_norm: usize,
    blocks: Vec<Block>,
    head_weight: ParamId,
    head_bias: ParamId,
}

/// A built classifier. Cloning it gives an independent weight snapshot.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    params: ParamStore<T>,
    norms: Vec<NormLayer<T>>,
    layers: Layers,
    pub frozen: bool,
}

/// What the activation layers do during a forward pass.
pub(crate) enum ActivationHook<'a, T> {
    Plain,
    /// Record each pre-activation tensor in execution order.
    Record(&'a mut Vec<Tensor<T>>),
    /// Replace the reverse rule of each activation by the Rescale multiplier
    /// against the matching recorded reference pre-activation.
    Rescale {
        reference: &'a [Tensor<T>],
        next: usize,
    },
}

enum Norms<'a, T> {
    Shared(&'a [NormLayer<T>]),
    Exclusive(&'a mut [NormLayer<T>]),
}

struct Ctx<'a, T> {
    params: &'a ParamStore<T>,
    norms: Norms<'a, T>,
    mode: Mode,
    activation: Activation,
    hook: ActivationHook<'a, T>,
}

impl<T: Real> Ctx<'_, T> {
    fn norm(&mut self, tape: &mut Tape<T>, x: Var, id: usize) -> Result<Var> {
        let layer = match &self.norms {
            Norms::Shared(n) => &n[id],
            Norms::Exclusive(n) => &n[id],
        };
        let gamma = tape.param(self.params, layer.gamma);
        let beta = tape.param(self.params, layer.beta);
        let mode = match (self.mode, &mut self.norms) {
            (Mode::Train, Norms::Exclusive(n)) => NormMode::Train(Some(&mut n[id].stats)),
            (Mode::Train, Norms::Shared(_)) => NormMode::Train(None),
            (Mode::Infer, Norms::Exclusive(n)) => NormMode::Infer(&n[id].stats),
            (Mode::Infer, Norms::Shared(n)) => NormMode::Infer(&n[id].stats),
        };
        tape.batch_norm(x, gamma, beta, mode)
    }

    fn activate(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.activation == Activation::Identity {
            return Ok(x);
        }
        match &mut self.hook {
            ActivationHook::Plain => Ok(tape.relu(x)),
            ActivationHook::Record(out) => {
                out.push(tape.value(x).clone());
                Ok(tape.relu(x))
            }
            ActivationHook::Rescale { reference, next } => {
                let r = reference
                    .get(*next)
                    .ok_or_else(|| Error::Shape("reference pass recorded fewer activations".into()))?;
                *next += 1;
                let pre = tape.value(x);
                let value = pre.map(|v| v.max(T::zero()));
                let multiplier = crate::deeplift::rescale_multipliers(pre, r)?;
                tape.scaled(x, value, multiplier)
            }
        }
    }

    fn factorized(&mut self, tape: &mut Tape<T>, x: Var, f: &Factorized) -> Result<Var> {
        let ws = tape.param(self.params, f.spatial);
        let h = tape.conv3d(x, ws, f.spatial_geom)?;
        let h = self.norm(tape, h, f.mid_norm)?;
        let h = self.activate(tape, h)?;
        let wt = tape.param(self.params, f.temporal);
        tape.conv3d(h, wt, f.temporal_geom)
    }
}

/// Recorded outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub input: Var,
    pub features: Var,
    pub logits: Var,
}

fn run<T: Real>(layers: &Layers, ctx: &mut Ctx<'_, T>, tape: &mut Tape<T>, x: Var) -> Result<ForwardVars> {
    let mut h = ctx.factorized(tape, x, &layers.stem)?;
    h = ctx.norm(tape, h, layers.stem_norm)?;
    h = ctx.activate(tape, h)?;
    for b in &layers.blocks {
        let mut y = ctx.factorized(tape, h, &b.conv1)?;
        y = ctx.norm(tape, y, b.norm1)?;
        y = ctx.activate(tape, y)?;
        y = ctx.factorized(tape, y, &b.conv2)?;
        y = ctx.norm(tape, y, b.norm2)?;
        let skip = match &b.shortcut {
            Some((w, norm, geom)) => {
                let wv = tape.param(ctx.params, *w);
                let s = tape.conv3d(h, wv, *geom)?;
                ctx.norm(tape, s, *norm)?
            }
            None => h,
        };
        let sum = tape.add(y, skip)?;
        h = ctx.activate(tape, sum)?;
    }
    let features = tape.global_avg_pool(h)?;
    let w = tape.param(ctx.params, layers.head_weight);
    let b = tape.param(ctx.params, layers.head_bias);
    let logits = tape.affine(features, w, b)?;
    Ok(ForwardVars {
        input: x,
        features,
        logits,
    })
}

struct Builder<'a> {
    params: ParamStore<f32>,
    norms: Vec<NormLayer<f32>>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, shape: [usize; 5]) -> Result<ParamId> {
        let fan_in = (shape[1] * shape[2] * shape[3] * shape[4]) as f32;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let data = (0..shape.iter().product()).map(|_| dist.sample(self.rng)).collect();
        self.params
            .add(format!("{name}.weight"), Tensor::from_vec(shape.to_vec(), data)?)
    }

    fn norm(&mut self, name: &str, channels: usize) -> Result<usize> {
        let gamma = self
            .params
            .add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?;
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        self.norms.push(NormLayer {
            name: name.to_string(),
            gamma,
            beta,
            stats: RunningStats::new(channels),
        });
        Ok(self.norms.len() - 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn factorized(
        &mut self,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        d: usize,
        t: usize,
        spatial_stride: usize,
        temporal_stride: usize,
    ) -> Result<Factorized> {
        let spatial = self.conv(&format!("{name}.spatial"), [mid, cin, 1, d, d])?;
        let mid_norm = self.norm(&format!("{name}.mid_bn"), mid)?;
        let temporal = self.conv(&format!("{name}.temporal"), [cout, mid, t, 1, 1])?;
        Ok(Factorized {
            spatial,
            mid_norm,
            temporal,
            spatial_geom: ConvGeometry::new([1, spatial_stride, spatial_stride], [0, d / 2, d / 2]),
            temporal_geom: ConvGeometry::new([temporal_stride, 1, 1], [t / 2, 0, 0]),
        })
    }
}

/// Build a network with He fan-in initialization drawn from `seed`.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        params: ParamStore::new(),
        norms: Vec::new(),
        rng: &mut rng,
    };
    let (d, t) = (cfg.spatial_kernel, cfg.temporal_kernel);
    let c0 = cfg.stage_channels[0];
    let stem = b.factorized(
        "stem",
        cfg.input_shape[0],
        cfg.stem_midplane,
        c0,
        cfg.stem_kernel,
        t,
        cfg.stem_stride,
        1,
    )?;
    let stem_norm = b.norm("stem.bn", c0)?;

    let mut blocks = Vec::new();
    let mut cin = c0;
    for (s, (&cout, &nblocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for k in 0..nblocks {
            let stride = if s > 0 && k == 0 { 2 } else { 1 };
            let name = format!("stage{}.block{}", s + 1, k);
            let m1 = midplane_channels(t, d, cin, cout);
            let conv1 = b.factorized(&format!("{name}.conv1"), cin, m1, cout, d, t, stride, stride)?;
            let norm1 = b.norm(&format!("{name}.bn1"), cout)?;
            let m2 = midplane_channels(t, d, cout, cout);
            let conv2 = b.factorized(&format!("{name}.conv2"), cout, m2, cout, d, t, 1, 1)?;
            let norm2 = b.norm(&format!("{name}.bn2"), cout)?;
            let shortcut = if stride != 1 || cin != cout {
                let w = b.conv(&format!("{name}.downsample"), [cout, cin, 1, 1, 1])?;
                let n = b.norm(&format!("{name}.downsample_bn"), cout)?;
                Some((w, n, ConvGeometry::new([stride; 3], [0; 3])))
            } else {
                None
            };
            blocks.push(Block {
                conv1,
                norm1,
                conv2,
                norm2,
                shortcut,
            });
            cin = cout;
        }
    }

    let fd = cfg.feature_dim();
    let bound = 1.0 / (fd as f32).sqrt();
    let head_data = (0..cfg.num_classes * fd)
        .map(|_| b.rng.random_range(-bound..bound))
        .collect();
    let head_weight = b
        .params
        .add("head.weight", Tensor::from_vec(vec![cfg.num_classes, fd], head_data)?)?;
    let head_bias = b.params.add("head.bias", Tensor::zeros(&[cfg.num_classes]))?;

    let Builder { params, norms, .. } = b;
    Ok(Network {
        config: cfg.clone(),
        params,
        norms,
        layers: Layers {
            stem,
            stem_norm,
            blocks,
            head_weight,
            head_bias,
        },
        frozen: false,
    })
}

impl<T: Real> Network<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn norms(&self) -> &[NormLayer<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormLayer<T>] {
        &mut self.norms
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            norms: self.norms.iter().map(NormLayer::cast).collect(),
            layers: self.layers.clone(),
            frozen: self.frozen,
        }
    }

    /// Check a `[N, C, T, H, W]` batch against the configured input shape.
    pub fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 5 || s[1..] != self.config.input_shape {
            return Err(Error::Shape(format!(
                "expected batch of [N, {}], got {s:?}",
                self.config
                    .input_shape
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(())
    }

    pub(crate) fn record_infer(
        &self,
        tape: &mut Tape<T>,
        batch: Tensor<T>,
        hook: ActivationHook<'_, T>,
    ) -> Result<ForwardVars> {
        self.check_input(&batch)?;
        let mut ctx = Ctx {
            params: &self.params,
            norms: Norms::Shared(&self.norms),
            mode: Mode::Infer,
            activation: self.config.activation,
            hook,
        };
        let x = tape.input(batch);
        run(&self.layers, &mut ctx, tape, x)
    }

    /// Record a training-mode forward pass. Batch statistics are folded into
    /// the running estimates when `update_stats` is set.
    pub fn record_train(&mut self, tape: &mut Tape<T>, batch: Tensor<T>, update_stats: bool) -> Result<ForwardVars> {
        self.check_input(&batch)?;
        let norms = if update_stats {
            Norms::Exclusive(&mut self.norms)
        } else {
            Norms::Shared(&self.norms)
        };
        let mut ctx = Ctx {
            params: &self.params,
            norms,
            mode: Mode::Train,
            activation: self.config.activation,
            hook: ActivationHook::Plain,
        };
        let x = tape.input(batch);
        run(&self.layers, &mut ctx, tape, x)
    }

    /// Every activation's input, in execution order. Train mode uses batch
    /// statistics without touching the running estimates.
    pub fn preactivations(&self, batch: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        self.check_input(batch)?;
        let mut out = Vec::new();
        let mut ctx = Ctx {
            params: &self.params,
            norms: Norms::Shared(&self.norms),
            mode,
            activation: self.config.activation,
            hook: ActivationHook::Record(&mut out),
        };
        let mut tape = Tape::new();
        let x = tape.input(batch.clone());
        run(&self.layers, &mut ctx, &mut tape, x)?;
        drop(ctx);
        Ok(out)
    }

    /// Inference-mode logits `[N, num_classes]`.
    pub fn forward_logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.record_infer(&mut tape, batch.clone(), ActivationHook::Plain)?;
        Ok(tape.value(v.logits).clone())
    }

    /// Pooled activations before the head, `[N, feature_dim]`.
    pub fn extract_features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.record_infer(&mut tape, batch.clone(), ActivationHook::Plain)?;
        Ok(tape.value(v.features).clone())
    }

    /// Apply the classification head to pooled features.
    pub fn head(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        crate::autodiff::kernels::affine(
            features,
            &self.params.get(self.layers.head_weight).value,
            &self.params.get(self.layers.head_bias).value,
        )
    }

    /// Training-mode cross-entropy loss; gradients are accumulated into the
    /// parameters and running statistics are updated.
    pub fn train_step_grads(&mut self, batch: Tensor<T>, labels: &[usize]) -> Result<T> {
        let mut tape = Tape::new();
        let v = self.record_train(&mut tape, batch, true)?;
        let loss_var = tape.cross_entropy(v.logits, labels)?;
        let loss = tape.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss:?}")));
        }
        tape.backward(loss_var, &mut self.params)?;
        Ok(loss)
    }

    /// Inference-mode mean cross-entropy.
    pub fn eval_loss(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<T> {
        let logits = self.forward_logits(batch)?;
        Ok(crate::autodiff::kernels::softmax_cross_entropy(&logits, labels)?.0)
    }
}

/// Weights of one standalone factorized convolution.
#[derive(Clone, Debug)]
pub struct FactorizedConv<T = f32> {
    /// `[M, Cin, 1, d, d]`
    pub spatial: Tensor<T>,
    /// `[Cout, M, t, 1, 1]`
    pub temporal: Tensor<T>,
    /// Spatial stride (H, W) and temporal stride.
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    /// Inference-mode norm `(γ, β, running stats)` between the two halves;
    /// `None` disables it.
    pub norm: Option<(Tensor<T>, Tensor<T>, RunningStats<T>)>,
    pub activation: Activation,
}

/// `temporal(activation(norm(spatial(x))))` with zero "same" padding.
pub fn conv2plus1d_forward<T: Real>(x: &Tensor<T>, block: &FactorizedConv<T>) -> Result<Tensor<T>> {
    let [_, cin, _, _, _] = crate::autodiff::kernels::dims5(x, "input")?;
    let [mid, cin_w, kt1, d, d2] = crate::autodiff::kernels::dims5(&block.spatial, "spatial weight")?;
    let [_, mid_t, t, kh, kw] = crate::autodiff::kernels::dims5(&block.temporal, "temporal weight")?;
    if cin != cin_w {
        return Err(Error::Shape(format!("input has {cin} channels, block expects {cin_w}")));
    }
    if kt1 != 1 || kh != 1 || kw != 1 || d != d2 || mid != mid_t {
        return Err(Error::Shape("malformed factorized kernels".into()));
    }
    if d % 2 == 0 || t % 2 == 0 {
        return Err(Error::Shape("kernel extents must be odd".into()));
    }
    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let ws = store.add("spatial", block.spatial.clone())?;
    let wt = store.add("temporal", block.temporal.clone())?;
    let wsv = tape.param(&store, ws);
    let s = block.spatial_stride;
    let mut h = tape.conv3d(xv, wsv, ConvGeometry::new([1, s, s], [0, d / 2, d / 2]))?;
    if let Some((g, b, stats)) = &block.norm {
        let gid = store.add("gamma", g.clone())?;
        let bid = store.add("beta", b.clone())?;
        let gv = tape.param(&store, gid);
        let bv = tape.param(&store, bid);
        h = tape.batch_norm(h, gv, bv, NormMode::Infer(stats))?;
    }
    if block.activation == Activation::Relu {
        h = tape.relu(h);
    }
    let wtv = tape.param(&store, wt);
    let y = tape.conv3d(h, wtv, ConvGeometry::new([block.temporal_stride, 1, 1], [t / 2, 0, 0]))?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            input_shape: [1, 6, 16, 16],
            stem_stride: 2,
            ..NetworkConfig::desk()
        }
    }

    fn random_clip(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_names_unique_and_logits_shaped() {
        let net = build_network(&tiny_cfg(), 1).unwrap();
        let mut names: Vec<_> = net.params().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        let logits = net.forward_logits(&random_clip(&[2, 1, 6, 16, 16], 3)).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = build_network(&tiny_cfg(), 5).unwrap();
        let logits = net.forward_logits(&random_clip(&[3, 1, 6, 16, 16], 4)).unwrap();
        for row in logits.data().chunks(3) {
            let m = row.iter().cloned().fold(f32::MIN, f32::max);
            let z: f64 = row.iter().map(|&v| ((v - m) as f64).exp()).sum();
            let s: f64 = row.iter().map(|&v| ((v - m) as f64).exp() / z).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut net = build_network(&tiny_cfg(), 2).unwrap();
        for p in net.params_mut().iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_clip(&[1, 1, 6, 16, 16], 9);
        let logits = net.forward_logits(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == logits.data()[0]));
        assert!(net
            .extract_features(&Tensor::zeros(&[1, 1, 6, 16, 16]))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let x = random_clip(&[2, 1, 6, 16, 16], 11);
        let a = build_network(&cfg, 42).unwrap().forward_logits(&x).unwrap();
        let b = build_network(&cfg, 42).unwrap().forward_logits(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn head_of_features_equals_logits() {
        let net = build_network(&tiny_cfg(), 8).unwrap();
        let x = random_clip(&[2, 1, 6, 16, 16], 12);
        let f = net.extract_features(&x).unwrap();
        assert_eq!(f.shape(), &[2, 8]);
        let via_head = net.head(&f).unwrap();
        let logits = net.forward_logits(&x).unwrap();
        for (a, b) in via_head.data().iter().zip(logits.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = build_network(&tiny_cfg(), 1).unwrap();
        assert!(matches!(
            net.forward_logits(&Tensor::zeros(&[1, 1, 6, 16, 15])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn default_config_stage_shapes() {
        // 30×112×112 → stem (1,2,2) → 30×56×56 → 15×28×28 → 8×14×14 → 4×7×7
        let cfg = NetworkConfig::default();
        let mut ext = [cfg.input_shape[1], cfg.input_shape[2], cfg.input_shape[3]];
        let stem = ConvGeometry::new([1, 2, 2], [0, 3, 3]);
        ext = stem.output_extents(ext, [1, 7, 7]).unwrap();
        assert_eq!(ext, [30, 56, 56]);
        let mut seen = vec![];
        for s in 1..cfg.stage_channels.len() {
            let _ = s;
            let spatial = ConvGeometry::new([1, 2, 2], [0, 1, 1]);
            let temporal = ConvGeometry::new([2, 1, 1], [1, 0, 0]);
            ext = spatial.output_extents(ext, [1, 3, 3]).unwrap();
            ext = temporal.output_extents(ext, [3, 1, 1]).unwrap();
            seen.push(ext);
        }
        assert_eq!(seen, vec![[15, 28, 28], [8, 14, 14], [4, 7, 7]]);
    }

    #[test]
    fn desk_network_final_grid() {
        let cfg = NetworkConfig::desk();
        let net = build_network(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let v = net
            .record_infer(&mut tape, Tensor::zeros(&[1, 1, 30, 112, 112]), ActivationHook::Plain)
            .unwrap();
        assert_eq!(tape.value(v.features).shape(), &[1, 8]);
    }

    #[test]
    fn zero_block_is_identity_on_nonnegative_input() {
        // one residual block with equal widths, all conv weights zero, β = 0
        let cfg = NetworkConfig {
            stage_channels: vec![2],
            blocks_per_stage: vec![1],
            input_shape: [1, 4, 6, 6],
            stem_stride: 1,
            ..NetworkConfig::desk()
        };
        let mut net = build_network(&cfg, 3).unwrap();
        for p in net.params_mut().iter_mut() {
            if p.name.starts_with("stage1") && p.name.ends_with(".weight") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let block = net.layers.blocks[0];
        assert!(block.shortcut.is_none());
        let h = random_clip(&[1, 2, 4, 6, 6], 5);
        let mut tape = Tape::new();
        let hv = tape.input(h.clone());
        let mut ctx = Ctx {
            params: &net.params,
            norms: Norms::Shared(&net.norms),
            mode: Mode::Infer,
            activation: Activation::Relu,
            hook: ActivationHook::Plain,
        };
        let mut y = ctx.factorized(&mut tape, hv, &block.conv1).unwrap();
        y = ctx.norm(&mut tape, y, block.norm1).unwrap();
        y = ctx.activate(&mut tape, y).unwrap();
        y = ctx.factorized(&mut tape, y, &block.conv2).unwrap();
        y = ctx.norm(&mut tape, y, block.norm2).unwrap();
        let s = tape.add(y, hv).unwrap();
        let out = ctx.activate(&mut tape, s).unwrap();
        assert_eq!(tape.value(out), &h);
    }
}
