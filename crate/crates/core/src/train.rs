//! Stratified splitting, Adam, the epoch loop and early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::preprocess::{training_view, AugmentRange, ClipMode};
use crate::rng::{sample_stream, stage_stream};
use crate::tensor::{Real, Tensor};

/// Round `num / den` to the nearest integer, ties to even.
fn div_round_half_even(num: u128, den: u128) -> u128 {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q % 2),
    }
}

const FRACTION_SCALE: u128 = 1_000_000;

fn fraction_parts(fractions: [f64; 3]) -> Result<[u128; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    // fractions are taken at micro-unit resolution so that e.g. 0.7·285
    // is the exact tie 199.5 rather than 199.49999999999997
    Ok(fractions.map(|f| (f * FRACTION_SCALE as f64).round() as u128))
}

/// `(train, val, test)` sizes of one class of `n` samples.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "a class needs at least 3 samples to split, got {n}"
        )));
    }
    let parts = fraction_parts(fractions)?;
    let train = div_round_half_even(n as u128 * parts[0], FRACTION_SCALE) as usize;
    let val = div_round_half_even(n as u128 * parts[1], FRACTION_SCALE) as usize;
    let train = train.min(n);
    let val = val.min(n - train);
    Ok((train, val, n - train - val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub fn name(&self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Malformed {
                what: "split",
                detail: format!("unknown subset {other:?}"),
            }),
        }
    }
}

/// Subset of every sample, in dataset order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub assignment: Vec<Subset>,
}

impl Split {
    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == subset)
            .collect()
    }
}

/// Per-class split with sizes from [`split_counts`] and membership from a
/// seeded shuffle of each class's samples.
pub fn stratified_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut assignment = vec![Subset::Test; labels.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let (tr, va, _) = split_counts(members.len(), fractions)?;
        members.shuffle(&mut stage_stream(seed, "split", c as u64));
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < tr {
                Subset::Train
            } else if k < tr + va {
                Subset::Val
            } else {
                Subset::Test
            };
        }
    }
    Ok(Split { assignment })
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected first/second moment state.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
            t: 0,
        }
    }

    /// One update from the gradients currently held by `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if p.value.shape() != m.shape() || p.value.shape() != v.shape() {
                return Err(Error::Shape(format!(
                    "moment shape {:?} does not match parameter {} {:?}",
                    m.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step_size = T::lit(c.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = b1 * md[i] + one_b1 * g[i];
                vd[i] = b2 * vd[i] + one_b2 * g[i] * g[i];
                *w -= step_size * md[i] / (vd[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop { best_epoch: usize },
}

/// Patience-based early stopping on validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStop<S> {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
    best: Option<S>,
}

/// Smallest decrease that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

impl<S> EarlyStop<S> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
            best: None,
        }
    }

    /// Record epoch `epoch` (1-based). `snapshot` is called on improvement.
    pub fn check(&mut self, val_loss: f64, epoch: usize, snapshot: impl FnOnce() -> S) -> StopDecision {
        if val_loss.is_finite() && val_loss < self.best_loss - MIN_IMPROVEMENT {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            self.best = Some(snapshot());
            StopDecision::Continue
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopDecision::Stop {
                    best_epoch: self.best_epoch,
                }
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> Option<&S> {
        self.best.as_ref()
    }

    pub fn take_best(&mut self) -> Option<S> {
        self.best.take()
    }
}

/// One prepared clip with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    /// `[frames, H, W]` in `[0, 1]`.
    pub clip: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augment: AugmentRange,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            patience: 50,
            max_epochs: 500,
            seed: 0,
            augment: AugmentRange::default(),
        }
    }
}

/// Stack the views of `indices` into `[B, 1, T, H, W]`. Each sample's
/// random choices come from its own `(seed, id, epoch)` stream.
pub fn assemble_batch(
    samples: &[Sample],
    indices: &[usize],
    mode: ClipMode,
    range: &AugmentRange,
    seed: u64,
    epoch: u64,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let views: Vec<Tensor<f32>> = indices
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let mut rng = sample_stream(seed, &s.id, epoch);
            let v = training_view(&s.clip, mode, range, &mut rng)?;
            let mut shape = vec![1];
            shape.extend_from_slice(v.shape());
            v.reshape(&shape)
        })
        .collect::<Result<_>>()?;
    let labels = indices.iter().map(|&i| samples[i].label).collect();
    Ok((Tensor::stack(&views)?, labels))
}

/// Mean inference-mode loss over `samples`.
pub fn evaluate_loss(net: &Network<f32>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = assemble_batch(samples, chunk, ClipMode::Eval, &AugmentRange::default(), 0, 0)?;
        total += net.eval_loss(&x, &y)? as f64 * chunk.len() as f64;
    }
    let loss = total / samples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("validation loss {loss}")));
    }
    Ok(loss)
}

/// Softmax probabilities `[n][classes]` in inference mode.
pub fn predict_proba(net: &Network<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = assemble_batch(samples, chunk, ClipMode::Eval, &AugmentRange::default(), 0, 0)?;
        let logits = net.forward_logits(&x)?;
        let k = logits.shape()[1];
        for row in logits.data().chunks(k) {
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let z: f64 = e.iter().sum();
            out.push(e.into_iter().map(|v| v / z).collect());
        }
    }
    Ok(out)
}

/// Index of the largest probability (first on ties).
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub steps: usize,
}

/// One shuffled pass over `train` in batches, then the validation loss.
pub fn train_epoch(
    net: &mut Network<f32>,
    adam: &mut AdamState<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stage_stream(cfg.seed, "shuffle", epoch as u64));
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(cfg.batch_size.max(1)) {
        let (x, y) = assemble_batch(train, chunk, ClipMode::Train, &cfg.augment, cfg.seed, epoch as u64)?;
        net.params_mut().zero_grad();
        let loss = net
            .train_step_grads(x, &y)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {}: {e}", steps + 1)))?;
        adam.step(net.params_mut())?;
        total += loss as f64 * chunk.len() as f64;
        steps += 1;
    }
    Ok(EpochStats {
        epoch,
        train_loss: total / train.len() as f64,
        val_loss: evaluate_loss(net, val, cfg.batch_size)?,
        steps,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Train until early stopping or the epoch cap, then restore the weights of
/// the best validation epoch. `on_epoch` sees every epoch as it finishes.
pub fn fit(
    net: &mut Network<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let mut adam = AdamState::new(net.params(), cfg.adam);
    let mut stop = EarlyStop::new(cfg.patience);
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let stats = train_epoch(net, &mut adam, train, val, cfg, epoch)?;
        on_epoch(&stats);
        history.push(stats);
        if let StopDecision::Stop { .. } = stop.check(stats.val_loss, epoch, || net.clone()) {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_loss) = (stop.best_epoch, stop.best_loss);
    if let Some(best) = stop.take_best() {
        *net = best;
    }
    net.frozen = true;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

/// `log.tsv` body: header plus one row per epoch.
pub fn log_tsv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_loss\n");
    for h in history {
        s.push_str(&format!("{}\t{:.6}\t{:.6}\n", h.epoch, h.train_loss, h.val_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_division() {
        assert_eq!(div_round_half_even(1995, 10), 200);
        assert_eq!(div_round_half_even(285, 10), 28);
        assert_eq!(div_round_half_even(15, 10), 2);
        assert_eq!(div_round_half_even(14, 10), 1);
    }

    #[test]
    fn tiny_classes_rejected() {
        assert!(split_counts(2, [0.7, 0.1, 0.2]).is_err());
        assert!(split_counts(10, [0.7, 0.1, 0.3]).is_err());
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::zeros(&[2])).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.m[0] = Tensor::zeros(&[3]);
        assert!(adam.step(&mut store).is_err());
    }
}
