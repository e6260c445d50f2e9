//! DeepLIFT attribution with the Rescale rule.
//!
//! The network is run in inference mode, where every batch-norm is a fixed
//! per-channel affine map, so the only nonlinearity left is ReLU. A
//! reference pass over the baseline records each ReLU pre-activation; the
//! pass over the input then swaps each ReLU's local derivative for the
//! secant slope `(relu(x) − relu(x₀)) / (x − x₀)`. Back-propagating through
//! that graph yields DeepLIFT multipliers, and multiplier × (x − x₀) sums
//! to the logit difference.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::kernels::{self, ConvGeometry};
use crate::autodiff::{ParamStore, Tape};
use crate::ect;
use crate::error::{Error, Result};
use crate::net::{ActivationHook, Network};
use crate::tensor::{Real, Tensor};

/// Differences below this are treated as zero.
pub const DELTA_EPS: f64 = 1e-7;

/// Rescale multiplier for one ReLU unit.
pub fn rescale_multiplier<T: Real>(x: T, x0: T) -> T {
    let d = x - x0;
    if d.abs() < T::lit(DELTA_EPS) {
        if x > T::zero() {
            T::one()
        } else {
            T::zero()
        }
    } else {
        (x.max(T::zero()) - x0.max(T::zero())) / d
    }
}

pub fn rescale_multipliers<T: Real>(pre: &Tensor<T>, reference: &Tensor<T>) -> Result<Tensor<T>> {
    pre.zip_map(reference, rescale_multiplier)
}

/// Relevance through a ReLU: `multiplier ⊙ relevance_out`.
pub fn rescale_rule<T: Real>(x_pre: &Tensor<T>, x0_pre: &Tensor<T>, relevance_out: &Tensor<T>) -> Result<Tensor<T>> {
    rescale_multipliers(x_pre, x0_pre)?.zip_map(relevance_out, |m, r| m * r)
}

/// A layer presented to [`linear_rule`].
pub enum Layer<'a, T> {
    /// `y = W x + b` with `W: [K, D]` acting on flat vectors.
    Dense(&'a Tensor<T>),
    /// Zero-padded 3-D convolution over `[1, C, T, H, W]` tensors.
    Conv {
        weight: &'a Tensor<T>,
        geom: ConvGeometry,
    },
    /// Mean over T, H, W.
    AvgPool,
    /// Inference-mode batch-norm folded to `y = scale[c]·x + shift[c]`.
    ChannelAffine(&'a [T]),
    Relu,
}

impl<T: Real> Layer<'_, T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(w) => {
                let d = w.shape()[1];
                let flat = x.clone().reshape(&[1, d])?;
                let zero = Tensor::zeros(&[w.shape()[0]]);
                kernels::affine(&flat, w, &zero)?.reshape(&[w.shape()[0]])
            }
            Layer::Conv { weight, geom } => kernels::conv3d_forward(x, weight, geom),
            Layer::AvgPool => kernels::global_avg_pool(x),
            Layer::ChannelAffine(scale) => kernels::channel_affine(x, scale, &vec![T::zero(); scale.len()]),
            Layer::Relu => Err(Error::InvalidArgument("linear rule applied to a ReLU layer".into())),
        }
    }

    fn apply_transpose(&self, z: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(w) => {
                let k = w.shape()[0];
                let zr = z.clone().reshape(&[1, k])?;
                let x = Tensor::zeros(&[1, w.shape()[1]]);
                let (gx, _, _) = kernels::affine_backward(&zr, &x, w);
                gx.reshape(input_shape)
            }
            Layer::Conv { weight, geom } => kernels::conv3d_backward_input(z, input_shape, weight, geom),
            Layer::AvgPool => kernels::global_avg_pool_backward(z, input_shape),
            Layer::ChannelAffine(scale) => kernels::channel_affine(z, scale, &vec![T::zero(); scale.len()]),
            Layer::Relu => Err(Error::InvalidArgument("linear rule applied to a ReLU layer".into())),
        }
    }
}

/// DeepLIFT linear rule in relevance form.
///
/// Input `j` contributes `w_ij·Δx_j` to output `i`, and output relevance is
/// shared in proportion: `R_j = Σ_i R_i · w_ij·Δx_j / Δy_i`. Outputs with
/// `|Δy_i| < 1e-7` pass their relevance back along the plain gradient,
/// normalized by the row sum `Σ_j w_ij`, so relevance is conserved.
pub fn linear_rule<T: Real>(layer: &Layer<'_, T>, delta_x: &Tensor<T>, relevance_out: &Tensor<T>) -> Result<Tensor<T>> {
    if matches!(layer, Layer::Relu) {
        return Err(Error::InvalidArgument("linear rule applied to a ReLU layer".into()));
    }
    let delta_y = layer.apply(delta_x)?;
    delta_y.expect_same_shape(relevance_out)?;
    let row_sums = layer.apply(&Tensor::full(delta_x.shape(), T::one()))?;
    let eps = T::lit(DELTA_EPS);
    let mut share = Tensor::zeros_like(&delta_y);
    let mut fallback = Tensor::zeros_like(&delta_y);
    for i in 0..delta_y.numel() {
        let (dy, r) = (delta_y.data()[i], relevance_out.data()[i]);
        if dy.abs() >= eps {
            share.data_mut()[i] = r / dy;
        } else if row_sums.data()[i].abs() >= eps {
            fallback.data_mut()[i] = r / row_sums.data()[i];
        }
    }
    let mut rel = layer
        .apply_transpose(&share, delta_x.shape())?
        .zip_map(delta_x, |g, d| g * d)?;
    rel.add_assign(&layer.apply_transpose(&fallback, delta_x.shape())?)?;
    Ok(rel)
}

/// Reference input for attribution.
#[derive(Clone, Debug)]
pub struct Baseline<T = f32> {
    pub id: String,
    pub clip: Tensor<T>,
}

impl<T: Real> Baseline<T> {
    /// All-zero clip of the given per-sample shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            id: "zeros".into(),
            clip: Tensor::zeros(shape),
        }
    }

    /// Every frame replaced by the clip's per-pixel mean over time
    /// (`[T, H, W]` or `[C, T, H, W]`), so only temporal change differs.
    pub fn temporal_mean(clip: &Tensor<T>) -> Result<Self> {
        let shape = clip.shape();
        if shape.len() < 3 {
            return Err(Error::Shape(format!("expected [.., T, H, W], got {shape:?}")));
        }
        let t = shape[shape.len() - 3];
        let plane: usize = shape[shape.len() - 2..].iter().product();
        let mut data = clip.data().to_vec();
        let inv = T::lit(1.0 / t as f64);
        for block in data.chunks_mut(t * plane) {
            let mut mean = vec![T::zero(); plane];
            for frame in block.chunks(plane) {
                for (m, &v) in mean.iter_mut().zip(frame) {
                    *m += v;
                }
            }
            for frame in block.chunks_mut(plane) {
                for (v, &m) in frame.iter_mut().zip(&mean) {
                    *v = m * inv;
                }
            }
        }
        Ok(Self {
            id: "temporal_mean".into(),
            clip: Tensor::from_vec(shape.to_vec(), data)?,
        })
    }
}

/// Signed per-voxel relevance of one clip for one class.
#[derive(Clone, Debug)]
pub struct AttributionMap<T = f32> {
    pub values: Tensor<T>,
    pub target_class: usize,
    pub baseline_id: String,
    pub sample_id: String,
    /// Target logit at the input.
    pub logit: T,
    /// Target logit at the baseline.
    pub baseline_logit: T,
}

impl<T: Real> AttributionMap<T> {
    /// `|Σ values − Δlogit|`, normalized by `max(1, |Δlogit|)`.
    pub fn completeness_error(&self) -> f64 {
        let delta = (self.logit - self.baseline_logit).as_f64();
        let sum: f64 = self.values.data().iter().map(|v| v.as_f64()).sum();
        (sum - delta).abs() / delta.abs().max(1.0)
    }
}

fn as_batch<T: Real>(net: &Network<T>, clip: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, t, h, w] = net.config().input_shape;
    let n = clip.numel();
    if n != c * t * h * w || !(clip.shape() == [c, t, h, w] || (c == 1 && clip.shape() == [t, h, w])) {
        return Err(Error::Shape(format!(
            "clip shape {:?} does not match network input {:?}",
            clip.shape(),
            net.config().input_shape
        )));
    }
    clip.clone().reshape(&[1, c, t, h, w])
}

/// DeepLIFT (Rescale) map of `clip` for the pre-softmax logit of
/// `target_class`, with the relevance seed scaled by `seed`.
///
/// `clip` is one sample, either `[C, T, H, W]` or `[T, H, W]` for a
/// single-channel network; the map has the same shape.
pub fn deeplift_attribute_seeded<T: Real>(
    net: &Network<T>,
    clip: &Tensor<T>,
    sample_id: &str,
    target_class: usize,
    baseline: &Baseline<T>,
    seed: T,
) -> Result<AttributionMap<T>> {
    let k = net.config().num_classes;
    if target_class >= k {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            classes: k,
        });
    }
    clip.expect_same_shape(&baseline.clip)?;
    let x = as_batch(net, clip)?;
    let x0 = as_batch(net, &baseline.clip)?;

    let mut reference = Vec::new();
    let mut tape0 = Tape::new();
    let v0 = net.record_infer(&mut tape0, x0.clone(), ActivationHook::Record(&mut reference))?;
    let baseline_logit = tape0.value(v0.logits).data()[target_class];
    drop(tape0);

    let mut tape = Tape::new();
    let v = net.record_infer(
        &mut tape,
        x.clone(),
        ActivationHook::Rescale {
            reference: &reference,
            next: 0,
        },
    )?;
    let logit = tape.value(v.logits).data()[target_class];
    let mut select = Tensor::zeros(&[1, k]);
    select.data_mut()[target_class] = seed;
    let out = tape.dot(v.logits, select)?;
    let mut scratch = ParamStore::clone(net.params());
    let mut grads = tape.backward(out, &mut scratch)?;
    let multipliers = grads.take(v.input).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let delta = x.zip_map(&x0, |a, b| a - b)?;
    let values = multipliers.zip_map(&delta, |m, d| m * d)?.reshape(clip.shape())?;
    Ok(AttributionMap {
        values,
        target_class,
        baseline_id: baseline.id.clone(),
        sample_id: sample_id.to_string(),
        logit,
        baseline_logit,
    })
}

pub fn deeplift_attribute<T: Real>(
    net: &Network<T>,
    clip: &Tensor<T>,
    sample_id: &str,
    target_class: usize,
    baseline: &Baseline<T>,
) -> Result<AttributionMap<T>> {
    deeplift_attribute_seeded(net, clip, sample_id, target_class, baseline, T::one())
}

/// Positive part of the map, min-max scaled over the whole clip to 0..=255.
pub fn heatmap_levels(values: &Tensor<f32>) -> Vec<u8> {
    let pos: Vec<f32> = values.data().iter().map(|v| v.max(0.0)).collect();
    let lo = pos.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = pos.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0; pos.len()];
    }
    let span = (hi - lo) as f64;
    pos.iter()
        .map(|&v| (((v - lo) as f64 / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary PGM (P5) image.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Write one `frame_XX.pgm` per frame plus the signed map as
/// `attribution.ect`.
pub fn export_heatmaps(map: &AttributionMap<f32>, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = map.values.shape();
    if s.len() < 3 {
        return Err(Error::Shape(format!(
            "attribution map must have at least 3 axes, got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let frames = map.values.numel() / (h * w);
    let width = frames.saturating_sub(1).to_string().len().max(2);
    let levels = heatmap_levels(&map.values);
    for (t, px) in levels.chunks(h * w).enumerate() {
        let path = dir.join(format!("frame_{t:0width$}.pgm"));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&pgm_bytes(w, h, px)).map_err(|e| Error::io(&path, e))?;
    }
    ect::write(dir.join("attribution.ect"), &map.values)
}

/// Sample indices ordered by decreasing probability of `class`; ties keep
/// input order.
pub fn rank_by_class_probability(probs: &[Vec<f64>], class: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b][class].total_cmp(&probs[a][class]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_multiplier_cases() {
        assert_eq!(rescale_multiplier(1.0, -1.0), 0.5);
        assert_eq!(rescale_multiplier(3.0, 1.0), 1.0);
        assert_eq!(rescale_multiplier(-1.0, -3.0), 0.0);
        // equal inputs fall back to the local derivative
        assert_eq!(rescale_multiplier(2.0, 2.0), 1.0);
        assert_eq!(rescale_multiplier(-2.0, -2.0), 0.0);
        assert_eq!(rescale_multiplier(0.0f64, 0.0), 0.0);
    }

    #[test]
    fn single_affine_layer_from_zero_is_w_times_x() {
        let w = Tensor::from_vec(vec![1, 3], vec![2.0f64, -1.0, 0.5]).unwrap();
        let x = Tensor::from_vec(vec![3], vec![1.0, 4.0, -2.0]).unwrap();
        // output relevance is the full output difference
        let dy = 2.0 - 4.0 - 1.0;
        let r = linear_rule(&Layer::Dense(&w), &x, &Tensor::from_vec(vec![1], vec![dy]).unwrap()).unwrap();
        assert_eq!(r.data(), &[2.0, -4.0, -1.0]);
    }

    #[test]
    fn zero_delta_gives_zero_relevance() {
        let w = Tensor::from_vec(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let r = linear_rule(&Layer::Dense(&w), &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_layer_rejected_by_linear_rule() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(
            linear_rule(&Layer::Relu, &x, &x),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fallback_conserves_relevance() {
        // Δy₀ = 0 exactly but relevance is assigned to it anyway
        let w = Tensor::from_vec(vec![2, 2], vec![1.0f64, -1.0, 1.0, 1.0]).unwrap();
        let dx = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        let r_out = Tensor::from_vec(vec![2], vec![0.3, 2.0]).unwrap();
        // row sum of the first row is zero too, so its relevance is dropped
        let r = linear_rule(&Layer::Dense(&w), &dx, &r_out).unwrap();
        assert!((r.sum() - 2.0).abs() < 1e-12);
        let w = Tensor::from_vec(vec![1, 2], vec![2.0f64, -1.0]).unwrap();
        let dx = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let r = linear_rule(&Layer::Dense(&w), &dx, &Tensor::from_vec(vec![1], vec![0.5]).unwrap()).unwrap();
        assert!((r.sum() - 0.5).abs() < 1e-12);
        assert_eq!(r.data(), &[1.0, -0.5]);
    }

    #[test]
    fn heatmap_single_positive_voxel() {
        let mut v = Tensor::<f32>::full(&[2, 3, 3], -1.0);
        v.set(&[1, 2, 0], 0.7);
        let levels = heatmap_levels(&v);
        assert_eq!(levels.iter().filter(|&&l| l == 255).count(), 1);
        assert_eq!(levels[9 + 6], 255);
        assert_eq!(levels.iter().filter(|&&l| l == 0).count(), 17);
    }

    #[test]
    fn pgm_header_exact() {
        let b = pgm_bytes(112, 112, &vec![0u8; 112 * 112]);
        assert!(b.starts_with(b"P5\n112 112\n255\n"));
        assert_eq!(b.len(), "P5\n112 112\n255\n".len() + 12544);
    }

    #[test]
    fn ranking_is_descending_and_stable() {
        let p = vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.2, 0.8]];
        assert_eq!(rank_by_class_probability(&p, 0), vec![1, 0, 2]);
    }
}
