//! Raw cine-loop → normalized network input.
//!
//! The deterministic part of the chain ([`prepare_clip`]) masks the overlay,
//! resamples one cardiac cycle to a fixed frame count, histogram-matches the
//! in-sector pixels to a dataset reference, and crops/downsamples to the
//! network resolution. The stochastic part ([`training_view`]) rolls the
//! cycle to a random start and applies a random rigid transform.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames per normalized cardiac cycle.
pub const CYCLE_FRAMES: usize = 30;
/// Side of the square crop taken from full-resolution frames.
pub const CROP_SIDE: usize = 549;
/// Side of the network input frames.
pub const OUTPUT_SIDE: usize = 112;
/// Number of intensity levels.
pub const LEVELS: usize = 256;

/// One single-channel video with its cardiac-cycle annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct CineLoop {
    /// `[T, H, W]`, intensities in `[0, 255]`.
    pub frames: Tensor<f32>,
    pub cycle_start: usize,
    pub cycle_len: usize,
    pub sample_id: String,
}

impl CineLoop {
    pub fn new(
        frames: Tensor<f32>,
        cycle_start: usize,
        cycle_len: usize,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.rank() != 3 {
            return Err(Error::Shape(format!(
                "cine-loop must be [T, H, W], got {:?}",
                frames.shape()
            )));
        }
        let t = frames.shape()[0];
        if cycle_len < 2 || cycle_start >= t || cycle_start + cycle_len > t {
            return Err(Error::InvalidArgument(format!(
                "cycle [{cycle_start}, {cycle_start}+{cycle_len}) does not fit {t} frames (length must be >= 2)"
            )));
        }
        Ok(Self {
            frames,
            cycle_start,
            cycle_len,
            sample_id: sample_id.into(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[0], s[1], s[2]]
    }
}

/// Fan-shaped field of view opening downward from `apex`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorGeometry {
    /// (row, col) in pixels.
    pub apex: (f64, f64),
    pub radius: f64,
    pub half_angle_deg: f64,
}

impl SectorGeometry {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.radius > 0.0) || !(self.half_angle_deg > 0.0 && self.half_angle_deg < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "sector needs radius > 0 and 0 < half_angle < 90, got {self:?}"
            )));
        }
        let (r, c) = self.apex;
        if r < 0.0 || c < 0.0 || r > (height - 1) as f64 || c > (width - 1) as f64 {
            return Err(Error::InvalidArgument(format!(
                "sector apex {:?} outside the {height}×{width} frame",
                self.apex
            )));
        }
        Ok(())
    }

    /// Whether the pixel center `(row, col)` lies in the sector.
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.apex.0;
        let dc = col as f64 - self.apex.1;
        if dr.hypot(dc) > self.radius {
            return false;
        }
        if dr == 0.0 && dc == 0.0 {
            return true;
        }
        dc.abs().atan2(dr).to_degrees() <= self.half_angle_deg
    }

    /// Row-major `[H, W]` membership mask.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width)
            .map(|i| self.contains(i / width, i % width))
            .collect()
    }
}

fn overlay_mask(clip: &CineLoop, geom: &SectorGeometry, drop_static_bright: bool) -> Result<Vec<bool>> {
    let [t, h, w] = clip.dims();
    geom.validate(h, w)?;
    let mut keep = geom.mask(h, w);
    if drop_static_bright {
        let plane = h * w;
        let d = clip.frames.data();
        for (p, k) in keep.iter_mut().enumerate() {
            if !*k {
                continue;
            }
            let (mut s, mut ss) = (0.0f64, 0.0f64);
            for f in 0..t {
                let v = d[f * plane + p] as f64;
                s += v;
                ss += v * v;
            }
            let mean = s / t as f64;
            let var = (ss / t as f64 - mean * mean).max(0.0);
            if var < 1e-6 && mean > 200.0 {
                *k = false;
            }
        }
    }
    Ok(keep)
}

/// Zero every pixel outside the sector. With `drop_static_bright`, also
/// zero in-sector pixels that never change and are brighter than 200
/// (burnt-in annotations).
pub fn mask_overlay(clip: &CineLoop, geom: &SectorGeometry, drop_static_bright: bool) -> Result<CineLoop> {
    let keep = overlay_mask(clip, geom, drop_static_bright)?;
    let mut out = clip.clone();
    let plane = keep.len();
    for (i, v) in out.frames.data_mut().iter_mut().enumerate() {
        if !keep[i % plane] {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Source frame for offset `j` from the cycle start: the recorded frame when
/// it exists, otherwise wrapped around the cycle.
fn source_frame(clip: &CineLoop, j: usize) -> usize {
    let t = clip.frames.shape()[0];
    if clip.cycle_start + j < t {
        clip.cycle_start + j
    } else {
        clip.cycle_start + j % clip.cycle_len
    }
}

/// Resample one cardiac cycle to `target` frames by linear interpolation.
/// Output frame `k` samples source time `cycle_start + k·cycle_len/target`.
pub fn resample_cycle(clip: &CineLoop, target: usize) -> Result<Tensor<f32>> {
    if clip.cycle_len < 2 {
        return Err(Error::InvalidArgument(format!("cycle_len {} < 2", clip.cycle_len)));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("resampling target must be >= 1".into()));
    }
    let [_, h, w] = clip.dims();
    let plane = h * w;
    let d = clip.frames.data();
    let mut out = Vec::with_capacity(target * plane);
    for k in 0..target {
        let u = (k * clip.cycle_len) as f64 / target as f64;
        let j = u.floor() as usize;
        let frac = (u - j as f64) as f32;
        let a = &d[source_frame(clip, j) * plane..][..plane];
        if frac == 0.0 {
            out.extend_from_slice(a);
        } else {
            let b = &d[source_frame(clip, j + 1) * plane..][..plane];
            out.extend(a.iter().zip(b).map(|(&x, &y)| x + frac * (y - x)));
        }
    }
    Tensor::from_vec(vec![target, h, w], out)
}

/// Train or evaluation behaviour of the stochastic steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    Train,
    Eval,
}

/// Clip start within the normalized cycle: uniform in `0..frames` when
/// training, 0 when evaluating.
pub fn sample_clip_start(mode: ClipMode, frames: usize, rng: &mut impl Rng) -> usize {
    match mode {
        ClipMode::Train => rng.random_range(0..frames),
        ClipMode::Eval => 0,
    }
}

/// Rotate the frame axis so frame `s` comes first.
pub fn roll_frames(clip: &Tensor<f32>, s: usize) -> Tensor<f32> {
    let t = clip.shape()[0];
    let plane = clip.numel() / t;
    let s = s % t;
    let d = clip.data();
    let mut out = Vec::with_capacity(d.len());
    out.extend_from_slice(&d[s * plane..]);
    out.extend_from_slice(&d[..s * plane]);
    Tensor::from_vec(clip.shape().to_vec(), out).expect("same shape")
}

/// Quantization level of an intensity: bins are `(k−1, k]`, so integer
/// values land on their own level.
#[inline]
pub fn level_of(v: f32) -> usize {
    (v.ceil().max(0.0) as usize).min(LEVELS - 1)
}

/// Cumulative distribution over the 256 levels.
fn cdf_of(counts: &[u64; LEVELS]) -> Result<[f64; LEVELS]> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("histogram of zero pixels".into()));
    }
    let mut cdf = [0.0; LEVELS];
    let mut acc = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        acc += c;
        cdf[k] = acc as f64 / total as f64;
    }
    Ok(cdf)
}

/// Pooled 256-level intensity histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceHistogram {
    pub counts: [u64; LEVELS],
}

impl Default for ReferenceHistogram {
    fn default() -> Self {
        Self { counts: [0; LEVELS] }
    }
}

impl ReferenceHistogram {
    /// Accumulate the pixels of `frames` selected by the per-pixel `region`
    /// (`None` selects all).
    pub fn add(&mut self, frames: &Tensor<f32>, region: Option<&[bool]>) {
        let plane = frames.shape()[frames.rank() - 2..].iter().product::<usize>();
        for (i, &v) in frames.data().iter().enumerate() {
            if region.is_none_or(|r| r[i % plane]) {
                self.counts[level_of(v)] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `G(u)` for every level; `G(255) = 1`.
    pub fn cdf(&self) -> Result<[f64; LEVELS]> {
        cdf_of(&self.counts)
    }

    /// Counts stored as a `[256]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(vec![LEVELS], self.counts.iter().map(|&c| c as f32).collect()).expect("256 levels")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        if t.shape() != [LEVELS] {
            return Err(Error::Shape(format!(
                "reference histogram must be [256], got {:?}",
                t.shape()
            )));
        }
        let mut counts = [0u64; LEVELS];
        for (c, &v) in counts.iter_mut().zip(t.data()) {
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "histogram count {v} is not a non-negative integer"
                )));
            }
            *c = v as u64;
        }
        Ok(Self { counts })
    }
}

/// Histogram-match the pixels of `frames` selected by `region` to the
/// reference. The clip's own distribution `F` is linear within each level
/// bin, so continuous intensities spread across the reference levels; each
/// pixel maps to `min{u : G(u) ≥ F(v)}`. Unselected pixels are untouched.
pub fn histogram_match(
    frames: &Tensor<f32>,
    reference: &ReferenceHistogram,
    region: Option<&[bool]>,
) -> Result<Tensor<f32>> {
    let mut own = ReferenceHistogram::default();
    own.add(frames, region);
    if own.total() == 0 {
        return Err(Error::InvalidArgument("histogram matching of an empty clip".into()));
    }
    let f = own.cdf()?;
    let g = reference.cdf()?;
    let total = own.total() as f64;
    let plane = frames.shape()[frames.rank() - 2..].iter().product::<usize>();
    let map = |v: f32| -> f32 {
        let k = level_of(v);
        let below = if k == 0 { 0.0 } else { f[k - 1] };
        let within = if k == 0 {
            1.0
        } else {
            (v as f64 - (k - 1) as f64).clamp(0.0, 1.0)
        };
        let fv = if within >= 1.0 {
            f[k]
        } else {
            below + within * own.counts[k] as f64 / total
        };
        g.partition_point(|&gu| gu < fv).min(LEVELS - 1) as f32
    };
    let mut out = frames.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if region.is_none_or(|r| r[i % plane]) {
            *v = map(*v);
        }
    }
    Ok(out)
}

/// Top-left corner of the centered square crop.
pub fn crop_origin(height: usize, width: usize, side: usize) -> Result<(usize, usize)> {
    if height < side || width < side {
        return Err(Error::Shape(format!(
            "{height}×{width} frame is smaller than the {side}×{side} crop"
        )));
    }
    Ok(((height - side) / 2, (width - side) / 2))
}

/// Bilinear resize of a row-major `src_h×src_w` image with pixel-center
/// alignment; samples outside the image clamp to the border.
pub fn resize_bilinear(src: &[f32], src_h: usize, src_w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let coord = |i: usize, n_in: usize, n_out: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (x - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, src_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1, fr) = coord(i, src_h, out_h);
        for &(c0, c1, fc) in &cols {
            let p = |r: usize, c: usize| src[r * src_w + c];
            let top = p(r0, c0) + fc * (p(r0, c1) - p(r0, c0));
            let bot = p(r1, c0) + fc * (p(r1, c1) - p(r1, c0));
            out.push(top + fr * (bot - top));
        }
    }
    out
}

/// Center 549×549 crop, bilinear resize to 112×112, scale to `[0, 1]`.
pub fn crop_and_downsample(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [h, w]: [usize; 2] = frame
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("frame must be [H, W], got {:?}", frame.shape())))?;
    let (r0, c0) = crop_origin(h, w, CROP_SIDE)?;
    let mut crop = Vec::with_capacity(CROP_SIDE * CROP_SIDE);
    for r in r0..r0 + CROP_SIDE {
        crop.extend_from_slice(&frame.data()[r * w + c0..][..CROP_SIDE]);
    }
    let out = resize_bilinear(&crop, CROP_SIDE, CROP_SIDE, OUTPUT_SIDE, OUTPUT_SIDE)
        .into_iter()
        .map(|v| v / 255.0)
        .collect();
    Tensor::from_vec(vec![OUTPUT_SIDE, OUTPUT_SIDE], out)
}

/// Rigid in-plane transform applied identically to every frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentParams {
    pub shift_rows: f64,
    pub shift_cols: f64,
    pub rotation_deg: f64,
}

/// Ranges of the random augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRange {
    pub max_shift: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentRange {
    fn default() -> Self {
        Self {
            max_shift: 8.0,
            max_rotation_deg: 10.0,
        }
    }
}

impl AugmentRange {
    pub fn sample(&self, rng: &mut impl Rng) -> AugmentParams {
        let mut u = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        AugmentParams {
            shift_rows: u(self.max_shift),
            shift_cols: u(self.max_shift),
            rotation_deg: u(self.max_rotation_deg),
        }
    }
}

/// Translate by `(shift_rows, shift_cols)` and rotate about the image center,
/// with bilinear sampling and zero fill. `clip` is `[T, H, W]`.
pub fn augment(clip: &Tensor<f32>, p: &AugmentParams) -> Result<Tensor<f32>> {
    let [t, h, w]: [usize; 3] = clip
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("clip must be [T, H, W], got {:?}", clip.shape())))?;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    // inverse map of each output pixel, shared by all frames
    let taps: Vec<[(usize, f32); 4]> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64 - p.shift_rows - cy, (i % w) as f64 - p.shift_cols - cx);
            let sr = cos * r + sin * c + cy;
            let sc = -sin * r + cos * c + cx;
            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let mut out = [(0usize, 0.0f32); 4];
            let corners = [
                (0.0, 0.0, (1.0 - fr) * (1.0 - fc)),
                (0.0, 1.0, (1.0 - fr) * fc),
                (1.0, 0.0, fr * (1.0 - fc)),
                (1.0, 1.0, fr * fc),
            ];
            for (slot, (dr, dc, wgt)) in out.iter_mut().zip(corners) {
                let (rr, cc) = (r0 + dr, c0 + dc);
                if wgt > 0.0 && rr >= 0.0 && cc >= 0.0 && rr < h as f64 && cc < w as f64 {
                    *slot = (rr as usize * w + cc as usize, wgt as f32);
                }
            }
            out
        })
        .collect();
    let plane = h * w;
    let mut out = Vec::with_capacity(t * plane);
    for f in clip.data().chunks(plane) {
        out.extend(taps.iter().map(|tp| {
            let mut acc = 0.0f32;
            for &(idx, wgt) in tp {
                if wgt != 0.0 {
                    acc += wgt * f[idx];
                }
            }
            acc
        }));
    }
    Tensor::from_vec(vec![t, h, w], out)
}

/// Settings of the deterministic preprocessing chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub sector: SectorGeometry,
    pub drop_static_bright: bool,
    pub frames: usize,
}

impl PreprocessConfig {
    /// Geometry of a 708×1016 scanner frame.
    pub fn scanner() -> Self {
        Self {
            sector: SectorGeometry {
                apex: (79.0, 507.0),
                radius: 600.0,
                half_angle_deg: 40.0,
            },
            drop_static_bright: true,
            frames: CYCLE_FRAMES,
        }
    }

    /// Geometry of 112×112 phantom frames.
    pub fn phantom() -> Self {
        Self {
            sector: SectorGeometry {
                apex: (4.0, 56.0),
                radius: 106.0,
                half_angle_deg: 40.0,
            },
            drop_static_bright: true,
            frames: CYCLE_FRAMES,
        }
    }
}

/// Overlay mask and cycle resampling; the in-sector pixel mask is returned
/// alongside so a reference histogram can be pooled before matching.
pub fn mask_and_resample(clip: &CineLoop, cfg: &PreprocessConfig) -> Result<(Tensor<f32>, Vec<bool>)> {
    let keep = overlay_mask(clip, &cfg.sector, cfg.drop_static_bright)?;
    let masked = mask_overlay(clip, &cfg.sector, cfg.drop_static_bright)?;
    Ok((resample_cycle(&masked, cfg.frames)?, keep))
}

/// Full deterministic chain: mask, resample, histogram-match in-sector
/// pixels, then crop/downsample to `[frames, 112, 112]` in `[0, 1]`.
/// Frames already at network resolution are only rescaled.
pub fn prepare_clip(clip: &CineLoop, cfg: &PreprocessConfig, reference: &ReferenceHistogram) -> Result<Tensor<f32>> {
    let (resampled, keep) = mask_and_resample(clip, cfg)?;
    let matched = histogram_match(&resampled, reference, Some(&keep))?;
    let [t, h, w] = [cfg.frames, clip.dims()[1], clip.dims()[2]];
    if h == OUTPUT_SIDE && w == OUTPUT_SIDE {
        return Ok(matched.map(|v| (v / 255.0).clamp(0.0, 1.0)));
    }
    let mut out = Vec::with_capacity(t * OUTPUT_SIDE * OUTPUT_SIDE);
    for f in matched.data().chunks(h * w) {
        let frame = Tensor::from_vec(vec![h, w], f.to_vec())?;
        out.extend(crop_and_downsample(&frame)?.data().iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::from_vec(vec![t, OUTPUT_SIDE, OUTPUT_SIDE], out)
}

/// Train-time view of a prepared clip: random cycle start and random rigid
/// transform drawn from `rng`. Eval mode returns the clip unchanged.
pub fn training_view(
    prepared: &Tensor<f32>,
    mode: ClipMode,
    range: &AugmentRange,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let s = sample_clip_start(mode, prepared.shape()[0], rng);
    if mode == ClipMode::Eval {
        return Ok(prepared.clone());
    }
    let rolled = roll_frames(prepared, s);
    let p = range.sample(rng);
    Ok(augment(&rolled, &p)?.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, start: usize, len: usize) -> CineLoop {
        let data = (0..t).flat_map(|f| vec![f as f32; 4]).collect();
        CineLoop::new(Tensor::from_vec(vec![t, 2, 2], data).unwrap(), start, len, "ramp").unwrap()
    }

    #[test]
    fn cycle_invariants_checked() {
        let f = Tensor::zeros(&[10, 2, 2]);
        assert!(CineLoop::new(f.clone(), 0, 1, "x").is_err());
        assert!(CineLoop::new(f.clone(), 5, 6, "x").is_err());
        assert!(CineLoop::new(f, 8, 2, "x").is_ok());
    }

    #[test]
    fn resampling_examples() {
        let id = resample_cycle(&ramp(30, 0, 30), 30).unwrap();
        assert_eq!(id, ramp(30, 0, 30).frames);
        let double = resample_cycle(&ramp(60, 0, 60), 30).unwrap();
        for k in 0..30 {
            assert_eq!(double.get(&[k, 0, 0]), 2.0 * k as f32);
        }
        let half = resample_cycle(&ramp(30, 0, 15), 30).unwrap();
        for k in 0..30 {
            assert_eq!(half.get(&[k, 1, 1]), 0.5 * k as f32);
        }
    }

    #[test]
    fn resampling_wraps_past_the_recording() {
        // cycle of frames 2..6 in a 6-frame recording wraps back to frame 2
        let out = resample_cycle(&ramp(6, 2, 4), 8).unwrap();
        let v: Vec<f32> = (0..8).map(|k| out.get(&[k, 0, 0])).collect();
        assert_eq!(v, vec![2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 3.5]);
    }

    #[test]
    fn roll_and_start() {
        let clip = ramp(30, 0, 30).frames;
        let r = roll_frames(&clip, 25);
        let order: Vec<f32> = (0..30).map(|k| r.get(&[k, 0, 0])).collect();
        let expected: Vec<f32> = (25..30).chain(0..25).map(|v| v as f32).collect();
        assert_eq!(order, expected);
        let mut rng = crate::rng::sample_stream(1, "a", 0);
        assert_eq!(sample_clip_start(ClipMode::Eval, 30, &mut rng), 0);
    }

    #[test]
    fn sector_geometry() {
        let g = PreprocessConfig::phantom().sector;
        assert!(g.contains(4 + 53, 56));
        // 60 degrees off axis
        assert!(!g.contains(14, 56 + 17));
        assert!(g.validate(112, 112).is_ok());
        let bad = SectorGeometry {
            half_angle_deg: 95.0,
            ..g
        };
        assert!(bad.validate(112, 112).is_err());
    }

    #[test]
    fn histogram_self_match_is_identity() {
        let data: Vec<f32> = (0..4000).map(|i| ((i * 37) % 256) as f32).collect();
        let t = Tensor::from_vec(vec![1, 40, 100], data).unwrap();
        let mut r = ReferenceHistogram::default();
        r.add(&t, None);
        let m = histogram_match(&t, &r, None).unwrap();
        assert!(m.data().iter().zip(t.data()).all(|(a, b)| (a - b).abs() <= 1.0));
    }

    #[test]
    fn half_black_half_white_to_uniform() {
        let data: Vec<f32> = (0..512).map(|i| if i < 256 { 0.0 } else { 255.0 }).collect();
        let t = Tensor::from_vec(vec![1, 16, 32], data).unwrap();
        let uniform = ReferenceHistogram { counts: [1; LEVELS] };
        let m = histogram_match(&t, &uniform, None).unwrap();
        let g = uniform.cdf().unwrap();
        let expected = g.iter().position(|&v| v >= 0.5).unwrap() as f32;
        assert_eq!(m.data()[0], expected);
        assert_eq!(m.data()[511], 255.0);
    }

    #[test]
    fn histogram_of_empty_region_fails() {
        let t = Tensor::full(&[1, 2, 2], 3.0);
        let r = ReferenceHistogram { counts: [1; LEVELS] };
        assert!(histogram_match(&t, &r, Some(&[false; 4])).is_err());
    }

    #[test]
    fn crop_rules() {
        assert_eq!(crop_origin(708, 1016, CROP_SIDE).unwrap(), (79, 233));
        assert!(crop_origin(500, 1016, CROP_SIDE).is_err());
        let c = Tensor::full(&[708, 1016], 51.0);
        let out = crop_and_downsample(&c).unwrap();
        assert_eq!(out.shape(), &[112, 112]);
        assert!(out.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn augment_identity_and_integer_shift() {
        let data: Vec<f32> = (0..2 * 12 * 10).map(|i| (i % 17) as f32).collect();
        let clip = Tensor::from_vec(vec![2, 12, 10], data).unwrap();
        assert_eq!(augment(&clip, &AugmentParams::default()).unwrap(), clip);
        let shifted = augment(
            &clip,
            &AugmentParams {
                shift_rows: 5.0,
                ..Default::default()
            },
        )
        .unwrap();
        for f in 0..2 {
            for r in 0..12 {
                for c in 0..10 {
                    let expected = if r < 5 { 0.0 } else { clip.get(&[f, r - 5, c]) };
                    assert_eq!(shifted.get(&[f, r, c]), expected);
                }
            }
        }
    }
}
