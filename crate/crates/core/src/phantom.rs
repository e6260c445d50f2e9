//! Synthetic cine-loops: a pulsating annulus (wall-motion analog) with an
//! optional fluttering leaflet (valve analog), seen through a fan sector
//! with a burnt-in annotation block outside it.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Manifest, ManifestEntry};
use crate::ect;
use crate::error::{Error, Result};
use crate::preprocess::{CineLoop, SectorGeometry};
use crate::rng::sample_stream;
use crate::tensor::Tensor;

/// Which class axis the labels follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomTask {
    /// Classes differ by contraction amplitude.
    Lv,
    /// Classes differ by leaflet flutter amplitude.
    Valve,
}

impl std::str::FromStr for PhantomTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lv" => Ok(Self::Lv),
            "valve" => Ok(Self::Valve),
            other => Err(Error::Config(format!("unknown phantom task {other:?} (lv|valve)"))),
        }
    }
}

impl std::fmt::Display for PhantomTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lv => "lv",
            Self::Valve => "valve",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub size: usize,
    pub frames: usize,
    /// Annulus center (row, col).
    pub center: (f64, f64),
    /// Inner radius at rest.
    pub rest_radius: f64,
    pub thickness: f64,
    /// Contraction amplitude per class.
    pub amplitudes: Vec<f64>,
    /// Leaflet hinge (row, col), length and resting angle (degrees from the
    /// downward vertical).
    pub leaflet_hinge: (f64, f64),
    pub leaflet_length: f64,
    pub leaflet_angle_deg: f64,
    /// Flutter amplitude (degrees) per class.
    pub flutter_deg: Vec<f64>,
    pub task: PhantomTask,
    /// Contraction amplitude used by every class of the valve task.
    pub valve_task_amplitude: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Range of the multiplicative speckle factor.
    pub speckle: (f64, f64),
    /// Per-clip uniform jitter of center and rest radius (pixels).
    pub jitter: f64,
    pub wall_level: f64,
    pub leaflet_level: f64,
    pub background_level: f64,
    pub sector: SectorGeometry,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            size: 112,
            frames: 30,
            center: (60.0, 56.0),
            rest_radius: 24.0,
            thickness: 6.0,
            amplitudes: vec![0.35, 0.20, 0.08],
            leaflet_hinge: (50.0, 56.0),
            leaflet_length: 12.0,
            leaflet_angle_deg: 0.0,
            flutter_deg: vec![0.0, 12.0, 30.0],
            task: PhantomTask::Lv,
            valve_task_amplitude: 0.2,
            noise_sigma: 8.0,
            speckle: (0.8, 1.2),
            jitter: 2.0,
            wall_level: 190.0,
            leaflet_level: 170.0,
            background_level: 40.0,
            sector: SectorGeometry {
                apex: (4.0, 56.0),
                radius: 106.0,
                half_angle_deg: 40.0,
            },
        }
    }
}

impl PhantomParams {
    pub fn num_classes(&self) -> usize {
        match self.task {
            PhantomTask::Lv => self.amplitudes.len(),
            PhantomTask::Valve => self.flutter_deg.len(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        let names: &[&str] = match self.task {
            PhantomTask::Lv => &["normal", "mild", "severe"],
            PhantomTask::Valve => &["normal", "mild", "substantial"],
        };
        (0..self.num_classes())
            .map(|i| names.get(i).map_or_else(|| format!("class{i}"), |s| s.to_string()))
            .collect()
    }

    /// (contraction amplitude, flutter amplitude) of a class.
    pub fn class_motion(&self, class_id: usize) -> Result<(f64, f64)> {
        if class_id >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: class_id,
                classes: self.num_classes(),
            });
        }
        Ok(match self.task {
            PhantomTask::Lv => (self.amplitudes[class_id], 0.0),
            PhantomTask::Valve => (self.valve_task_amplitude, self.flutter_deg[class_id]),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.amplitudes.iter().any(|a| !(0.0..1.0).contains(a)) {
            return bad(format!(
                "contraction amplitudes must lie in [0, 1): {:?}",
                self.amplitudes
            ));
        }
        if !(0.0..1.0).contains(&self.valve_task_amplitude) {
            return bad("valve_task_amplitude must lie in [0, 1)".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter >= 0.0) {
            return bad("noise sigma and jitter must be >= 0".into());
        }
        if self.num_classes() < 2 || self.size == 0 || self.frames < 2 {
            return bad("need >= 2 classes, a non-empty frame and >= 2 frames".into());
        }
        let lim = self.size as f64 - 1.0;
        let outer = self.rest_radius + self.thickness + self.jitter;
        let (cr, cc) = self.center;
        if cr - outer < 0.0 || cc - outer < 0.0 || cr + outer > lim || cc + outer > lim {
            return bad(format!(
                "annulus of outer radius {outer} around {:?} leaves the frame",
                self.center
            ));
        }
        let (hr, hc) = self.leaflet_hinge;
        let reach = self.leaflet_length + self.jitter;
        if hr - reach < 0.0 || hc - reach < 0.0 || hr + reach > lim || hc + reach > lim {
            return bad("leaflet leaves the frame".into());
        }
        self.sector.validate(self.size, self.size)
    }
}

/// One rendered clip plus its ground truth.
#[derive(Clone, Debug)]
pub struct PhantomClip {
    pub clip: CineLoop,
    /// `[H, W]`, 1 where the noiseless render changes over time.
    pub motion_mask: Tensor<f32>,
}

struct Geometry {
    center: (f64, f64),
    rest_radius: f64,
    hinge: (f64, f64),
}

/// Hard-edged: any pixel that changes jumps by a full intensity step.
fn band(d: f64, lo: f64, hi: f64) -> f64 {
    if d >= lo && d < hi {
        1.0
    } else {
        0.0
    }
}

fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

/// Noiseless intensity of every pixel at (continuous) frame time `t`.
fn render_frame(p: &PhantomParams, g: &Geometry, amplitude: f64, flutter: f64, t: f64) -> Vec<f64> {
    let n = p.size;
    let phase = 2.0 * PI * t.rem_euclid(p.frames as f64) / p.frames as f64;
    let inner = g.rest_radius * (1.0 - amplitude * (1.0 - phase.cos()) / 2.0);
    let outer = inner + p.thickness;
    let angle = (p.leaflet_angle_deg + flutter * (3.0 * phase).sin()).to_radians();
    let tip = (
        g.hinge.0 + p.leaflet_length * angle.cos(),
        g.hinge.1 + p.leaflet_length * angle.sin(),
    );
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let d = (r as f64 - g.center.0).hypot(c as f64 - g.center.1);
            let wall = band(d, inner, outer);
            let leaf = if distance_to_segment((r as f64, c as f64), g.hinge, tip) <= 1.0 {
                1.0
            } else {
                0.0
            };
            let mut v = p.background_level;
            v += wall * (p.wall_level - v);
            v += leaf * (p.leaflet_level - v);
            out.push(v);
        }
    }
    out
}

/// A static, bright annotation block in the top-left corner.
fn annotation(p: &PhantomParams) -> impl Fn(usize, usize) -> bool + '_ {
    move |r, c| (3..11).contains(&r) && (3..25).contains(&c) && !p.sector.contains(r, c)
}

/// Render one clip of class `class_id` from the stream keyed by `seed`.
pub fn generate_phantom_clip(p: &PhantomParams, class_id: usize, seed: u64, sample_id: &str) -> Result<PhantomClip> {
    p.validate()?;
    let (amplitude, flutter) = p.class_motion(class_id)?;
    let mut rng = sample_stream(seed, sample_id, 0);
    let mut j = || {
        if p.jitter > 0.0 {
            rng.random_range(-p.jitter..=p.jitter)
        } else {
            0.0
        }
    };
    let (dr, dc, drad) = (j(), j(), j());
    let g = Geometry {
        center: (p.center.0 + dr, p.center.1 + dc),
        rest_radius: p.rest_radius + drad,
        hinge: (p.leaflet_hinge.0 + dr, p.leaflet_hinge.1 + dc),
    };
    let n = p.size;
    let plane = n * n;
    let clean: Vec<Vec<f64>> = (0..p.frames)
        .map(|t| render_frame(p, &g, amplitude, flutter, t as f64))
        .collect();
    let motion: Vec<f32> = (0..plane)
        .map(|i| {
            let first = clean[0][i];
            if clean.iter().any(|f| f[i] != first) {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let in_sector = p.sector.mask(n, n);
    let text = annotation(p);
    let mut data = Vec::with_capacity(p.frames * plane);
    for f in &clean {
        for (i, &v) in f.iter().enumerate() {
            let (r, c) = (i / n, i % n);
            let value = if text(r, c) {
                235.0
            } else if !in_sector[i] {
                0.0
            } else if p.noise_sigma == 0.0 && p.speckle == (1.0, 1.0) {
                v
            } else {
                let s = if p.speckle.0 < p.speckle.1 {
                    rng.random_range(p.speckle.0..p.speckle.1)
                } else {
                    p.speckle.0
                };
                let e = if p.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                v * s + e
            };
            data.push(value.clamp(0.0, 255.0) as f32);
        }
    }
    let frames = Tensor::from_vec(vec![p.frames, n, n], data)?;
    Ok(PhantomClip {
        clip: CineLoop::new(frames, 0, p.frames, sample_id)?,
        motion_mask: Tensor::from_vec(vec![n, n], motion)?,
    })
}

/// Noiseless frame at an arbitrary time, used to check periodicity.
pub fn render_noiseless(p: &PhantomParams, class_id: usize, t: f64) -> Result<Vec<f64>> {
    p.validate()?;
    let (amplitude, flutter) = p.class_motion(class_id)?;
    let g = Geometry {
        center: p.center,
        rest_radius: p.rest_radius,
        hinge: p.leaflet_hinge,
    };
    Ok(render_frame(p, &g, amplitude, flutter, t))
}

/// Pixels whose temporal variance exceeds `tau`, as a `[H, W]` 0/1 tensor.
pub fn moving_region_mask(frames: &Tensor<f32>, tau: f64) -> Result<Tensor<f32>> {
    let [t, h, w]: [usize; 3] = frames
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("clip must be [T, H, W], got {:?}", frames.shape())))?;
    let plane = h * w;
    let d = frames.data();
    let out = (0..plane)
        .map(|p| {
            let mean = (0..t).map(|f| d[f * plane + p] as f64).sum::<f64>() / t as f64;
            let var = (0..t).map(|f| (d[f * plane + p] as f64 - mean).powi(2)).sum::<f64>() / t as f64;
            if var > tau {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(vec![h, w], out)
}

/// Sample ids of a generated dataset, in manifest order.
pub fn sample_id(class_id: usize, index: usize) -> String {
    format!("c{class_id}_{index:04}")
}

/// Write `per_class` clips of every class as `<id>.ect`, their motion masks
/// as `<id>.mask.ect`, and `manifest.tsv` into `out_dir`.
pub fn generate_dataset(per_class: usize, p: &PhantomParams, out_dir: impl AsRef<Path>, seed: u64) -> Result<Manifest> {
    if per_class < 3 {
        return Err(Error::InvalidArgument(format!(
            "per_class must be >= 3, got {per_class}"
        )));
    }
    p.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jobs: Vec<(usize, usize)> = (0..p.num_classes())
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .collect();
    use rayon::prelude::*;
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let id = sample_id(c, i);
            let clip = generate_phantom_clip(p, c, seed, &id)?;
            ect::write(dir.join(format!("{id}.ect")), &clip.clip.frames)?;
            ect::write(dir.join(format!("{id}.mask.ect")), &clip.motion_mask)?;
            Ok(ManifestEntry {
                path: format!("{id}.ect").into(),
                label: c,
                cycle_start: 0,
                cycle_len: p.frames,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        entries,
        class_names: p.class_names(),
    };
    manifest.write(dir.join("manifest.tsv"))?;
    Ok(manifest)
}
