//! Exact t-SNE into two dimensions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stage_stream;
use crate::tensor::Real;

/// Symmetrized joint affinities.
#[derive(Clone, Debug)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Row-major `n × n`.
    pub p: Vec<f64>,
    pub perplexity: f64,
    /// Gaussian bandwidth of every point, in the units of the input.
    pub sigma: Vec<f64>,
    /// Largest |H_i − log2 perplexity| over the rows, in bits.
    pub max_entropy_error: f64,
}

/// Squared Euclidean distances between rows, `n × n` row-major.
pub fn pairwise_sq_distances<T: Real, R: AsRef<[T]> + Sync>(rows: &[R]) -> Result<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Shape("all rows must have the same length".into()));
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = rows[i].as_ref();
            (i + 1..n)
                .map(|j| {
                    a.iter()
                        .zip(rows[j].as_ref())
                        .map(|(&x, &y)| {
                            let t = (x - y).to_f64().unwrap_or(f64::NAN);
                            t * t
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// Conditional distribution of one row at precision `beta` over distances
/// already shifted so the smallest is zero. Returns entropy in bits.
fn conditional_row(dist: &[f64], self_index: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == self_index { 0.0 } else { (-beta * d).exp() };
        z += *o;
        weighted += *o * d;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    (z.ln() + beta * weighted / z) / std::f64::consts::LN_2
}

const MAX_BISECTION_STEPS: usize = 64;
const ENTROPY_TOLERANCE: f64 = 1e-4;

/// Affinities from squared distances. Bisection runs on `ln β` so that both
/// very tight and very loose neighbourhoods are reachable.
pub fn affinities_from_distances(dist: &[f64], n: usize, perplexity: f64) -> Result<AffinityMatrix> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "t-SNE needs at least 3 points, got {n}"
        )));
    }
    if dist.len() != n * n {
        return Err(Error::Shape(format!(
            "distance matrix has {} entries, expected {}",
            dist.len(),
            n * n
        )));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity must lie in (1, {n}) for {n} points, got {perplexity}"
        )));
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("pairwise distances".into()));
    }
    let scale = dist.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InvalidArgument("all points are identical".into()));
    }
    let target = perplexity.log2();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let raw = &dist[i * n..(i + 1) * n];
            let min = (0..n).filter(|&j| j != i).map(|j| raw[j]).fold(f64::INFINITY, f64::min);
            let d: Vec<f64> = raw.iter().map(|&v| (v - min) / scale).collect();
            let mut p = vec![0.0; n];
            let (mut lo, mut hi) = (-60.0f64, 60.0f64);
            let mut log_beta = 0.0;
            let mut h = conditional_row(&d, i, 1.0, &mut p);
            for _ in 0..MAX_BISECTION_STEPS {
                if (h - target).abs() < ENTROPY_TOLERANCE * 1e-3 {
                    break;
                }
                // entropy falls as the precision grows
                if h > target {
                    lo = log_beta;
                } else {
                    hi = log_beta;
                }
                log_beta = 0.5 * (lo + hi);
                h = conditional_row(&d, i, log_beta.exp(), &mut p);
            }
            let sigma = (scale / (2.0 * log_beta.exp())).sqrt();
            (p, sigma, (h - target).abs())
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
        }
    }
    Ok(AffinityMatrix {
        n,
        p,
        perplexity,
        sigma: rows.iter().map(|r| r.1).collect(),
        max_entropy_error: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// Affinities of the rows of `x` at the given perplexity.
pub fn calibrate_affinities<T: Real, R: AsRef<[T]> + Sync>(x: &[R], perplexity: f64) -> Result<AffinityMatrix> {
    affinities_from_distances(&pairwise_sq_distances(x)?, x.len(), perplexity)
}

/// Σ_{i≠j} P log(P/Q) in nats, with 0·log 0 = 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("P has {} entries, Q has {}", p.len(), q.len())));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum())
}

/// Student-t joint similarities of a 2-D embedding, `n × n` row-major.
pub fn student_t_q(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    }
    let z: f64 = num.iter().sum();
    num.iter_mut().for_each(|v| *v /= z);
    num
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_sigma: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    /// KL right after early exaggeration ends.
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Exact KL gradient. Rows are independent so the result does not depend on
/// the thread schedule.
fn gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let num: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z: f64 = num.iter().map(|r| r.iter().sum::<f64>()).sum();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i][j];
                let m = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

/// Gradient descent on the KL objective from a seeded Gaussian start.
///
/// Step sizes use the per-coordinate adaptive gains of the reference
/// implementation (+0.2 on sign change, ×0.8 otherwise, floor 0.01).
pub fn tsne_optimize(aff: &AffinityMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = aff.n;
    let normal = Normal::new(0.0, cfg.init_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stage_stream(cfg.seed, "tsne", 0);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut initial_kl = None;
    for it in 0..cfg.iterations {
        if it == cfg.exaggeration_iterations {
            initial_kl = Some(kl_divergence(&aff.p, &student_t_q(&y))?);
        }
        let (exag, momentum) = if it < cfg.exaggeration_iterations {
            (cfg.exaggeration, cfg.initial_momentum)
        } else {
            (1.0, cfg.final_momentum)
        };
        let g = gradient(&aff.p, &y, exag);
        if g.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE gradient at iteration {it}")));
        }
        for i in 0..n {
            for k in 0..2 {
                let gain = &mut gains[i][k];
                *gain = if (g[i][k] > 0.0) != (velocity[i][k] > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - cfg.learning_rate * *gain * g[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
    }
    let final_kl = kl_divergence(&aff.p, &student_t_q(&y))?;
    Ok(TsneResult {
        points: y,
        initial_kl: initial_kl.unwrap_or(final_kl),
        final_kl,
    })
}

/// What was embedded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedSource {
    Pixels,
    Features,
}

impl std::str::FromStr for EmbedSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixels" => Ok(Self::Pixels),
            "features" => Ok(Self::Features),
            other => Err(Error::Config(format!(
                "unknown embedding source {other:?} (pixels|features)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub source: EmbedSource,
    pub initial_kl: f64,
    pub final_kl: f64,
}

impl Embedding {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("sample_id\tx\ty\tlabel\n");
        for ((id, p), l) in self.ids.iter().zip(&self.points).zip(&self.labels) {
            let _ = writeln!(s, "{id}\t{:.6}\t{:.6}\t{l}", p[0], p[1]);
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Mean pairwise distance within classes and across classes.
    pub fn intra_inter_distances(&self) -> (f64, f64) {
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.points.len() {
            for j in i + 1..self.points.len() {
                let (a, b) = (self.points[i], self.points[j]);
                let d = (a[0] - b[0]).hypot(a[1] - b[1]);
                if self.labels[i] == self.labels[j] {
                    intra += d;
                    ni += 1;
                } else {
                    inter += d;
                    nx += 1;
                }
            }
        }
        (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
    }
}

/// Embed `rows` (one per sample) and attach ids and labels.
pub fn embed_rows<T: Real, R: AsRef<[T]> + Sync>(
    ids: Vec<String>,
    rows: &[R],
    labels: Vec<usize>,
    source: EmbedSource,
    cfg: &TsneConfig,
) -> Result<Embedding> {
    if ids.len() != rows.len() || labels.len() != rows.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} rows and {} labels",
            ids.len(),
            rows.len(),
            labels.len()
        )));
    }
    let aff = calibrate_affinities(rows, cfg.perplexity)?;
    let r = tsne_optimize(&aff, cfg)?;
    Ok(Embedding {
        ids,
        points: r.points,
        labels,
        source,
        initial_kl: r.initial_kl,
        final_kl: r.final_kl,
    })
}

/// Fraction of points whose nearest other point shares their label.
pub fn nearest_neighbor_agreement(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let hits = (0..n)
        .filter(|&i| {
            let nn = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (points[a][0] - points[i][0]).hypot(points[a][1] - points[i][1]);
                    let db = (points[b][0] - points[i][0]).hypot(points[b][1] - points[i][1]);
                    da.total_cmp(&db)
                })
                .expect("at least two points");
            labels[nn] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_neighbours_split_evenly() {
        let x = vec![vec![0.0f64, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let d = pairwise_sq_distances(&x).unwrap();
        let aff = affinities_from_distances(&d, 3, 2.0).unwrap();
        assert!(aff.max_entropy_error < 1e-4);
        // row 0 contributes 1/2 to each neighbour, rows 1 and 2 split theirs
        // over different partners, so P_01 = (1/2 + P_{0|1}) / 6
        let mut row = vec![0.0; 3];
        conditional_row(&[0.0, 0.0, 0.0], 0, 1.0, &mut row);
        assert_eq!(row, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn identical_points_rejected() {
        let x = vec![vec![1.0f64; 3]; 4];
        assert!(calibrate_affinities(&x, 2.0).is_err());
        let y = vec![vec![0.0f64], vec![1.0], vec![2.0]];
        assert!(calibrate_affinities(&y, 3.0).is_err());
    }
}
