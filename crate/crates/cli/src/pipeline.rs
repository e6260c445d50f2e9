//! Pipeline stages. Each reads and writes the documented run-directory
//! files, so stages can run separately or back to back.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use echodx_core::dataset::Manifest;
use echodx_core::deeplift::{deeplift_attribute, export_heatmaps, rank_by_class_probability, Baseline};
use echodx_core::metrics::MetricsReport;
use echodx_core::net::{build_network, checkpoint, Network};
use echodx_core::phantom::generate_dataset;
use echodx_core::preprocess::{mask_and_resample, prepare_clip, ReferenceHistogram};
use echodx_core::train::{argmax, fit, log_tsv, predict_proba, stratified_split, Sample, Split, Subset};
use echodx_core::tsne::{embed_rows, EmbedSource, Embedding};
use echodx_core::{ect, Error, Tensor};
use rayon::prelude::*;

use crate::config::{EmbedSources, RunConfig};

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for echodx_core::Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> echodx_core::Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> echodx_core::Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn note(stage: &str, msg: impl std::fmt::Display) {
    eprintln!("[{stage}] {msg}");
}

/// File names inside a run directory.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
    pub fn split(&self) -> PathBuf {
        self.file("split.tsv")
    }
    pub fn reference(&self) -> PathBuf {
        self.file("reference_hist.ect")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.file("best.ckpt")
    }
}

pub fn synth(cfg: &RunConfig) -> StageResult<Manifest> {
    const STAGE: &str = "synth";
    let started = Instant::now();
    let m = generate_dataset(cfg.per_class, &cfg.phantom(), &cfg.data_dir, cfg.seed).stage(STAGE)?;
    note(
        STAGE,
        format!(
            "{} clips of task {} in {} ({:.1}s)",
            m.entries.len(),
            cfg.task,
            cfg.data_dir.display(),
            started.elapsed().as_secs_f64()
        ),
    );
    Ok(m)
}

fn read_manifest(cfg: &RunConfig, stage: &'static str) -> StageResult<Manifest> {
    let m = Manifest::read(cfg.manifest_path()).stage(stage)?;
    if m.entries.is_empty() {
        return Err(StageError {
            stage,
            source: Error::InvalidArgument(format!("manifest {} has no samples", cfg.manifest_path().display())),
        });
    }
    Ok(m)
}

fn split_tsv(m: &Manifest, split: &Split) -> String {
    let mut s = String::from("sample_id\tsubset\n");
    for (e, sub) in m.entries.iter().zip(&split.assignment) {
        let _ = writeln!(s, "{}\t{}", e.sample_id(), sub.name());
    }
    s
}

fn read_split(path: &Path, m: &Manifest) -> echodx_core::Result<Split> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut by_id = HashMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let (id, sub) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            what: "split",
            detail: format!("expected `sample_id<TAB>subset`, got {line:?}"),
        })?;
        by_id.insert(id.to_string(), Subset::parse(sub.trim())?);
    }
    let assignment = m
        .entries
        .iter()
        .map(|e| {
            by_id.get(&e.sample_id()).copied().ok_or_else(|| Error::Malformed {
                what: "split",
                detail: format!("sample {} is not assigned", e.sample_id()),
            })
        })
        .collect::<echodx_core::Result<_>>()?;
    Ok(Split { assignment })
}

/// Stratified split of the manifest, written to `split.tsv`.
pub fn split(cfg: &RunConfig, m: &Manifest, stage: &'static str) -> StageResult<Split> {
    let run = RunDir(cfg.run_dir.clone());
    create_dir(&run.0).stage(stage)?;
    let s = stratified_split(&m.labels(), cfg.fractions, cfg.seed).stage(stage)?;
    write_file(&run.split(), split_tsv(m, &s)).stage(stage)?;
    let count = |x| s.indices(x).len();
    note(
        stage,
        format!(
            "train {} / val {} / test {}",
            count(Subset::Train),
            count(Subset::Val),
            count(Subset::Test)
        ),
    );
    Ok(s)
}

/// The run's split: reuse `split.tsv` when present, otherwise create it.
fn ensure_split(cfg: &RunConfig, m: &Manifest, stage: &'static str) -> StageResult<Split> {
    let path = RunDir(cfg.run_dir.clone()).split();
    if path.exists() {
        read_split(&path, m).stage(stage)
    } else {
        split(cfg, m, stage)
    }
}

fn load_split(cfg: &RunConfig, m: &Manifest, stage: &'static str) -> StageResult<Split> {
    read_split(&RunDir(cfg.run_dir.clone()).split(), m).stage(stage)
}

/// Intensity reference pooled over the training clips' in-sector pixels.
fn build_reference(cfg: &RunConfig, m: &Manifest, train: &[usize]) -> echodx_core::Result<ReferenceHistogram> {
    let pp = cfg.preprocess();
    let parts: Vec<ReferenceHistogram> = train
        .par_iter()
        .map(|&i| {
            let (frames, keep) = mask_and_resample(&m.load_clip(i)?, &pp)?;
            let mut h = ReferenceHistogram::default();
            h.add(&frames, Some(&keep));
            Ok(h)
        })
        .collect::<echodx_core::Result<_>>()?;
    let mut total = ReferenceHistogram::default();
    for p in parts {
        for (t, c) in total.counts.iter_mut().zip(p.counts) {
            *t += c;
        }
    }
    Ok(total)
}

fn load_reference(cfg: &RunConfig) -> echodx_core::Result<ReferenceHistogram> {
    ReferenceHistogram::from_tensor(&ect::read(RunDir(cfg.run_dir.clone()).reference())?)
}

fn prepare(
    cfg: &RunConfig,
    m: &Manifest,
    indices: &[usize],
    reference: &ReferenceHistogram,
) -> echodx_core::Result<Vec<Sample>> {
    let pp = cfg.preprocess();
    indices
        .par_iter()
        .map(|&i| {
            let clip = m.load_clip(i)?;
            Ok(Sample {
                id: clip.sample_id.clone(),
                label: m.entries[i].label,
                clip: prepare_clip(&clip, &pp, reference)?,
            })
        })
        .collect()
}

/// Split plus reference histogram; optionally writes every prepared clip.
pub fn preprocess(cfg: &RunConfig, write_clips: bool) -> StageResult<()> {
    const STAGE: &str = "preprocess";
    let m = read_manifest(cfg, STAGE)?;
    let s = ensure_split(cfg, &m, STAGE)?;
    let run = RunDir(cfg.run_dir.clone());
    let reference = build_reference(cfg, &m, &s.indices(Subset::Train)).stage(STAGE)?;
    ect::write(run.reference(), &reference.to_tensor()).stage(STAGE)?;
    if write_clips {
        let dir = run.file("prepared");
        create_dir(&dir).stage(STAGE)?;
        let all: Vec<usize> = (0..m.entries.len()).collect();
        let samples = prepare(cfg, &m, &all, &reference).stage(STAGE)?;
        let mut out = Manifest {
            entries: Vec::new(),
            class_names: m.class_names.clone(),
        };
        for (s, e) in samples.iter().zip(&m.entries) {
            let name = format!("{}.ect", s.id);
            ect::write(dir.join(&name), &s.clip).stage(STAGE)?;
            out.entries.push(echodx_core::dataset::ManifestEntry {
                path: name.into(),
                label: e.label,
                cycle_start: 0,
                cycle_len: s.clip.shape()[0],
            });
        }
        out.write(dir.join("manifest.tsv")).stage(STAGE)?;
        note(STAGE, format!("{} prepared clips in {}", samples.len(), dir.display()));
    }
    Ok(())
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs: usize,
    pub accuracy: f64,
}

pub fn train(cfg: &RunConfig) -> StageResult<TrainSummary> {
    const STAGE: &str = "train";
    let started = Instant::now();
    let m = read_manifest(cfg, STAGE)?;
    let run = RunDir(cfg.run_dir.clone());
    create_dir(&run.0).stage(STAGE)?;
    write_file(&run.file("config.txt"), cfg.to_text()).stage(STAGE)?;
    let s = ensure_split(cfg, &m, STAGE)?;
    let reference = build_reference(cfg, &m, &s.indices(Subset::Train)).stage(STAGE)?;
    ect::write(run.reference(), &reference.to_tensor()).stage(STAGE)?;
    let train_set = prepare(cfg, &m, &s.indices(Subset::Train), &reference).stage(STAGE)?;
    let val_set = prepare(cfg, &m, &s.indices(Subset::Val), &reference).stage(STAGE)?;

    let mut net_cfg = cfg
        .network()
        .map_err(|e| Error::Config(e.0))
        .stage(STAGE)?;
    net_cfg.num_classes = m.num_classes();
    let mut net = build_network(&net_cfg, cfg.seed).stage(STAGE)?;
    let outcome = fit(&mut net, &train_set, &val_set, &cfg.train(), |e| {
        note(
            STAGE,
            format!(
                "epoch {:>3}  train {:.4}  val {:.4}  ({:.0}s)",
                e.epoch,
                e.train_loss,
                e.val_loss,
                started.elapsed().as_secs_f64()
            ),
        )
    })
    .stage(STAGE)?;
    write_file(&run.file("log.tsv"), log_tsv(&outcome.history)).stage(STAGE)?;
    checkpoint::save(&net, run.checkpoint()).stage(STAGE)?;
    note(
        STAGE,
        format!(
            "best epoch {} of {} (val loss {:.4}){}",
            outcome.best_epoch,
            outcome.history.len(),
            outcome.best_val_loss,
            if outcome.stopped_early { ", stopped early" } else { "" }
        ),
    );
    let accuracy = evaluate_with(cfg, &m, &s, &net, &reference, "train")?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        accuracy,
    })
}

fn load_net(cfg: &RunConfig, stage: &'static str) -> StageResult<Network<f32>> {
    let path = RunDir(cfg.run_dir.clone()).checkpoint();
    if !path.exists() {
        return Err(StageError {
            stage,
            source: Error::InvalidArgument(format!("no trained checkpoint at {}", path.display())),
        });
    }
    let mut net = checkpoint::load(&path).stage(stage)?;
    net.frozen = true;
    Ok(net)
}

fn evaluate_with(
    cfg: &RunConfig,
    m: &Manifest,
    s: &Split,
    net: &Network<f32>,
    reference: &ReferenceHistogram,
    stage: &'static str,
) -> StageResult<f64> {
    let run = RunDir(cfg.run_dir.clone());
    let test = prepare(cfg, m, &s.indices(Subset::Test), reference).stage(stage)?;
    let probs = predict_proba(net, &test, cfg.batch_size).stage(stage)?;
    let truth: Vec<usize> = test.iter().map(|t| t.label).collect();
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let report = MetricsReport::from_labels(&truth, &pred, m.num_classes()).stage(stage)?;
    let names = m.names();
    write_file(&run.file("metrics.tsv"), report.metrics_tsv(&names)).stage(stage)?;
    write_file(&run.file("confusion.tsv"), report.confusion_tsv(&names)).stage(stage)?;
    let mut pt = String::from("sample_id\tlabel\tpredicted");
    for n in &names {
        let _ = write!(pt, "\tp_{n}");
    }
    pt.push('\n');
    for ((t, p), probs) in test.iter().zip(&pred).zip(&probs) {
        let _ = write!(pt, "{}\t{}\t{}", t.id, t.label, p);
        for v in probs {
            let _ = write!(pt, "\t{v:.6}");
        }
        pt.push('\n');
    }
    write_file(&run.file("predictions.tsv"), pt).stage(stage)?;
    note(
        stage,
        format!("test accuracy {:.4} on {} clips", report.accuracy, test.len()),
    );
    Ok(report.accuracy)
}

pub fn eval(cfg: &RunConfig) -> StageResult<f64> {
    const STAGE: &str = "eval";
    let m = read_manifest(cfg, STAGE)?;
    let s = load_split(cfg, &m, STAGE)?;
    let net = load_net(cfg, STAGE)?;
    let reference = load_reference(cfg).stage(STAGE)?;
    evaluate_with(cfg, &m, &s, &net, &reference, STAGE)
}

fn embedding_summary(e: &Embedding, source: &str) -> String {
    let (intra, inter) = e.intra_inter_distances();
    format!(
        "{source}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
        e.points.len(),
        e.initial_kl,
        e.final_kl,
        intra,
        inter
    )
}

pub fn embed(cfg: &RunConfig, sources: EmbedSources) -> StageResult<()> {
    const STAGE: &str = "embed";
    let m = read_manifest(cfg, STAGE)?;
    let run = RunDir(cfg.run_dir.clone());
    let reference = load_reference(cfg).stage(STAGE)?;
    let net = match sources {
        EmbedSources::Pixels => None,
        _ => Some(load_net(cfg, STAGE)?),
    };
    let all: Vec<usize> = (0..m.entries.len()).collect();
    let samples = prepare(cfg, &m, &all, &reference).stage(STAGE)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let tsne = cfg.tsne();
    let mut summary = String::from("source\tn\tinitial_kl\tfinal_kl\tmean_intra\tmean_inter\n");
    if let Some(net) = &net {
        let mut features: Vec<Vec<f32>> = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(cfg.batch_size.max(1)) {
            let clips: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|s| {
                    let mut shape = vec![1];
                    shape.extend_from_slice(s.clip.shape());
                    s.clip.clone().reshape(&shape)
                })
                .collect::<echodx_core::Result<_>>()
                .stage(STAGE)?;
            let batch = Tensor::stack(&clips).stage(STAGE)?;
            let f = net.extract_features(&batch).stage(STAGE)?;
            features.extend(f.data().chunks(net.feature_dim()).map(|r| r.to_vec()));
        }
        let e = embed_rows(ids.clone(), &features, labels.clone(), EmbedSource::Features, &tsne).stage(STAGE)?;
        e.write(run.file("embedding.tsv")).stage(STAGE)?;
        summary.push_str(&embedding_summary(&e, "features"));
        note(
            STAGE,
            format!("features: {} × {} → 2-D, KL {:.4}", features.len(), net.feature_dim(), e.final_kl),
        );
    }
    if sources != EmbedSources::Features {
        let rows: Vec<&[f32]> = samples.iter().map(|s| s.clip.data()).collect();
        let e = embed_rows(ids, &rows, labels, EmbedSource::Pixels, &tsne).stage(STAGE)?;
        e.write(run.file("embedding_pixels.tsv")).stage(STAGE)?;
        summary.push_str(&embedding_summary(&e, "pixels"));
        note(
            STAGE,
            format!("pixels: {} × {} → 2-D, KL {:.4}", rows.len(), rows[0].len(), e.final_kl),
        );
    }
    write_file(&run.file("embedding_summary.tsv"), summary).stage(STAGE)
}

/// Test clips ordered by decreasing probability of `class`, as
/// `(sample_id, label, probability)`; also written to `ranking.tsv`.
pub fn rank(cfg: &RunConfig, class: usize, subset: Subset) -> StageResult<Vec<(usize, String, usize, f64)>> {
    const STAGE: &str = "rank-normal";
    let m = read_manifest(cfg, STAGE)?;
    if class >= m.num_classes() {
        return Err(StageError {
            stage: STAGE,
            source: Error::LabelOutOfRange {
                label: class,
                classes: m.num_classes(),
            },
        });
    }
    let s = load_split(cfg, &m, STAGE)?;
    let net = load_net(cfg, STAGE)?;
    let reference = load_reference(cfg).stage(STAGE)?;
    let idx = s.indices(subset);
    let samples = prepare(cfg, &m, &idx, &reference).stage(STAGE)?;
    let probs = predict_proba(&net, &samples, cfg.batch_size).stage(STAGE)?;
    let order = rank_by_class_probability(&probs, class);
    let mut out = String::from("rank\tsample_id\tlabel\tprobability\n");
    let mut ranked = Vec::new();
    for (r, &i) in order.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r + 1, samples[i].id, samples[i].label, probs[i][class]);
        ranked.push((idx[i], samples[i].id.clone(), samples[i].label, probs[i][class]));
    }
    write_file(&RunDir(cfg.run_dir.clone()).file("ranking.tsv"), out).stage(STAGE)?;
    Ok(ranked)
}

/// Ground-truth motion mask stored next to a phantom clip.
fn mask_path(clip_path: &Path) -> PathBuf {
    let stem = clip_path.file_stem().unwrap_or_default().to_string_lossy();
    clip_path.with_file_name(format!("{stem}.mask.ect"))
}

pub struct AttributionSummary {
    pub samples: Vec<String>,
    /// Positive relevance inside the motion mask over all positive
    /// relevance, pooled over the attributed clips that have a mask.
    pub mask_fraction: Option<f64>,
    pub mask_area: Option<f64>,
}

pub fn attribute(cfg: &RunConfig, class: usize, chosen: &[String], top: usize) -> StageResult<AttributionSummary> {
    const STAGE: &str = "attribute";
    let targets: Vec<usize> = if chosen.is_empty() {
        rank(cfg, cfg.attribute_class, Subset::Test)?
            .into_iter()
            .take(top.max(1))
            .map(|r| r.0)
            .collect()
    } else {
        let m = read_manifest(cfg, STAGE)?;
        chosen
            .iter()
            .map(|id| {
                m.entries
                    .iter()
                    .position(|e| &e.sample_id() == id)
                    .ok_or_else(|| StageError {
                        stage: STAGE,
                        source: Error::InvalidArgument(format!("sample {id:?} is not in the manifest")),
                    })
            })
            .collect::<StageResult<_>>()?
    };
    let m = read_manifest(cfg, STAGE)?;
    let net = load_net(cfg, STAGE)?;
    let reference = load_reference(cfg).stage(STAGE)?;
    let samples = prepare(cfg, &m, &targets, &reference).stage(STAGE)?;
    let run = RunDir(cfg.run_dir.clone());
    let mut table = String::from("sample_id\tlabel\ttarget\tbaseline\tdelta_logit\tcompleteness_error\tmask_fraction\tmask_area\n");
    let (mut inside, mut total, mut areas) = (0.0f64, 0.0f64, Vec::new());
    for (s, &i) in samples.iter().zip(&targets) {
        let baseline = match cfg.baseline.as_str() {
            "temporal_mean" => Baseline::temporal_mean(&s.clip).stage(STAGE)?,
            _ => Baseline::zeros(s.clip.shape()),
        };
        let map = deeplift_attribute(&net, &s.clip, &s.id, class, &baseline).stage(STAGE)?;
        export_heatmaps(&map, run.file("heatmaps").join(&s.id)).stage(STAGE)?;
        let mpath = mask_path(&m.entries[i].path);
        let mut cols = ["NA".to_string(), "NA".to_string()];
        if mpath.exists() {
            let mask = ect::read(&mpath).stage(STAGE)?;
            let plane = mask.numel();
            if map.values.numel() % plane == 0 {
                let (mut a, mut b) = (0.0f64, 0.0f64);
                for (k, &v) in map.values.data().iter().enumerate() {
                    if v > 0.0 {
                        b += v as f64;
                        if mask.data()[k % plane] > 0.5 {
                            a += v as f64;
                        }
                    }
                }
                let area = mask.sum() as f64 / plane as f64;
                inside += a;
                total += b;
                areas.push(area);
                cols = [format!("{:.6}", if b > 0.0 { a / b } else { 0.0 }), format!("{area:.6}")];
            }
        }
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.3e}\t{}\t{}",
            s.id,
            s.label,
            class,
            map.baseline_id,
            map.logit - map.baseline_logit,
            map.completeness_error(),
            cols[0],
            cols[1]
        );
    }
    let mask_fraction = (!areas.is_empty()).then(|| if total > 0.0 { inside / total } else { 0.0 });
    let mask_area = (!areas.is_empty()).then(|| areas.iter().sum::<f64>() / areas.len() as f64);
    if let (Some(f), Some(a)) = (mask_fraction, mask_area) {
        let _ = writeln!(table, "pooled\t\t{class}\t{}\t\t\t{f:.6}\t{a:.6}", cfg.baseline);
        note(
            STAGE,
            format!(
                "{} maps, {:.1}% of positive relevance inside the motion mask (mean mask area {:.1}%)",
                samples.len(),
                100.0 * f,
                100.0 * a
            ),
        );
    }
    write_file(&run.file("attribution.tsv"), table).stage(STAGE)?;
    Ok(AttributionSummary {
        samples: samples.iter().map(|s| s.id.clone()).collect(),
        mask_fraction,
        mask_area,
    })
}
