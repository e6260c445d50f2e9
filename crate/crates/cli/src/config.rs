//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use echodx_core::net::NetworkConfig;
use echodx_core::phantom::{PhantomParams, PhantomTask};
use echodx_core::preprocess::{AugmentRange, PreprocessConfig};
use echodx_core::train::{AdamConfig, TrainConfig};
use echodx_core::tsne::TsneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetPreset {
    Default,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Phantom,
    Scanner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedSources {
    Features,
    Pixels,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub task: PhantomTask,
    pub per_class: usize,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Defaults to `<data_dir>/manifest.tsv`.
    pub manifest: Option<PathBuf>,
    pub geometry: Geometry,
    pub drop_static_bright: bool,
    pub net_preset: NetPreset,
    /// `net.<key>` overrides applied on top of the preset, in file order.
    pub net_overrides: Vec<(String, String)>,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_shift: f64,
    pub max_rotation_deg: f64,
    pub fractions: [f64; 3],
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub embed_source: EmbedSources,
    pub baseline: String,
    pub attribute_class: usize,
    pub attribute_top: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let tsne = TsneConfig::default();
        Self {
            seed: 0,
            task: PhantomTask::Lv,
            per_class: 60,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            manifest: None,
            geometry: Geometry::Phantom,
            drop_static_bright: true,
            net_preset: NetPreset::Desk,
            net_overrides: Vec::new(),
            lr: train.adam.lr,
            batch_size: train.batch_size,
            patience: train.patience,
            max_epochs: train.max_epochs,
            max_shift: train.augment.max_shift,
            max_rotation_deg: train.augment.max_rotation_deg,
            fractions: [0.7, 0.1, 0.2],
            perplexity: tsne.perplexity,
            tsne_iterations: tsne.iterations,
            embed_source: EmbedSources::Both,
            baseline: "zeros".into(),
            attribute_class: 0,
            attribute_top: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.network()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "task" => self.task = value.parse().map_err(|e| ConfigError(format!("{e}")))?,
            "per_class" => self.per_class = parse(key, value)?,
            "data_dir" => self.data_dir = value.into(),
            "run_dir" => self.run_dir = value.into(),
            "manifest" => self.manifest = Some(value.into()),
            "geometry" => {
                self.geometry = match value {
                    "phantom" => Geometry::Phantom,
                    "scanner" => Geometry::Scanner,
                    _ => return Err(ConfigError(format!("geometry: expected phantom|scanner, got {value:?}"))),
                }
            }
            "drop_static_bright" => self.drop_static_bright = parse(key, value)?,
            "net.preset" => {
                self.net_preset = match value {
                    "default" => NetPreset::Default,
                    "desk" => NetPreset::Desk,
                    _ => return Err(ConfigError(format!("net.preset: expected default|desk, got {value:?}"))),
                }
            }
            k if k.starts_with("net.") => {
                // validated against the network config right away
                let mut probe = NetworkConfig::default();
                probe
                    .set(&k[4..], value)
                    .map_err(|e| ConfigError(e.to_string()))?;
                self.net_overrides.push((k[4..].to_string(), value.to_string()));
            }
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "max_shift" => self.max_shift = parse(key, value)?,
            "max_rotation_deg" => self.max_rotation_deg = parse(key, value)?,
            "train_frac" => self.fractions[0] = parse(key, value)?,
            "val_frac" => self.fractions[1] = parse(key, value)?,
            "test_frac" => self.fractions[2] = parse(key, value)?,
            "perplexity" => self.perplexity = parse(key, value)?,
            "tsne_iterations" => self.tsne_iterations = parse(key, value)?,
            "embed_source" => {
                self.embed_source = match value {
                    "features" => EmbedSources::Features,
                    "pixels" => EmbedSources::Pixels,
                    "both" => EmbedSources::Both,
                    _ => {
                        return Err(ConfigError(format!(
                            "embed_source: expected features|pixels|both, got {value:?}"
                        )))
                    }
                }
            }
            "baseline" => {
                if !matches!(value, "zeros" | "temporal_mean") {
                    return Err(ConfigError(format!(
                        "baseline: expected zeros|temporal_mean, got {value:?}"
                    )));
                }
                self.baseline = value.into();
            }
            "attribute_class" => self.attribute_class = parse(key, value)?,
            "attribute_top" => self.attribute_top = parse(key, value)?,
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("task", self.task.to_string());
        kv("per_class", self.per_class.to_string());
        kv("data_dir", self.data_dir.display().to_string());
        kv("run_dir", self.run_dir.display().to_string());
        if let Some(m) = &self.manifest {
            kv("manifest", m.display().to_string());
        }
        kv(
            "geometry",
            match self.geometry {
                Geometry::Phantom => "phantom",
                Geometry::Scanner => "scanner",
            }
            .into(),
        );
        kv("drop_static_bright", self.drop_static_bright.to_string());
        kv(
            "net.preset",
            match self.net_preset {
                NetPreset::Default => "default",
                NetPreset::Desk => "desk",
            }
            .into(),
        );
        for (k, v) in &self.net_overrides {
            kv(&format!("net.{k}"), v.clone());
        }
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("patience", self.patience.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("max_shift", self.max_shift.to_string());
        kv("max_rotation_deg", self.max_rotation_deg.to_string());
        kv("train_frac", self.fractions[0].to_string());
        kv("val_frac", self.fractions[1].to_string());
        kv("test_frac", self.fractions[2].to_string());
        kv("perplexity", self.perplexity.to_string());
        kv("tsne_iterations", self.tsne_iterations.to_string());
        kv(
            "embed_source",
            match self.embed_source {
                EmbedSources::Features => "features",
                EmbedSources::Pixels => "pixels",
                EmbedSources::Both => "both",
            }
            .into(),
        );
        kv("baseline", self.baseline.clone());
        kv("attribute_class", self.attribute_class.to_string());
        kv("attribute_top", self.attribute_top.to_string());
        s
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.data_dir.join("manifest.tsv"))
    }

    /// Network architecture before the class count is taken from the data.
    pub fn network(&self) -> Result<NetworkConfig, ConfigError> {
        let mut net = match self.net_preset {
            NetPreset::Default => NetworkConfig::default(),
            NetPreset::Desk => NetworkConfig::desk(),
        };
        for (k, v) in &self.net_overrides {
            net.set(k, v).map_err(|e| ConfigError(e.to_string()))?;
        }
        net.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(net)
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        let mut p = match self.geometry {
            Geometry::Phantom => PreprocessConfig::phantom(),
            Geometry::Scanner => PreprocessConfig::scanner(),
        };
        p.drop_static_bright = self.drop_static_bright;
        p
    }

    pub fn phantom(&self) -> PhantomParams {
        PhantomParams {
            task: self.task,
            ..PhantomParams::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
            augment: AugmentRange {
                max_shift: self.max_shift,
                max_rotation_deg: self.max_rotation_deg,
            },
        }
    }

    pub fn tsne(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.tsne_iterations,
            seed: self.seed,
            ..TsneConfig::default()
        }
    }
}
