use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Nonlinearity between convolutions. `Identity` yields a purely linear
/// network, used to check attribution against gradient × input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Architecture of the factorized (2+1)D residual classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Output channels per residual stage; the last entry is the feature width.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Channels between the stem's spatial and temporal convolutions.
    pub stem_midplane: usize,
    /// Spatial extent of the stem's 1×k×k kernel.
    pub stem_kernel: usize,
    /// Spatial stride of the stem (applied to H and W).
    pub stem_stride: usize,
    /// Spatial extent `d` of the residual blocks' 1×d×d kernels.
    pub spatial_kernel: usize,
    /// Temporal extent `t` of every t×1×1 kernel.
    pub temporal_kernel: usize,
    pub num_classes: usize,
    /// Per-sample input extents (C, T, H, W).
    pub input_shape: [usize; 4],
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            stem_midplane: 45,
            stem_kernel: 7,
            stem_stride: 2,
            spatial_kernel: 3,
            temporal_kernel: 3,
            num_classes: 3,
            input_shape: [1, 30, 112, 112],
            activation: Activation::Relu,
        }
    }
}

impl NetworkConfig {
    /// Narrow variant sized for single-machine CPU training.
    pub fn desk() -> Self {
        Self {
            stage_channels: vec![8, 8, 8, 8],
            blocks_per_stage: vec![1, 1, 1, 1],
            stem_midplane: 8,
            stem_stride: 4,
            ..Self::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_channels.is_empty() {
            return bad("no stages".into());
        }
        if self.stage_channels.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "{} stage widths but {} block counts",
                self.stage_channels.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.stage_channels.contains(&0) || self.stem_midplane == 0 {
            return bad("zero channel count".into());
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("empty stage".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        for (name, k) in [
            ("stem_kernel", self.stem_kernel),
            ("spatial_kernel", self.spatial_kernel),
            ("temporal_kernel", self.temporal_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.stem_stride == 0 {
            return bad("stem_stride must be >= 1".into());
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input_shape {:?} has a zero extent", self.input_shape));
        }
        Ok(())
    }

    /// Flat `key=value` rendering, one key per line.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "stage_channels={}", join(&self.stage_channels));
        let _ = writeln!(s, "blocks_per_stage={}", join(&self.blocks_per_stage));
        let _ = writeln!(s, "stem_midplane={}", self.stem_midplane);
        let _ = writeln!(s, "stem_kernel={}", self.stem_kernel);
        let _ = writeln!(s, "stem_stride={}", self.stem_stride);
        let _ = writeln!(s, "spatial_kernel={}", self.spatial_kernel);
        let _ = writeln!(s, "temporal_kernel={}", self.temporal_kernel);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "input_shape={}", join(&self.input_shape));
        let _ = writeln!(
            s,
            "activation={}",
            match self.activation {
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            }
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stage_channels" => self.stage_channels = parse_list(key, value)?,
            "blocks_per_stage" => self.blocks_per_stage = parse_list(key, value)?,
            "stem_midplane" => self.stem_midplane = parse_num(key, value)?,
            "stem_kernel" => self.stem_kernel = parse_num(key, value)?,
            "stem_stride" => self.stem_stride = parse_num(key, value)?,
            "spatial_kernel" => self.spatial_kernel = parse_num(key, value)?,
            "temporal_kernel" => self.temporal_kernel = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "input_shape" => {
                let v = parse_list(key, value)?;
                self.input_shape = v
                    .try_into()
                    .map_err(|_| Error::Config("input_shape needs 4 extents (C,T,H,W)".into()))?;
            }
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::Relu,
                    "identity" => Activation::Identity,
                    other => return Err(Error::Config(format!("unknown activation {other:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown network key {key:?}"))),
        }
        Ok(())
    }
}

/// Midplane width `M` that gives a t×1×1-after-1×d×d factorization the same
/// parameter count as a full t×d×d convolution from `cin` to `cout`.
pub fn midplane_channels(t: usize, d: usize, cin: usize, cout: usize) -> usize {
    let num = (t * d * d * cin * cout) as f64;
    let den = (d * d * cin + t * cout) as f64;
    ((num / den).round() as usize).max(1)
}

fn parse_num(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_dim_is_512() {
        assert_eq!(NetworkConfig::default().feature_dim(), 512);
        assert_eq!(NetworkConfig::desk().feature_dim(), 8);
    }

    #[test]
    fn midplane_balances_parameter_count() {
        let (t, d, cin, cout) = (3, 3, 16, 16);
        let m = midplane_channels(t, d, cin, cout);
        assert_eq!(m, 36);
        let full = t * d * d * cin * cout;
        let factorized = d * d * cin * m + t * m * cout;
        // one midplane channel more or less changes the count by d²·cin + t·cout
        assert!(full.abs_diff(factorized) <= (d * d * cin + t * cout) / 2);
    }

    #[test]
    fn text_roundtrip() {
        let cfg = NetworkConfig::desk();
        assert_eq!(NetworkConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetworkConfig::default();
        c.stage_channels[1] = 0;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.blocks_per_stage = vec![];
        c.stage_channels = vec![];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        assert!(NetworkConfig::from_text("foo=1").is_err());
    }
}
