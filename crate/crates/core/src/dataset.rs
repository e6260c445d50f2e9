//! Dataset manifests: one sample per line, `path  label_id  cycle_start
//! cycle_len`, tab-separated. Lines starting with `#` are comments; a
//! `# classes: a,b,c` comment names the labels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ect;
use crate::error::{Error, Result};
use crate::preprocess::CineLoop;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub cycle_start: usize,
    pub cycle_len: usize,
}

impl ManifestEntry {
    /// File stem of the clip, e.g. `c0_0001` for `c0_0001.ect`.
    pub fn sample_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

const CLASSES_PREFIX: &str = "# classes:";

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix(CLASSES_PREFIX) {
                m.class_names = rest
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |detail: String| Error::Malformed {
                what: "manifest",
                detail: format!("line {}: {detail}", lineno + 1),
            };
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let num = |i: usize, name: &str| {
                fields[i]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("{name} {:?} is not a non-negative integer", fields[i])))
            };
            m.entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                label: num(1, "label_id")?,
                cycle_start: num(2, "cycle_start")?,
                cycle_len: num(3, "cycle_len")?,
            });
        }
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# path\tlabel_id\tcycle_start\tcycle_len\n");
        if !self.class_names.is_empty() {
            let _ = writeln!(s, "{CLASSES_PREFIX} {}", self.class_names.join(","));
        }
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.path.display(),
                e.label,
                e.cycle_start,
                e.cycle_len
            );
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Number of classes: the named ones, or one past the largest label.
    pub fn num_classes(&self) -> usize {
        let seen = self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
        seen.max(self.class_names.len())
    }

    /// Class names, falling back to `class<i>`.
    pub fn names(&self) -> Vec<String> {
        (0..self.num_classes())
            .map(|i| self.class_names.get(i).cloned().unwrap_or_else(|| format!("class{i}")))
            .collect()
    }

    /// Load the clip of one entry from its `.ect` file.
    pub fn load_clip(&self, index: usize) -> Result<CineLoop> {
        let e = &self.entries[index];
        let frames = ect::read(&e.path)?;
        CineLoop::new(frames, e.cycle_start, e.cycle_len, e.sample_id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_roundtrip() {
        let text = "# comment\n# classes: normal,mild\na.ect\t0\t0\t30\nsub/b.ect\t1\t2\t28\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].sample_id(), "b");
        assert_eq!(m.class_names, vec!["normal", "mild"]);
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(Manifest::parse("a.ect\t0\t0\n").is_err());
        assert!(Manifest::parse("a.ect\tx\t0\t30\n").is_err());
    }
}
