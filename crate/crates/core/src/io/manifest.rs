//! Tab-separated dataset manifests.
//!
//! One header line `id<TAB>wav<TAB>features<TAB>gap<TAB>split`, then one
//! row per utterance. `gap` is `start:num` in STFT frames or `-` for none.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const HEADER: &str = "id\twav\tfeatures\tgap\tsplit";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub wav: PathBuf,
    pub features: PathBuf,
    /// `(start_frame, num_frames)`.
    pub gap: Option<(usize, usize)>,
    pub split: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
            records: Vec::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestRecord> + 'a {
        self.records.iter().filter(move |r| r.split == name)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut out = Self::new(base_dir);
        let mut ids = HashSet::new();
        let mut offset = 0u64;
        let mut saw_header = false;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len() as u64;
            let row = line.trim_end_matches(['\n', '\r']);
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            if !saw_header {
                if row != HEADER {
                    return Err(Error::format(at, format!("expected header `{HEADER}`")));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = row.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::format(at, format!("expected 5 columns, found {}", cols.len())));
            }
            if cols.iter().any(|c| c.is_empty()) {
                return Err(Error::format(at, "empty column"));
            }
            let gap = match cols[3] {
                "-" => None,
                g => {
                    let parsed = g.split_once(':').and_then(|(s, n)| {
                        Some((s.parse::<usize>().ok()?, n.parse::<usize>().ok()?))
                    });
                    match parsed {
                        Some((s, n)) if n > 0 => Some((s, n)),
                        _ => return Err(Error::format(at, format!("bad gap `{g}`"))),
                    }
                }
            };
            if !ids.insert(cols[0].to_string()) {
                return Err(Error::format(at, format!("duplicate id `{}`", cols[0])));
            }
            out.records.push(ManifestRecord {
                id: cols[0].into(),
                wav: cols[1].into(),
                features: cols[2].into(),
                gap,
                split: cols[4].into(),
            });
        }
        if !saw_header {
            return Err(Error::format(0, "empty manifest"));
        }
        Ok(out)
    }

    /// Parse and check that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, base)?;
        for r in &m.records {
            for p in [&r.wav, &r.features] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::InvalidInput(format!(
                        "manifest entry `{}` references missing file {}",
                        r.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for r in &self.records {
            let gap = r.gap.map_or("-".to_string(), |(a, b)| format!("{a}:{b}"));
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.wav.display(),
                r.features.display(),
                gap,
                r.split
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, gap: Option<(usize, usize)>) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            wav: format!("{id}.wav").into(),
            features: format!("{id}.avf").into(),
            gap,
            split: "test".into(),
        }
    }

    #[test]
    fn text_round_trip() {
        let mut m = Manifest::new("/data");
        m.records.push(record("a", Some((10, 25))));
        m.records.push(record("b", None));
        let back = Manifest::parse(&m.to_text(), "/data").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.resolve(Path::new("a.wav")), PathBuf::from("/data/a.wav"));
    }

    #[test]
    fn malformed_rows_report_offsets() {
        let text = format!("{HEADER}\na\ta.wav\ta.avf\t-\ttest\nb\tb.wav\tb.avf\t3\ttest\n");
        match Manifest::parse(&text, ".").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, HEADER.len() as u64 + 22),
            e => panic!("{e:?}"),
        }
        assert!(Manifest::parse("id\twav\n", ".").is_err());
        let dup = format!("{HEADER}\na\tx\ty\t-\ts\na\tx\ty\t-\ts\n");
        assert!(Manifest::parse(&dup, ".").is_err());
    }

    #[test]
    fn load_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new(dir.path());
        m.records.push(record("a", None));
        let path = dir.path().join("m.tsv");
        m.save(&path).unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::InvalidInput(_))));
        std::fs::write(dir.path().join("a.wav"), b"").unwrap();
        std::fs::write(dir.path().join("a.avf"), b"").unwrap();
        assert_eq!(Manifest::load(&path).unwrap().records, m.records);
    }
}
