use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_HEADER: [&str; 7] = [
    "ref_path",
    "deg_path",
    "label",
    "codec",
    "bitrate_kbps",
    "content_type",
    "excerpt_id",
];

/// Codec field of reference/self pairs.
pub const NO_CODEC: &str = "none";
/// Prefix of the codec field for low-pass anchors (`anchor3500`, `anchor7000`).
pub const ANCHOR_PREFIX: &str = "anchor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentType {
    Music,
    Speech,
    Noise,
    Silence,
    Mixed,
}

impl ContentType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContentType::Music => "music",
            ContentType::Speech => "speech",
            ContentType::Noise => "noise",
            ContentType::Silence => "silence",
            ContentType::Mixed => "mixed",
        }
    }
}

impl FromStr for ContentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "music" => ContentType::Music,
            "speech" => ContentType::Speech,
            "noise" => ContentType::Noise,
            "silence" => ContentType::Silence,
            "mixed" => ContentType::Mixed,
            other => return Err(Error::Argument(format!("unknown content type `{other}`"))),
        })
    }
}

/// One reference/degraded pair with its quality label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub ref_path: PathBuf,
    pub deg_path: PathBuf,
    pub label: f64,
    pub codec: String,
    pub bitrate_kbps: Option<u32>,
    pub content_type: ContentType,
    /// Groups every degradation of one reference excerpt.
    pub excerpt_id: String,
}

impl DatasetEntry {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=5.0).contains(&self.label) {
            return Err(Error::Argument(format!(
                "label {} outside [1, 5] for {}",
                self.label,
                self.deg_path.display()
            )));
        }
        if self.excerpt_id.is_empty() {
            return Err(Error::Argument(format!(
                "empty excerpt_id for {}",
                self.deg_path.display()
            )));
        }
        Ok(())
    }

    pub fn is_anchor(&self) -> bool {
        self.codec.starts_with(ANCHOR_PREFIX)
    }

    pub fn is_reference(&self) -> bool {
        self.codec == NO_CODEC
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    ref_path: String,
    deg_path: String,
    label: f64,
    codec: String,
    bitrate_kbps: Option<u32>,
    content_type: String,
    excerpt_id: String,
}

fn path_field(p: &Path) -> Result<String> {
    let s = p
        .to_str()
        .ok_or_else(|| Error::Argument(format!("non-UTF-8 path {}", p.display())))?;
    if s.contains(',') || s.contains('\n') || s.contains('"') {
        return Err(Error::Argument(format!(
            "path contains a comma, quote or newline: {s}"
        )));
    }
    Ok(s.to_string())
}

/// Immutable collection of dataset entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<DatasetEntry>,
    pub schema_version: u32,
}

impl Manifest {
    /// Validates entries and forces every ref-ref pair to label 5.
    pub fn new(mut entries: Vec<DatasetEntry>) -> Result<Self> {
        for e in &mut entries {
            if e.ref_path == e.deg_path {
                e.label = 5.0;
            }
            e.validate()?;
        }
        Ok(Self {
            entries,
            schema_version: MANIFEST_SCHEMA_VERSION,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct excerpt ids in first-appearance order.
    pub fn excerpt_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.excerpt_id.as_str()))
            .map(|e| e.excerpt_id.clone())
            .collect()
    }

    /// Reads a manifest CSV. Relative paths resolve against the manifest's
    /// directory; every referenced file must exist. Self pairs whose
    /// degraded file is byte-identical to the reference are labelled 5.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().quoting(false).from_reader(file);
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected header {}", MANIFEST_HEADER.join(",")),
            ));
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        let mut entries = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(csv_err)?;
            let entry = DatasetEntry {
                ref_path: resolve(&row.ref_path),
                deg_path: resolve(&row.deg_path),
                label: row.label,
                codec: row.codec,
                bitrate_kbps: row.bitrate_kbps,
                content_type: row.content_type.parse()?,
                excerpt_id: row.excerpt_id,
            };
            for p in [&entry.ref_path, &entry.deg_path] {
                if !p.exists() {
                    return Err(Error::io(
                        p.clone(),
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "listed in manifest but missing",
                        ),
                    ));
                }
            }
            entries.push(entry);
        }
        for e in &mut entries {
            if e.is_reference() && e.ref_path != e.deg_path && e.label != 5.0 {
                let a = std::fs::read(&e.ref_path).map_err(|err| Error::io(&e.ref_path, err))?;
                let b = std::fs::read(&e.deg_path).map_err(|err| Error::io(&e.deg_path, err))?;
                if a == b {
                    log::warn!(
                        "{}: identical self pair relabelled to 5",
                        e.deg_path.display()
                    );
                    e.label = 5.0;
                }
            }
        }
        Manifest::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(file);
        for e in &self.entries {
            writer
                .serialize(Row {
                    ref_path: path_field(&e.ref_path)?,
                    deg_path: path_field(&e.deg_path)?,
                    label: e.label,
                    codec: e.codec.clone(),
                    bitrate_kbps: e.bitrate_kbps,
                    content_type: e.content_type.as_str().into(),
                    excerpt_id: e.excerpt_id.clone(),
                })
                .map_err(csv_err)?;
        }
        if self.entries.is_empty() {
            writer.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(dir: &Path, r: &str, d: &str, label: f64) -> DatasetEntry {
        DatasetEntry {
            ref_path: dir.join(r),
            deg_path: dir.join(d),
            label,
            codec: "heaac".into(),
            bitrate_kbps: Some(24),
            content_type: ContentType::Music,
            excerpt_id: "x1".into(),
        }
    }

    #[test]
    fn roundtrip_and_ref_ref_rule() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.wav", "b.wav"] {
            std::fs::write(dir.path().join(f), b"RIFF").unwrap();
        }
        let mut refref = entry(dir.path(), "a.wav", "a.wav", 4.7);
        refref.codec = NO_CODEC.into();
        refref.bitrate_kbps = None;
        let m = Manifest::new(vec![entry(dir.path(), "a.wav", "b.wav", 3.2), refref]).unwrap();
        assert_eq!(m.entries[1].label, 5.0);
        let path = dir.path().join("m.csv");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .starts_with("ref_path,deg_path,label,codec,bitrate_kbps,content_type,excerpt_id\n"));
        assert_eq!(Manifest::load(&path).unwrap(), m);
    }

    #[test]
    fn identical_self_pair_gets_label_five() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.wav", "copy.wav"] {
            std::fs::write(dir.path().join(f), b"same bytes").unwrap();
        }
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "ref_path,deg_path,label,codec,bitrate_kbps,content_type,excerpt_id\na.wav,copy.wav,4.2,none,,noise,n1\n",
        )
        .unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.entries[0].label, 5.0);
        assert_eq!(m.entries[0].bitrate_kbps, None);
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Manifest::new(vec![entry(dir.path(), "a", "b", 0.5)]).is_err());
        let mut e = entry(dir.path(), "a", "b", 3.0);
        e.excerpt_id.clear();
        assert!(Manifest::new(vec![e]).is_err());
        let m = Manifest::new(vec![entry(dir.path(), "a,b", "c", 3.0)]).unwrap();
        assert!(m.save(dir.path().join("m.csv")).is_err());
        let path = dir.path().join("missing.csv");
        std::fs::write(&path, "ref_path,deg_path,label,codec,bitrate_kbps,content_type,excerpt_id\nnope.wav,nope.wav,5,none,,music,e\n").unwrap();
        assert!(Manifest::load(&path).unwrap_err().is_not_found());
    }
}
