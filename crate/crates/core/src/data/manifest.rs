use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::remap::RemapRegistry;
use crate::data::remap::remap_classes;
use crate::pixels::{read_label, read_rgb, ImageTensor, SegLabelMap};
use crate::{Error, Result};

/// One JSON-lines record as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
struct Record {
    hr_image: String,
    label: String,
    vocab: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hr_image_path: PathBuf,
    pub label_path: PathBuf,
    pub class_vocabulary: String,
}

/// Validated list of image/label pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Non-fatal findings collected while loading.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads and validates a JSON-lines manifest. Relative paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path, registry: &RemapRegistry) -> Result<DatasetManifest> {
    parse_manifest(path, registry, true)
}

/// Like [`load_manifest`] but never touches label files, for image-only
/// consumers.
pub fn load_manifest_images_only(path: &Path, registry: &RemapRegistry) -> Result<DatasetManifest> {
    parse_manifest(path, registry, false)
}

fn parse_manifest(
    path: &Path,
    registry: &RemapRegistry,
    with_labels: bool,
) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let malformed = |reason: String| Error::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };

    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|e| malformed(format!("line {}: {e}", lineno + 1)))?;
        if !registry.contains(&record.vocab) {
            return Err(malformed(format!(
                "line {}: vocabulary `{}` has no registered remap table",
                lineno + 1,
                record.vocab
            )));
        }
        entries.push(ManifestEntry {
            hr_image_path: base.join(&record.hr_image),
            label_path: base.join(&record.label),
            class_vocabulary: record.vocab,
        });
    }

    let missing: Vec<PathBuf> = entries
        .iter()
        .flat_map(|e| [Some(&e.hr_image_path), with_labels.then_some(&e.label_path)])
        .flatten()
        .filter(|p| !p.is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFile { paths: missing });
    }

    for e in entries.iter().filter(|_| with_labels) {
        let dims = |p: &Path| {
            image::image_dimensions(p).map_err(|err| Error::Decode {
                path: p.to_path_buf(),
                reason: err.to_string(),
            })
        };
        let (a, b) = (dims(&e.hr_image_path)?, dims(&e.label_path)?);
        if a != b {
            return Err(malformed(format!(
                "{} is {}x{} but its label {} is {}x{}",
                e.hr_image_path.display(),
                a.0,
                a.1,
                e.label_path.display(),
                b.0,
                b.1
            )));
        }
    }

    let mut warnings = Vec::new();
    if entries.is_empty() {
        let msg = format!("manifest {} has no entries", path.display());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(DatasetManifest { entries, warnings })
}

/// Writes entries as JSON lines, storing paths relative to the manifest's
/// directory when possible.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut out = Vec::new();
    for e in &manifest.entries {
        let rec = Record {
            hr_image: rel(&e.hr_image_path),
            label: rel(&e.label_path),
            vocab: e.class_vocabulary.clone(),
        };
        serde_json::to_writer(&mut out, &rec).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// A decoded HR image with its label already reduced to the target classes.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub name: String,
    pub hr: ImageTensor,
    pub label: SegLabelMap,
}

pub fn load_entry(entry: &ManifestEntry, registry: &RemapRegistry) -> Result<LabeledImage> {
    let hr = read_rgb(&entry.hr_image_path)?;
    let raw = read_label(&entry.label_path)?;
    let label = remap_classes(&raw, registry.table(&entry.class_vocabulary)?)?;
    Ok(LabeledImage {
        name: entry
            .hr_image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        hr,
        label,
    })
}

/// `vocab=digest` for every vocabulary the manifest uses, sorted and
/// comma-joined; recorded in checkpoints so label semantics cannot drift.
pub fn remap_digest(manifest: &DatasetManifest, registry: &RemapRegistry) -> Result<String> {
    let vocabs: std::collections::BTreeSet<&str> = manifest
        .entries
        .iter()
        .map(|e| e.class_vocabulary.as_str())
        .collect();
    let parts = vocabs
        .into_iter()
        .map(|v| Ok(format!("{v}={}", registry.table(v)?.digest())))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join(","))
}

pub fn load_dataset(
    manifest: &DatasetManifest,
    registry: &RemapRegistry,
) -> Result<Vec<LabeledImage>> {
    manifest
        .entries
        .iter()
        .map(|e| load_entry(e, registry))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixels::{write_gray, write_rgb};
    use ndarray::{Array2, Array3};

    fn write_pair(dir: &Path, stem: &str, h: usize, w: usize) {
        write_rgb(
            &dir.join(format!("{stem}.png")),
            &Array3::from_elem((h, w, 3), 0.5),
        )
        .unwrap();
        write_gray(
            &dir.join(format!("{stem}_label.png")),
            &Array2::from_elem((h, w), 1),
        )
        .unwrap();
    }

    fn line(stem: &str) -> String {
        format!(
            r#"{{"hr_image": "{stem}.png", "label": "{stem}_label.png", "vocab": "synthetic"}}"#
        )
    }

    #[test]
    fn loads_valid_entries() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", 8, 8);
        write_pair(dir.path(), "b", 8, 12);
        let m = dir.path().join("m.jsonl");
        fs::write(&m, format!("{}\n{}\n", line("a"), line("b"))).unwrap();
        let manifest = load_manifest(&m, &RemapRegistry::builtin()).unwrap();
        assert_eq!(manifest.len(), 2);
        assert!(manifest.warnings.is_empty());
        let data = load_dataset(&manifest, &RemapRegistry::builtin()).unwrap();
        assert_eq!(data[1].hr.dim(), (8, 12, 3));
        assert_eq!(data[0].name, "a");
    }

    #[test]
    fn missing_label_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", 8, 8);
        fs::remove_file(dir.path().join("a_label.png")).unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, line("a")).unwrap();
        match load_manifest(&m, &RemapRegistry::builtin()) {
            Err(Error::MissingFile { paths }) => {
                assert_eq!(paths, vec![dir.path().join("a_label.png")]);
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_warns() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "\n").unwrap();
        let manifest = load_manifest(&m, &RemapRegistry::builtin()).unwrap();
        assert!(manifest.is_empty());
        assert_eq!(manifest.warnings.len(), 1);
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        for bad in [
            "not json",
            r#"{"hr_image": "a.png", "label": "b.png"}"#,
            r#"{"hr_image": "a.png", "label": "b.png", "vocab": "nope"}"#,
        ] {
            fs::write(&m, bad).unwrap();
            assert!(matches!(
                load_manifest(&m, &RemapRegistry::builtin()),
                Err(Error::MalformedManifest { .. })
            ));
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb(
            &dir.path().join("a.png"),
            &Array3::from_elem((8, 8, 3), 0.5),
        )
        .unwrap();
        write_gray(
            &dir.path().join("a_label.png"),
            &Array2::from_elem((4, 8), 1),
        )
        .unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, line("a")).unwrap();
        assert!(matches!(
            load_manifest(&m, &RemapRegistry::builtin()),
            Err(Error::MalformedManifest { .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", 4, 4);
        let manifest = DatasetManifest {
            entries: vec![ManifestEntry {
                hr_image_path: dir.path().join("a.png"),
                label_path: dir.path().join("a_label.png"),
                class_vocabulary: "synthetic".into(),
            }],
            warnings: vec![],
        };
        let m = dir.path().join("m.jsonl");
        write_manifest(&m, &manifest).unwrap();
        assert!(fs::read_to_string(&m)
            .unwrap()
            .contains(r#""hr_image":"a.png""#));
        assert_eq!(
            load_manifest(&m, &RemapRegistry::builtin()).unwrap(),
            manifest
        );
    }
}
