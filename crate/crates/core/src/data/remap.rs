//! Raw label taxonomies and their reduction to the six target classes.

use std::collections::BTreeMap;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::pixels::{SegLabelMap, IGNORE_ID};
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["sky", "ground", "buildings", "plants", "water", "others"];

pub const SYNTHETIC_VOCAB: &str = "synthetic";
pub const COCO_STUFF_VOCAB: &str = "coco-stuff";

const COCO_STUFF_NAMES: &str = include_str!("../../data/coco_stuff_vocab.json");
const COCO_STUFF_TABLE: &str = include_str!("../../data/coco_stuff_6class.json");

/// Raw class names indexed by the id stored in label files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassVocabulary {
    pub name: String,
    pub classes: Vec<String>,
}

impl ClassVocabulary {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        if classes.len() > IGNORE_ID as usize {
            return Err(Error::MalformedRemapTable(format!(
                "vocabulary has {} classes; 8-bit labels allow at most {}",
                classes.len(),
                IGNORE_ID
            )));
        }
        Ok(ClassVocabulary {
            name: name.into(),
            classes,
        })
    }

    pub fn id_of(&self, class: &str) -> Option<u8> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| i as u8)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Total map from a vocabulary's raw ids to target ids `0..=5`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassRemapTable {
    vocabulary: String,
    mapping: Vec<u8>,
}

impl ClassRemapTable {
    /// Parses a JSON object `{raw_name_or_id: target_id}`.
    pub fn from_json(vocab: &ClassVocabulary, json: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(json).map_err(|e| Error::MalformedRemapTable(e.to_string()))?;
        let Value::Object(entries) = value else {
            return Err(Error::MalformedRemapTable("expected a JSON object".into()));
        };
        let mut mapping: Vec<Option<u8>> = vec![None; vocab.len()];
        for (key, target) in entries {
            let raw = match vocab.id_of(&key) {
                Some(id) => id,
                None => key
                    .parse::<u8>()
                    .ok()
                    .filter(|&id| (id as usize) < vocab.len())
                    .ok_or_else(|| {
                        Error::MalformedRemapTable(format!(
                            "`{key}` is not a class of `{}`",
                            vocab.name
                        ))
                    })?,
            };
            let target = target
                .as_u64()
                .filter(|&t| (t as usize) < NUM_CLASSES)
                .ok_or_else(|| {
                    Error::MalformedRemapTable(format!("target of `{key}` must be in 0..=5"))
                })?;
            if mapping[raw as usize].replace(target as u8).is_some() {
                return Err(Error::MalformedRemapTable(format!(
                    "raw class `{key}` mapped twice"
                )));
            }
        }
        let missing: Vec<&str> = mapping
            .iter()
            .zip(&vocab.classes)
            .filter(|(m, _)| m.is_none())
            .map(|(_, n)| n.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MalformedRemapTable(format!(
                "table is not total; unmapped: {}",
                missing.join(", ")
            )));
        }
        Ok(ClassRemapTable {
            vocabulary: vocab.name.clone(),
            mapping: mapping.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// Identity over the six target classes.
    pub fn identity() -> Self {
        ClassRemapTable {
            vocabulary: SYNTHETIC_VOCAB.into(),
            mapping: (0..NUM_CLASSES as u8).collect(),
        }
    }

    pub fn vocabulary(&self) -> &str {
        &self.vocabulary
    }

    pub fn target(&self, raw: u8) -> Option<u8> {
        self.mapping.get(raw as usize).copied()
    }

    pub fn domain_size(&self) -> usize {
        self.mapping.len()
    }

    /// Hex SHA-256 of the vocabulary name and mapping.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocabulary.as_bytes());
        h.update([0]);
        h.update(&self.mapping);
        hex::encode(h.finalize())
    }
}

/// Applies `table` to every non-ignore pixel.
pub fn remap_classes(label: &SegLabelMap, table: &ClassRemapTable) -> Result<SegLabelMap> {
    if let Some(&bad) = label
        .iter()
        .find(|&&id| id != IGNORE_ID && table.target(id).is_none())
    {
        return Err(Error::UnknownClassId {
            id: bad,
            table: table.vocabulary.clone(),
        });
    }
    Ok(label.mapv(|id| {
        if id == IGNORE_ID {
            IGNORE_ID
        } else {
            table.target(id).unwrap()
        }
    }))
}

/// Named vocabularies with their remap tables.
#[derive(Clone, Debug)]
pub struct RemapRegistry {
    entries: BTreeMap<String, (ClassVocabulary, ClassRemapTable)>,
}

impl Default for RemapRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl RemapRegistry {
    /// `synthetic` (identity over the six classes) and `coco-stuff`.
    pub fn builtin() -> Self {
        let mut entries = BTreeMap::new();
        let synth = ClassVocabulary::new(
            SYNTHETIC_VOCAB,
            CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("six classes");
        entries.insert(
            SYNTHETIC_VOCAB.to_string(),
            (synth, ClassRemapTable::identity()),
        );
        let names: Vec<String> =
            serde_json::from_str(COCO_STUFF_NAMES).expect("bundled vocabulary");
        let coco = ClassVocabulary::new(COCO_STUFF_VOCAB, names).expect("182 classes");
        let table = ClassRemapTable::from_json(&coco, COCO_STUFF_TABLE).expect("bundled table");
        entries.insert(COCO_STUFF_VOCAB.to_string(), (coco, table));
        RemapRegistry { entries }
    }

    pub fn register(&mut self, vocab: ClassVocabulary, table: ClassRemapTable) {
        self.entries.insert(vocab.name.clone(), (vocab, table));
    }

    pub fn table(&self, vocab: &str) -> Result<&ClassRemapTable> {
        self.entries
            .get(vocab)
            .map(|e| &e.1)
            .ok_or_else(|| Error::UnknownVocabulary(vocab.to_string()))
    }

    pub fn vocabulary(&self, vocab: &str) -> Result<&ClassVocabulary> {
        self.entries
            .get(vocab)
            .map(|e| &e.0)
            .ok_or_else(|| Error::UnknownVocabulary(vocab.to_string()))
    }

    pub fn contains(&self, vocab: &str) -> bool {
        self.entries.contains_key(vocab)
    }
}
