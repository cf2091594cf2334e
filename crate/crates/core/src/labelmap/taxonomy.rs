//! Class dictionaries and class migration rules.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw class identifier as stored in a label map cell.
pub type ClassId = u8;

/// Well-known class IDs of the default driving-scene taxonomy.
pub mod class {
    use super::ClassId;

    pub const BACKGROUND: ClassId = 0;
    pub const BARRIER: ClassId = 1;
    pub const GUARDRAIL: ClassId = 2;
    pub const FENCE: ClassId = 3;
    pub const BUILDING: ClassId = 4;
    pub const SIGN: ClassId = 5;
    pub const PEDESTRIAN: ClassId = 6;
    pub const CAR: ClassId = 7;
    pub const NMT: ClassId = 8;
    pub const ZEBRA_LINE: ClassId = 9;
    pub const INFRA: ClassId = 10;
    pub const SIDEWALK: ClassId = 11;
    pub const ROAD_LINE: ClassId = 12;
    pub const TUNNEL: ClassId = 13;
    pub const BRIDGE: ClassId = 14;
    pub const TREE: ClassId = 15;
    pub const SKY: ClassId = 16;
    pub const WALL: ClassId = 17;
    pub const ROAD: ClassId = 18;
    pub const TERRAIN: ClassId = 19;
    pub const TRAFFIC_CONE: ClassId = 20;
    pub const ARROW_MARKING: ClassId = 21;
    pub const POLE: ClassId = 22;
}

// (name, critical) indexed by class id.
const DEFAULT_CLASSES: [(&str, bool); 23] = [
    ("Background", false),
    ("Barrier", true),
    ("Guardrail", false),
    ("Fence", false),
    ("Building", false),
    ("Sign", true),
    ("Pedestrian", true),
    ("Car", true),
    ("nmt", true),
    ("Zebra line", true),
    ("infra", false),
    ("Sidewalk", false),
    ("Road line", true),
    ("Tunnel", false),
    ("Bridge", false),
    ("Tree", false),
    ("Sky", false),
    ("Wall", false),
    ("road", false),
    ("Terrain", false),
    ("Traffic cone", true),
    ("Arrow marking", false),
    ("pole", false),
];

// Cityscapes train IDs 0..=18.
const CITYSCAPES_TRAIN: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyEntry {
    pub id: u32,
    pub name: String,
    pub gray: u8,
    pub critical: bool,
}

/// Ordered class dictionary binding class IDs to names, gray levels and
/// criticality flags.
///
/// IDs are contiguous from 0 and gray levels strictly increase with the ID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    entries: Vec<TaxonomyEntry>,
}

impl ClassTaxonomy {
    pub fn new(entries: Vec<TaxonomyEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("taxonomy has no classes"));
        }
        if entries.len() > 256 {
            return Err(Error::invalid(format!(
                "taxonomy has {} classes; at most 256 fit in a label map cell",
                entries.len()
            )));
        }
        for (expected, entry) in entries.iter().enumerate() {
            if entry.id as usize != expected {
                return Err(Error::invalid(format!(
                    "taxonomy ids must be contiguous from 0: position {expected} holds id {}",
                    entry.id
                )));
            }
        }
        for pair in entries.windows(2) {
            if pair[1].gray <= pair[0].gray {
                return Err(Error::invalid(format!(
                    "gray values must strictly increase with class id: {} ({}) then {} ({})",
                    pair[0].id, pair[0].gray, pair[1].id, pair[1].gray
                )));
            }
        }
        let mut names = std::collections::HashSet::new();
        for entry in &entries {
            if !names.insert(entry.name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {:?}", entry.name)));
            }
        }
        Ok(ClassTaxonomy { entries })
    }

    /// Builds a taxonomy with evenly spaced gray levels `floor(255 * id / (len - 1))`.
    pub fn with_gradient<S: Into<String>>(classes: impl IntoIterator<Item = (S, bool)>) -> Result<Self> {
        let classes: Vec<(String, bool)> = classes.into_iter().map(|(n, c)| (n.into(), c)).collect();
        let last = classes.len().saturating_sub(1).max(1);
        let entries = classes
            .into_iter()
            .enumerate()
            .map(|(id, (name, critical))| TaxonomyEntry {
                id: id as u32,
                name,
                gray: ((255 * id) / last) as u8,
                critical,
            })
            .collect();
        Self::new(entries)
    }

    /// Driving-scene dictionary: IDs 0..=22 with 22 non-background classes.
    pub fn driving_default() -> Self {
        Self::with_gradient(DEFAULT_CLASSES).expect("built-in taxonomy is valid")
    }

    /// The 19-class Cityscapes train-ID dictionary, used as a migration source.
    pub fn cityscapes_train() -> Self {
        Self::with_gradient(CITYSCAPES_TRAIN.iter().map(|n| (*n, false)))
            .expect("built-in taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<TaxonomyEntry> =
            serde_json::from_str(text).map_err(|e| Error::format("taxonomy", e.to_string()))?;
        Self::new(entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("taxonomy serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn entry(&self, id: ClassId) -> Option<&TaxonomyEntry> {
        self.entries.get(id as usize)
    }

    pub fn gray(&self, id: ClassId) -> Option<u8> {
        self.entry(id).map(|e| e.gray)
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entry(id).map(|e| e.name.as_str())
    }

    /// Looks a class up by name, ignoring ASCII case.
    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.entries
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
            .map(|e| e.id as ClassId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.entries.len()).map(|i| i as ClassId)
    }

    /// Lookup table from every gray level to the class with the nearest gray
    /// value; ties resolve to the lower class id.
    pub fn nearest_class_lut(&self) -> [ClassId; 256] {
        let mut lut = [0; 256];
        for (level, slot) in lut.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_dist = u32::MAX;
            for (id, entry) in self.entries.iter().enumerate() {
                let dist = (level as i32 - entry.gray as i32).unsigned_abs();
                if dist < best_dist {
                    best = id;
                    best_dist = dist;
                }
            }
            *slot = best as ClassId;
        }
        lut
    }
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::driving_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationTarget {
    Class(ClassId),
    /// Pixel is unrelated to traffic safety; rewritten to background.
    Drop,
}

/// Source-class to target-class rewrite table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMigrationMap {
    rules: BTreeMap<ClassId, MigrationTarget>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RuleJson {
    Id(u32),
    Word(String),
}

impl ClassMigrationMap {
    pub fn new(rules: impl IntoIterator<Item = (ClassId, MigrationTarget)>) -> Self {
        ClassMigrationMap {
            rules: rules.into_iter().collect(),
        }
    }

    pub fn identity(tax: &ClassTaxonomy) -> Self {
        Self::new(tax.ids().map(|id| (id, MigrationTarget::Class(id))))
    }

    /// Cityscapes train IDs onto the driving-scene taxonomy. Sky and rail
    /// vehicles carry no traffic-safety meaning and are dropped.
    pub fn cityscapes_to_driving() -> Self {
        use class::*;
        use MigrationTarget::{Class as To, Drop};
        let targets = [
            To(ROAD),
            To(SIDEWALK),
            To(BUILDING),
            To(WALL),
            To(FENCE),
            To(POLE),
            To(SIGN),
            To(SIGN),
            To(TREE),
            To(TERRAIN),
            Drop,
            To(PEDESTRIAN),
            To(NMT),
            To(CAR),
            To(CAR),
            To(CAR),
            Drop,
            To(NMT),
            To(NMT),
        ];
        Self::new(targets.into_iter().enumerate().map(|(i, t)| (i as ClassId, t)))
    }

    pub fn get(&self, source: ClassId) -> Option<MigrationTarget> {
        self.rules.get(&source).copied()
    }

    pub fn rules(&self) -> impl Iterator<Item = (ClassId, MigrationTarget)> + '_ {
        self.rules.iter().map(|(k, v)| (*k, *v))
    }

    /// Checks that every source class has a rule and every target exists.
    pub fn validate(&self, source: &ClassTaxonomy, target: &ClassTaxonomy) -> Result<()> {
        for id in source.ids() {
            match self.get(id) {
                None => return Err(Error::MissingRule { class: id as u32 }),
                Some(MigrationTarget::Class(t)) if !target.contains(t) => {
                    return Err(Error::UnknownClass { class: t as u32 })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Parses `{"<source_id>": <target_id> | "drop"}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, RuleJson> =
            serde_json::from_str(text).map_err(|e| Error::format("migration rules", e.to_string()))?;
        let mut rules = BTreeMap::new();
        for (key, value) in raw {
            let source: ClassId = key
                .trim()
                .parse()
                .map_err(|_| Error::format("migration rules", format!("source key {key:?} is not a class id")))?;
            let target = match value {
                RuleJson::Id(id) => MigrationTarget::Class(
                    ClassId::try_from(id)
                        .map_err(|_| Error::format("migration rules", format!("target id {id} out of range")))?,
                ),
                RuleJson::Word(w) if w.eq_ignore_ascii_case("drop") => MigrationTarget::Drop,
                RuleJson::Word(w) => {
                    return Err(Error::format(
                        "migration rules",
                        format!("target {w:?} for source {source} must be an id or \"drop\""),
                    ))
                }
            };
            rules.insert(source, target);
        }
        Ok(ClassMigrationMap { rules })
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<String, RuleJson> = self
            .rules
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    MigrationTarget::Class(id) => RuleJson::Id(*id as u32),
                    MigrationTarget::Drop => RuleJson::Word("drop".into()),
                };
                (k.to_string(), v)
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("rules serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
