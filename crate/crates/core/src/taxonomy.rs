//! Event-of-interest taxonomy: the 38 prioritized event types, their legal
//! labels and entity categories, and normalization from free-text labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of event types in a complete taxonomy.
pub const EXPECTED_ENTRIES: usize = 38;

const BUNDLED_CSV: &str = include_str!("../assets/taxonomy.csv");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("expected {EXPECTED_ENTRIES} entries, found {0}")]
    WrongCount(usize),
    #[error("malformed taxonomy document: {0}")]
    Parse(String),
    #[error("reading taxonomy: {0}")]
    Io(#[from] std::io::Error),
}

/// Operational priority. Lower ordinal is more severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityLevel {
    Emergency = 0,
    Urgent = 1,
    Moderate = 2,
    Advisory = 3,
}

impl PriorityLevel {
    pub const ALL: [PriorityLevel; 4] = [
        PriorityLevel::Emergency,
        PriorityLevel::Urgent,
        PriorityLevel::Moderate,
        PriorityLevel::Advisory,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriorityLevel::Emergency => "Emergency",
            PriorityLevel::Urgent => "Urgent",
            PriorityLevel::Moderate => "Moderate",
            PriorityLevel::Advisory => "Advisory",
        }
    }
}

impl fmt::Display for PriorityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorityLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PriorityLevel::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown priority {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LegalLabel {
    Crime,
    Civil,
}

impl FromStr for LegalLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crime" => Ok(LegalLabel::Crime),
            "civil" => Ok(LegalLabel::Civil),
            _ => Err(format!("unknown legal label {s:?}")),
        }
    }
}

/// Coarse entity grouping used for map icons and detection classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityCategory {
    Person,
    Vehicle,
    Other,
}

impl FromStr for EntityCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "person" => Ok(EntityCategory::Person),
            "vehicle" => Ok(EntityCategory::Vehicle),
            "other" => Ok(EntityCategory::Other),
            _ => Err(format!("unknown entity category {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EoiType {
    pub id: u8,
    pub name: String,
    pub priority: PriorityLevel,
    pub legal_label: LegalLabel,
    pub entity_category: EntityCategory,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

/// One row as it appears in a taxonomy document, before validation.
#[derive(Debug, Clone, Deserialize)]
struct RawRow {
    id: serde_json::Value,
    name: String,
    priority: String,
    legal_label: String,
    entity_category: String,
    #[serde(default)]
    synonyms: SynonymField,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(untagged)]
enum SynonymField {
    #[default]
    Empty,
    Joined(String),
    List(Vec<String>),
}

impl SynonymField {
    fn into_vec(self) -> Vec<String> {
        match self {
            SynonymField::Empty => Vec::new(),
            SynonymField::Joined(s) => s.split(';').map(str::to_owned).collect(),
            SynonymField::List(v) => v,
        }
    }
}

/// Lowercases, trims and collapses internal whitespace runs.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    entries: Vec<EoiType>,
    by_name: HashMap<String, usize>,
    by_synonym: HashMap<String, usize>,
}

impl Taxonomy {
    /// The taxonomy shipped with the crate.
    pub fn bundled() -> Taxonomy {
        Taxonomy::from_csv_str(BUNDLED_CSV).expect("bundled taxonomy is valid")
    }

    /// Loads a taxonomy document, choosing CSV or JSON by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Taxonomy::from_json_str(&text),
            _ => Taxonomy::from_csv_str(&text),
        }
    }

    pub fn from_csv_str(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<BTreeMap<String, String>>().enumerate() {
            let rec = rec.map_err(|e| TaxonomyError::Parse(e.to_string()))?;
            let field = |k: &str| rec.get(k).cloned().unwrap_or_default();
            rows.push((
                i + 1,
                RawRow {
                    id: serde_json::Value::String(field("id")),
                    name: field("name"),
                    priority: field("priority"),
                    legal_label: field("legal_label"),
                    entity_category: field("entity_category"),
                    synonyms: SynonymField::Joined(field("synonyms")),
                },
            ));
        }
        Taxonomy::from_rows(rows)
    }

    pub fn from_json_str(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let raw: Vec<RawRow> =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Taxonomy::from_rows(raw.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect())
    }

    fn from_rows(rows: Vec<(usize, RawRow)>) -> Result<Taxonomy, TaxonomyError> {
        let mut entries = Vec::with_capacity(rows.len());
        let mut seen_ids = HashSet::new();
        let mut by_name = HashMap::new();
        let mut by_synonym: HashMap<String, usize> = HashMap::new();

        for (row, raw) in rows {
            let bad = |reason: String| TaxonomyError::InvalidRow { row, reason };
            let id: u8 = match &raw.id {
                serde_json::Value::Number(n) => n.as_u64().and_then(|v| u8::try_from(v).ok()),
                serde_json::Value::String(s) => s.trim().parse().ok(),
                _ => None,
            }
            .ok_or_else(|| bad(format!("invalid id {}", raw.id)))?;
            if id == 0 || usize::from(id) > EXPECTED_ENTRIES {
                return Err(bad(format!("id {id} outside 1..={EXPECTED_ENTRIES}")));
            }
            if !seen_ids.insert(id) {
                return Err(bad(format!("duplicate id {id}")));
            }
            let name = raw.name.trim().to_owned();
            if name.is_empty() {
                return Err(bad("empty name".into()));
            }
            let priority: PriorityLevel = raw.priority.parse().map_err(bad)?;
            let legal_label: LegalLabel = raw.legal_label.parse().map_err(bad)?;
            let entity_category: EntityCategory = raw.entity_category.parse().map_err(bad)?;

            let key = normalize_label(&name);
            if by_name.contains_key(&key) || by_synonym.contains_key(&key) {
                return Err(bad(format!("duplicate name {name:?}")));
            }
            let index = entries.len();
            by_name.insert(key, index);

            let mut synonyms = Vec::new();
            for syn in raw.synonyms.into_vec() {
                let syn = normalize_label(&syn);
                if syn.is_empty() {
                    continue;
                }
                if by_name.contains_key(&syn) || by_synonym.contains_key(&syn) {
                    return Err(bad(format!("synonym {syn:?} is not unique")));
                }
                by_synonym.insert(syn.clone(), index);
                synonyms.push(syn);
            }
            entries.push(EoiType {
                id,
                name,
                priority,
                legal_label,
                entity_category,
                synonyms,
            });
        }

        if entries.len() != EXPECTED_ENTRIES {
            return Err(TaxonomyError::WrongCount(entries.len()));
        }

        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&i| entries[i].id);
        let mut remap = vec![0; entries.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut sorted: Vec<Option<EoiType>> = entries.into_iter().map(Some).collect();
        let entries: Vec<EoiType> = order.iter().map(|&i| sorted[i].take().unwrap()).collect();
        let by_name = by_name.into_iter().map(|(k, v)| (k, remap[v])).collect();
        let by_synonym = by_synonym.into_iter().map(|(k, v)| (k, remap[v])).collect();

        Ok(Taxonomy {
            entries,
            by_name,
            by_synonym,
        })
    }

    pub fn entries(&self) -> &[EoiType] {
        &self.entries
    }

    pub fn get(&self, id: u8) -> Option<&EoiType> {
        id.checked_sub(1)
            .and_then(|i| self.entries.get(usize::from(i)))
            .filter(|e| e.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&EoiType> {
        self.by_name
            .get(&normalize_label(name))
            .map(|&i| &self.entries[i])
    }

    /// Exact match on the normalized name first, then on synonyms.
    pub fn classify_label(&self, raw: &str) -> Option<&EoiType> {
        let key = normalize_label(raw);
        self.by_name
            .get(&key)
            .or_else(|| self.by_synonym.get(&key))
            .map(|&i| &self.entries[i])
    }

    pub fn priority_counts(&self) -> BTreeMap<PriorityLevel, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.priority).or_insert(0) += 1;
        }
        counts
    }

    /// Stable content hash, sent to reasoners so responses can be tied to a
    /// taxonomy revision.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(format!(
                "{}|{}|{}|{:?}|{:?}|{}\n",
                e.id,
                e.name,
                e.priority,
                e.legal_label,
                e.entity_category,
                e.synonyms.join(";")
            ));
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

pub fn priority_of(e: &EoiType) -> PriorityLevel {
    e.priority
}
