//! Concept palettes: a single-inheritance concept hierarchy rooted at
//! `thing`, plus named relations between concepts.
//!
//! Palettes are values. Every mutation returns a new palette whose
//! `version` is one higher than the original.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the universal root concept.
pub const ROOT_CONCEPT: &str = "thing";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaletteError {
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("concept `{0}` already exists")]
    DuplicateConcept(String),
    #[error("relation `{0}` already exists")]
    DuplicateRelation(String),
    #[error("concept `{name}` must have a parent (only `thing` is a root)")]
    MissingParent { name: String },
    #[error("adding `{0}` would create an inheritance cycle")]
    Cycle(String),
    #[error("concept `{name}` is still referenced by {by}")]
    InUse { name: String, by: String },
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("palette is missing the root concept `thing`")]
    MissingRoot,
    #[error("palette conflict on concepts/relations: {}", .0.join(", "))]
    Conflict(Vec<String>),
}

/// Value kinds a concept property may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Number,
    Timestamp,
    Geopoint,
}

impl ValueKind {
    /// Whether a JSON value is an acceptable instance of this kind.
    pub fn accepts(self, value: &serde_json::Value) -> bool {
        use serde_json::Value;
        match self {
            ValueKind::Text => value.is_string(),
            ValueKind::Number => value.is_number(),
            ValueKind::Timestamp => value
                .as_str()
                .is_some_and(|s| chrono::DateTime::parse_from_rfc3339(s).is_ok()),
            ValueKind::Geopoint => match value {
                Value::Object(map) => {
                    map.len() == 2
                        && map.get("lat").is_some_and(Value::is_number)
                        && map.get("lon").is_some_and(Value::is_number)
                }
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub key: String,
    pub kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Concept {
    pub name: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub property_schema: Vec<PropertySpec>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub builtin: bool,
}

impl Concept {
    pub fn new(name: impl Into<String>, parent: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parent: Some(parent.into()),
            property_schema: Vec::new(),
            builtin: false,
        }
    }

    pub fn with_property(mut self, key: impl Into<String>, kind: ValueKind) -> Self {
        self.property_schema.push(PropertySpec { key: key.into(), kind });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: String,
    pub domain: String,
    pub range: String,
}

impl RelationType {
    pub fn new(name: impl Into<String>, domain: impl Into<String>, range: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            domain: domain.into(),
            range: range.into(),
        }
    }
}

/// Wire form of a palette: concepts and relations as arrays sorted by name.
#[derive(Serialize, Deserialize)]
struct PaletteRepr {
    name: String,
    version: u64,
    concepts: Vec<Concept>,
    relations: Vec<RelationType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PaletteRepr", into = "PaletteRepr")]
pub struct Palette {
    name: String,
    version: u64,
    concepts: BTreeMap<String, Concept>,
    relations: BTreeMap<String, RelationType>,
}

impl TryFrom<PaletteRepr> for Palette {
    type Error = PaletteError;

    fn try_from(repr: PaletteRepr) -> Result<Self, Self::Error> {
        let mut concepts = BTreeMap::new();
        for c in repr.concepts {
            if concepts.insert(c.name.clone(), c.clone()).is_some() {
                return Err(PaletteError::DuplicateConcept(c.name));
            }
        }
        let mut relations = BTreeMap::new();
        for r in repr.relations {
            if relations.insert(r.name.clone(), r.clone()).is_some() {
                return Err(PaletteError::DuplicateRelation(r.name));
            }
        }
        let palette = Palette {
            name: repr.name,
            version: repr.version,
            concepts,
            relations,
        };
        palette.check()?;
        Ok(palette)
    }
}

impl From<Palette> for PaletteRepr {
    fn from(p: Palette) -> Self {
        PaletteRepr {
            name: p.name,
            version: p.version,
            concepts: p.concepts.into_values().collect(),
            relations: p.relations.into_values().collect(),
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Palette {
    /// A palette holding only the builtin root concept.
    pub fn new(name: impl Into<String>) -> Self {
        let mut concepts = BTreeMap::new();
        concepts.insert(
            ROOT_CONCEPT.to_string(),
            Concept {
                name: ROOT_CONCEPT.to_string(),
                parent: None,
                property_schema: Vec::new(),
                builtin: true,
            },
        );
        Self {
            name: name.into(),
            version: 1,
            concepts,
            relations: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.concepts.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.concepts.contains_key(name)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn relation(&self, name: &str) -> Option<&RelationType> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationType> {
        self.relations.values()
    }

    fn require(&self, name: &str) -> Result<&Concept, PaletteError> {
        self.concepts
            .get(name)
            .ok_or_else(|| PaletteError::UnknownConcept(name.to_string()))
    }

    /// Parent chain from `name` up to and including the root.
    pub fn ancestors<'a>(&'a self, name: &'a str) -> Result<Vec<&'a str>, PaletteError> {
        let mut chain = vec![self.require(name)?.name.as_str()];
        let mut current = self.require(name)?;
        while let Some(parent) = current.parent.as_deref() {
            if chain.len() > self.concepts.len() {
                return Err(PaletteError::Cycle(name.to_string()));
            }
            current = self.require(parent)?;
            chain.push(current.name.as_str());
        }
        Ok(chain)
    }

    /// Reflexive, transitive subsumption along the parent chain.
    pub fn is_subconcept(&self, child: &str, ancestor: &str) -> Result<bool, PaletteError> {
        self.require(ancestor)?;
        Ok(self.ancestors(child)?.contains(&ancestor))
    }

    /// Every concept at or below `name`.
    pub fn descendants(&self, name: &str) -> Result<BTreeSet<String>, PaletteError> {
        self.require(name)?;
        let mut out = BTreeSet::new();
        for c in self.concepts.keys() {
            if self.is_subconcept(c, name)? {
                out.insert(c.clone());
            }
        }
        Ok(out)
    }

    /// Property schema of `name` including everything inherited from ancestors.
    pub fn effective_schema(&self, name: &str) -> Result<BTreeMap<String, ValueKind>, PaletteError> {
        let mut schema = BTreeMap::new();
        // root first so that nearer concepts override
        for c in self.ancestors(name)?.into_iter().rev() {
            for p in &self.concepts[c].property_schema {
                schema.insert(p.key.clone(), p.kind);
            }
        }
        Ok(schema)
    }

    fn bumped(&self) -> Self {
        let mut next = self.clone();
        next.version += 1;
        next
    }

    pub fn add_concept(&self, concept: Concept) -> Result<Self, PaletteError> {
        if !is_identifier(&concept.name) {
            return Err(PaletteError::InvalidName(concept.name));
        }
        if self.concepts.contains_key(&concept.name) {
            return Err(PaletteError::DuplicateConcept(concept.name));
        }
        let parent = concept.parent.as_deref().ok_or_else(|| PaletteError::MissingParent {
            name: concept.name.clone(),
        })?;
        self.require(parent)?;
        let mut next = self.bumped();
        next.concepts.insert(concept.name.clone(), concept);
        Ok(next)
    }

    pub fn add_relation(&self, relation: RelationType) -> Result<Self, PaletteError> {
        if !is_identifier(&relation.name) {
            return Err(PaletteError::InvalidName(relation.name));
        }
        if self.relations.contains_key(&relation.name) {
            return Err(PaletteError::DuplicateRelation(relation.name));
        }
        self.require(&relation.domain)?;
        self.require(&relation.range)?;
        let mut next = self.bumped();
        next.relations.insert(relation.name.clone(), relation);
        Ok(next)
    }

    /// Removes a leaf concept that no relation refers to.
    pub fn remove_concept(&self, name: &str) -> Result<Self, PaletteError> {
        let concept = self.require(name)?;
        if concept.builtin {
            return Err(PaletteError::InUse {
                name: name.to_string(),
                by: "the palette (builtin)".to_string(),
            });
        }
        if let Some(child) = self.concepts.values().find(|c| c.parent.as_deref() == Some(name)) {
            return Err(PaletteError::InUse {
                name: name.to_string(),
                by: format!("concept `{}`", child.name),
            });
        }
        if let Some(rel) = self.relations.values().find(|r| r.domain == name || r.range == name) {
            return Err(PaletteError::InUse {
                name: name.to_string(),
                by: format!("relation `{}`", rel.name),
            });
        }
        let mut next = self.bumped();
        next.concepts.remove(name);
        Ok(next)
    }

    /// Checks structural invariants: root present, parents resolvable, no cycles.
    pub fn check(&self) -> Result<(), PaletteError> {
        match self.concepts.get(ROOT_CONCEPT) {
            Some(root) if root.parent.is_none() => {}
            _ => return Err(PaletteError::MissingRoot),
        }
        for c in self.concepts.values() {
            if c.name != ROOT_CONCEPT && c.parent.is_none() {
                return Err(PaletteError::MissingParent { name: c.name.clone() });
            }
            self.ancestors(&c.name)?;
        }
        for r in self.relations.values() {
            self.require(&r.domain)?;
            self.require(&r.range)?;
        }
        Ok(())
    }

    /// Names of concepts or relations defined differently in the two palettes.
    pub fn conflicts_with(&self, other: &Palette) -> Vec<String> {
        let mut clashes = Vec::new();
        for (name, c) in &self.concepts {
            if let Some(o) = other.concepts.get(name) {
                if o.parent != c.parent {
                    clashes.push(name.clone());
                }
            }
        }
        for (name, r) in &self.relations {
            if let Some(o) = other.relations.get(name) {
                if o.domain != r.domain || o.range != r.range {
                    clashes.push(name.clone());
                }
            }
        }
        clashes
    }

    /// Union of two compatible palettes. Keeps this palette's name; the
    /// version only moves when something new was added.
    pub fn union(&self, other: &Palette) -> Result<Self, PaletteError> {
        let clashes = self.conflicts_with(other);
        if !clashes.is_empty() {
            return Err(PaletteError::Conflict(clashes));
        }
        let mut next = self.clone();
        let mut changed = false;
        for (name, c) in &other.concepts {
            if !next.concepts.contains_key(name) {
                next.concepts.insert(name.clone(), c.clone());
                changed = true;
            }
        }
        for (name, r) in &other.relations {
            if !next.relations.contains_key(name) {
                next.relations.insert(name.clone(), r.clone());
                changed = true;
            }
        }
        if changed {
            next.version += 1;
            next.check()?;
        }
        Ok(next)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("palette serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, crate::JsonError> {
        crate::json::from_str(text)
    }
}
