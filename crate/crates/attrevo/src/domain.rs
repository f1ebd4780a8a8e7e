//! Core vocabulary of the engine: attributes, per-class attribute sets,
//! classifiers, and the bank of scored classifiers the search maintains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = usize;

/// Label value marking a row that belongs to no fine-grained class.
pub const DISTRACTOR_LABEL: i64 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("attribute text is empty after canonicalization")]
    EmptyAttribute,
    #[error("attribute text spans multiple lines")]
    MultilineAttribute,
    #[error("attribute set has no attributes")]
    EmptySet,
    #[error("classifier set {index} is tagged class {found}, expected {expected}")]
    MisindexedSet {
        index: usize,
        found: ClassId,
        expected: ClassId,
    },
    #[error("classifier has no cached loss; score it before inserting")]
    UnscoredClassifier,
    #[error("classifier loss is not finite")]
    NonFiniteLoss,
}

/// One short natural-language visual descriptor in canonical form:
/// trimmed, inner whitespace collapsed, lowercased, single line, non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Attribute {
    text: String,
}

impl Serialize for Attribute {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Attribute::canonicalize(&raw).map_err(serde::de::Error::custom)
    }
}

impl Attribute {
    /// Canonicalize raw text into an [`Attribute`].
    ///
    /// Interior newlines are an error rather than something to paper over;
    /// a multi-line "attribute" is almost always a parsing bug upstream.
    pub fn canonicalize(raw: &str) -> Result<Self, DomainError> {
        let trimmed = raw.trim();
        if trimmed.contains('\n') || trimmed.contains('\r') {
            return Err(DomainError::MultilineAttribute);
        }
        let collapsed = trimmed
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if collapsed.is_empty() {
            return Err(DomainError::EmptyAttribute);
        }
        Ok(Attribute { text: collapsed })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl TryFrom<String> for Attribute {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Attribute::canonicalize(&value)
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

/// The attribute list for one class. Always non-empty and duplicate-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub class_id: ClassId,
    attributes: Vec<Attribute>,
}

impl AttributeSet {
    pub fn new(class_id: ClassId, attributes: Vec<Attribute>) -> Result<Self, DomainError> {
        if attributes.is_empty() {
            return Err(DomainError::EmptySet);
        }
        Ok(AttributeSet {
            class_id,
            attributes,
        })
    }

    /// Build a set from candidates: first occurrence of each attribute wins,
    /// order is preserved, and the result is truncated to `max_set_size`.
    pub fn dedup_set<I>(
        class_id: ClassId,
        candidates: I,
        max_set_size: usize,
    ) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = Attribute>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut kept = Vec::new();
        for attr in candidates {
            if kept.len() == max_set_size {
                break;
            }
            if seen.insert(attr.text.clone()) {
                kept.push(attr);
            }
        }
        AttributeSet::new(class_id, kept)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.text.clone()).collect()
    }
}

/// A full hypothesis: one attribute set per class, indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    sets: Vec<AttributeSet>,
    pub loss: Option<f64>,
    pub iteration_born: u64,
}

impl Classifier {
    pub fn new(sets: Vec<AttributeSet>) -> Result<Self, DomainError> {
        if sets.is_empty() {
            return Err(DomainError::EmptySet);
        }
        for (index, set) in sets.iter().enumerate() {
            if set.class_id != index {
                return Err(DomainError::MisindexedSet {
                    index,
                    found: set.class_id,
                    expected: index,
                });
            }
        }
        Ok(Classifier {
            sets,
            loss: None,
            iteration_born: 0,
        })
    }

    pub fn class_count(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, class_id: ClassId) -> &AttributeSet {
        &self.sets[class_id]
    }

    pub fn sets(&self) -> &[AttributeSet] {
        &self.sets
    }

    /// Copy of this classifier with class `class_id`'s set swapped out and
    /// the cached loss cleared.
    pub fn with_set_replaced(&self, class_id: ClassId, mut set: AttributeSet) -> Classifier {
        debug_assert!(class_id < self.sets.len());
        set.class_id = class_id;
        let mut next = self.clone();
        next.sets[class_id] = set;
        next.loss = None;
        next
    }

    pub fn scored(mut self, loss: f64, iteration_born: u64) -> Classifier {
        self.loss = Some(loss);
        self.iteration_born = iteration_born;
        self
    }
}

/// Scored classifiers kept sorted by ascending loss. Insertion above
/// capacity evicts the worst entry, so the incumbent best is never lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank {
    entries: Vec<Classifier>,
    capacity: usize,
}

impl ClassifierBank {
    pub fn new(capacity: usize) -> Self {
        ClassifierBank {
            entries: Vec::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn insert(&mut self, classifier: Classifier) -> Result<(), DomainError> {
        let loss = classifier.loss.ok_or(DomainError::UnscoredClassifier)?;
        if !loss.is_finite() {
            return Err(DomainError::NonFiniteLoss);
        }
        // Insert after any equal losses so ties keep arrival order.
        let at = self
            .entries
            .partition_point(|e| e.loss.unwrap_or(f64::INFINITY) <= loss);
        self.entries.insert(at, classifier);
        if self.entries.len() > self.capacity {
            self.entries.pop();
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&Classifier> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Classifier> {
        self.entries.iter()
    }
}
