//! Relation-extraction datasets: inventory, instances, line-record files,
//! synthetic corpora, held-out filtering and false-negative injection.

mod io;
mod noise;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_linerecords, parse_fliplog, parse_linerecords, read_fliplog, write_fliplog,
    write_linerecords, InventoryMode,
};
pub use noise::{flip_count, heldout_filter, inject_false_negatives};
pub use synth::{generate_synthetic, SynthSpec};

/// Name of the non-relation class.
pub const NA: &str = "NA";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: span ({start}, {end}) out of range for {len} tokens")]
    SpanOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: head and tail spans overlap")]
    OverlappingSpans { line: usize },
    #[error("line {line}: unknown relation {name:?}")]
    UnknownRelation { line: usize, name: String },
    #[error("invalid relation inventory: {0}")]
    Inventory(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("injection ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("refusing to inject false negatives into a test split")]
    TestSplit,
    #[error("invalid instance {id}: {msg}")]
    InvalidInstance { id: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered relation names with exactly one `NA` class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInventory {
    relations: Vec<String>,
    na_index: usize,
}

impl RelationInventory {
    /// Builds an inventory whose non-relation class is the one named [`NA`].
    pub fn new(relations: Vec<String>) -> Result<Self, CorpusError> {
        let na: Vec<usize> = relations
            .iter()
            .enumerate()
            .filter(|(_, r)| r.as_str() == NA)
            .map(|(i, _)| i)
            .collect();
        if na.len() != 1 {
            return Err(CorpusError::Inventory(format!(
                "expected exactly one {NA} class, found {}",
                na.len()
            )));
        }
        Self::with_na(relations, na[0])
    }

    /// Builds an inventory with an explicitly designated non-relation class.
    pub fn with_na(relations: Vec<String>, na_index: usize) -> Result<Self, CorpusError> {
        if na_index >= relations.len() {
            return Err(CorpusError::Inventory(format!(
                "NA index {na_index} out of range for {} relations",
                relations.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &relations {
            if r.is_empty() || r.chars().any(char::is_whitespace) || r.ends_with('*') {
                return Err(CorpusError::Inventory(format!("bad relation name {r:?}")));
            }
            if !seen.insert(r.as_str()) {
                return Err(CorpusError::Inventory(format!("duplicate relation {r}")));
            }
        }
        Ok(Self {
            na_index,
            relations,
        })
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn na_index(&self) -> usize {
        self.na_index
    }

    pub fn name(&self, index: usize) -> &str {
        &self.relations[index]
    }

    pub fn names(&self) -> &[String] {
        &self.relations
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    pub fn is_na(&self, index: usize) -> bool {
        index == self.na_index
    }

    /// Indices of every class except `NA`, ascending.
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.na_index)
    }
}

/// Inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// One labeled sentence with its two entity mentions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub relation: usize,
}

impl Instance {
    pub fn head_text(&self) -> String {
        self.tokens[self.head.start..=self.head.end].join(" ")
    }

    pub fn tail_text(&self) -> String {
        self.tokens[self.tail.start..=self.tail.end].join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, inventory: &RelationInventory) -> Result<(), CorpusError> {
        let bad = |msg: String| CorpusError::InvalidInstance {
            id: self.id.clone(),
            msg,
        };
        let len = self.tokens.len();
        if len == 0 {
            return Err(bad("no tokens".into()));
        }
        for span in [self.head, self.tail] {
            if span.start > span.end || span.end >= len {
                return Err(bad(format!("span {span:?} out of range for {len} tokens")));
            }
        }
        if self.head.overlaps(&self.tail) {
            return Err(bad("head and tail spans overlap".into()));
        }
        if self.relation >= inventory.len() {
            return Err(bad(format!("relation index {}", self.relation)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub inventory: RelationInventory,
    pub instances: Vec<Instance>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        inventory: RelationInventory,
        instances: Vec<Instance>,
        split: Split,
    ) -> Result<Self, CorpusError> {
        for inst in &instances {
            inst.validate(&inventory)?;
        }
        Ok(Self {
            inventory,
            instances,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        let na = self.inventory.na_index();
        self.instances.iter().filter(|i| i.relation != na).count()
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Instance> {
        let na = self.inventory.na_index();
        self.instances.iter().filter(move |i| i.relation == na)
    }

    pub fn positives(&self) -> impl Iterator<Item = &Instance> {
        let na = self.inventory.na_index();
        self.instances.iter().filter(move |i| i.relation != na)
    }
}

/// Positives turned into `NA` by injection: instance id to original relation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlipLog {
    pub entries: BTreeMap<String, usize>,
}

impl FlipLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn original(&self, id: &str) -> Option<usize> {
        self.entries.get(id).copied()
    }

    /// Checks that every logged id is present, currently `NA`, and logged
    /// with a positive original relation.
    pub fn validate(&self, data: &Dataset) -> Result<(), CorpusError> {
        let na = data.inventory.na_index();
        let by_id: BTreeMap<&str, &Instance> =
            data.instances.iter().map(|i| (i.id.as_str(), i)).collect();
        for (id, &orig) in &self.entries {
            let inst = by_id.get(id.as_str()).ok_or_else(|| CorpusError::InvalidInstance {
                id: id.clone(),
                msg: "flip log entry not in dataset".into(),
            })?;
            if inst.relation != na || orig == na || orig >= data.inventory.len() {
                return Err(CorpusError::InvalidInstance {
                    id: id.clone(),
                    msg: "flip log entry inconsistent with dataset".into(),
                });
            }
        }
        Ok(())
    }

    /// Undoes the injection: every logged instance gets its original label.
    pub fn restore(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for inst in &mut out.instances {
            if let Some(&orig) = self.entries.get(&inst.id) {
                inst.relation = orig;
            }
        }
        out
    }
}
