use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, ImageRecord};

/// Per-class positive relation counts. Index 0 (no relation) is always 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: Vec<u64>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let mut counts = counts;
        if let Some(c0) = counts.first_mut() {
            *c0 = 0;
        }
        Self { counts }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Positive classes by descending count, ties by ascending index.
    pub fn ranked_classes(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = (1..self.counts.len()).collect();
        classes.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        classes
    }
}

pub fn compute_frequency_table(images: &[ImageRecord], num_predicate_classes: usize) -> FrequencyTable {
    let mut counts = vec![0u64; num_predicate_classes];
    for img in images {
        for r in img.positive_relations() {
            counts[r.predicate] += 1;
        }
    }
    FrequencyTable { counts }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Head,
    Body,
    Tail,
}

/// Head/body/tail split of the positive predicate classes.
///
/// Each block lists its classes in descending frequency order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicatePartition {
    pub head: Vec<usize>,
    pub body: Vec<usize>,
    pub tail: Vec<usize>,
}

impl PredicatePartition {
    pub fn block_of(&self, class: usize) -> Option<Block> {
        if self.head.contains(&class) {
            Some(Block::Head)
        } else if self.body.contains(&class) {
            Some(Block::Body)
        } else if self.tail.contains(&class) {
            Some(Block::Tail)
        } else {
            None
        }
    }

    pub fn block(&self, b: Block) -> &[usize] {
        match b {
            Block::Head => &self.head,
            Block::Body => &self.body,
            Block::Tail => &self.tail,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.len() + self.body.len() + self.tail.len()
    }

    /// Block lookup table indexed by class (`None` for class 0 and unknown
    /// classes).
    pub fn block_table(&self, num_predicate_classes: usize) -> Vec<Option<Block>> {
        let mut table = vec![None; num_predicate_classes];
        for b in [Block::Head, Block::Body, Block::Tail] {
            for &c in self.block(b) {
                if c < num_predicate_classes {
                    table[c] = Some(b);
                }
            }
        }
        table
    }
}

/// Splits classes into `(head, body, tail)` blocks of the given sizes by
/// descending frequency (ties broken by smaller class index first).
pub fn partition_predicates(
    freq: &FrequencyTable,
    cardinalities: (usize, usize, usize),
) -> Result<PredicatePartition, DataError> {
    let (h, b, t) = cardinalities;
    let positives = freq.num_classes().saturating_sub(1);
    if h == 0 || b == 0 || t == 0 || h + b + t != positives {
        return Err(DataError::Cardinality {
            head: h,
            body: b,
            tail: t,
            classes: positives,
        });
    }
    let ranked = freq.ranked_classes();
    Ok(PredicatePartition {
        head: ranked[..h].to_vec(),
        body: ranked[h..h + b].to_vec(),
        tail: ranked[h + b..].to_vec(),
    })
}

/// How predicate blocks are routed to the three decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// main: all, aux1: body ∪ tail, aux2: tail
    Nested,
    /// main: head, aux1: body, aux2: tail
    Disjoint,
    /// main: all, aux1: body, aux2: tail
    MdFullDisjointAux,
}

impl FromStr for SubsetMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nested" => Ok(Self::Nested),
            "disjoint" => Ok(Self::Disjoint),
            "md_full_disjoint_aux" | "md_full" => Ok(Self::MdFullDisjointAux),
            other => Err(DataError::Config(format!("unknown subset mode '{other}'"))),
        }
    }
}

impl fmt::Display for SubsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nested => "nested",
            Self::Disjoint => "disjoint",
            Self::MdFullDisjointAux => "md_full_disjoint_aux",
        })
    }
}

/// Class sets on which each decoder's loss is computed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetAssignment {
    pub md: BTreeSet<usize>,
    pub ad1: BTreeSet<usize>,
    pub ad2: BTreeSet<usize>,
    pub mode: SubsetMode,
}

impl SubsetAssignment {
    /// Membership masks `[md, ad1, ad2]`, each indexed by class.
    pub fn masks(&self, num_predicate_classes: usize) -> [Vec<bool>; 3] {
        let mk = |s: &BTreeSet<usize>| {
            let mut m = vec![false; num_predicate_classes];
            for &c in s {
                if c < num_predicate_classes {
                    m[c] = true;
                }
            }
            m
        };
        [mk(&self.md), mk(&self.ad1), mk(&self.ad2)]
    }
}

pub fn assign_subsets(p: &PredicatePartition, mode: SubsetMode) -> SubsetAssignment {
    let set = |blocks: &[&[usize]]| -> BTreeSet<usize> { blocks.iter().flat_map(|b| b.iter().copied()).collect() };
    let all = set(&[&p.head, &p.body, &p.tail]);
    let (md, ad1, ad2) = match mode {
        SubsetMode::Nested => (all, set(&[&p.body, &p.tail]), set(&[&p.tail])),
        SubsetMode::Disjoint => (set(&[&p.head]), set(&[&p.body]), set(&[&p.tail])),
        SubsetMode::MdFullDisjointAux => (all, set(&[&p.body]), set(&[&p.tail])),
    };
    SubsetAssignment { md, ad1, ad2, mode }
}
