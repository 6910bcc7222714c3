//! Brute-force recall oracle.
//!
//! A triplet is in the top K of its image exactly when fewer than K other
//! candidates outrank it, so membership is decided by counting, with no
//! sorting involved. Recalls are then tallied directly from the definitions.

#![allow(dead_code)]

use std::collections::BTreeMap;

use epd_core::datamodel::{ImageRecord, ObjectInstance, PredicatePartition, RelationInstance};
use epd_core::metrics::{group_recall, mean_recall_at_k, recall_at_k, GroupRecall, PredictionSet, ScoredPair};
use rand::seq::SliceRandom;
use rand::Rng;

pub const POSITIVE_CLASSES: usize = 5;

pub struct Instance {
    pub images: Vec<ImageRecord>,
    pub scores: Vec<Vec<ScoredPair>>,
    pub partition: PredicatePartition,
    pub k: usize,
    pub graph_constraint: bool,
}

/// At most 5 images with at most 6 candidate pairs each. Scores are drawn
/// from a coarse grid so ties are common.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let num_images = rng.random_range(1..=5);
    let mut images = Vec::new();
    let mut scores = Vec::new();
    for i in 0..num_images {
        let num_objects = rng.random_range(2..=4);
        let mut pairs: Vec<(usize, usize)> = (0..num_objects)
            .flat_map(|s| (0..num_objects).filter(move |&o| o != s).map(move |o| (s, o)))
            .collect();
        pairs.shuffle(rng);
        pairs.truncate(rng.random_range(1..=6));
        let relations = pairs
            .iter()
            .map(|&(subj, obj)| RelationInstance {
                subj,
                obj,
                predicate: if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=POSITIVE_CLASSES) },
                union: Vec::new(),
            })
            .collect();
        let objects = (0..num_objects)
            .map(|_| ObjectInstance {
                label: 0,
                bbox: [0.0, 0.0, 1.0, 1.0],
                visual: Vec::new(),
            })
            .collect();
        images.push(ImageRecord {
            image_id: format!("img{i}"),
            objects,
            relations,
        });
        scores.push(
            pairs
                .iter()
                .map(|&(subj, obj)| ScoredPair {
                    subj,
                    obj,
                    probs: (0..=POSITIVE_CLASSES).map(|_| rng.random_range(0..8) as f32 / 8.0).collect(),
                })
                .collect(),
        );
    }
    let mut classes: Vec<usize> = (1..=POSITIVE_CLASSES).collect();
    classes.shuffle(rng);
    let partition = PredicatePartition {
        head: classes[..2].to_vec(),
        body: classes[2..3].to_vec(),
        tail: classes[3..].to_vec(),
    };
    Instance {
        images,
        scores,
        partition,
        k: rng.random_range(1..=8),
        graph_constraint: rng.random_bool(0.5),
    }
}

type Key = (usize, usize, usize);

/// Candidate `(key, confidence)` list of one image.
fn candidates(pairs: &[ScoredPair], graph_constraint: bool) -> Vec<(Key, f32)> {
    let mut out = Vec::new();
    for p in pairs {
        let classes: Vec<usize> = (1..p.probs.len()).collect();
        if graph_constraint {
            // highest score, lowest class on ties
            let best = classes
                .iter()
                .copied()
                .find(|&c| classes.iter().all(|&d| p.probs[d] < p.probs[c] || (p.probs[d] == p.probs[c] && c <= d)))
                .unwrap();
            out.push(((p.subj, p.obj, best), p.probs[best]));
        } else {
            out.extend(classes.iter().map(|&c| ((p.subj, p.obj, c), p.probs[c])));
        }
    }
    out
}

fn outranks(a: &(Key, f32), b: &(Key, f32)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

fn in_top_k(cands: &[(Key, f32)], key: Key, k: usize) -> bool {
    cands
        .iter()
        .find(|c| c.0 == key)
        .is_some_and(|me| cands.iter().filter(|o| outranks(o, me)).count() < k)
}

pub struct OracleValues {
    pub recall: f64,
    pub mean_recall: f64,
    pub per_class: BTreeMap<usize, f64>,
    pub groups: GroupRecall,
}

pub fn oracle(inst: &Instance) -> OracleValues {
    let mut per_image = Vec::new();
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (img, pairs) in inst.images.iter().zip(&inst.scores) {
        let cands = candidates(pairs, inst.graph_constraint);
        let gt: Vec<&RelationInstance> = img.relations.iter().filter(|r| r.predicate > 0).collect();
        if gt.is_empty() {
            continue;
        }
        let mut hits = 0;
        for r in &gt {
            let hit = in_top_k(&cands, (r.subj, r.obj, r.predicate), inst.k);
            hits += usize::from(hit);
            let e = tally.entry(r.predicate).or_default();
            e.0 += 1;
            e.1 += usize::from(hit);
        }
        per_image.push(hits as f64 / gt.len() as f64);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let per_class: BTreeMap<usize, f64> = tally.iter().map(|(&c, &(n, h))| (c, h as f64 / n as f64)).collect();
    let class_values: Vec<f64> = per_class.values().copied().collect();
    let block = |classes: &[usize]| {
        let v: Vec<f64> = per_class.iter().filter(|(c, _)| classes.contains(c)).map(|(_, &r)| r).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    OracleValues {
        recall: mean(&per_image),
        mean_recall: mean(&class_values),
        groups: GroupRecall {
            head: block(&inst.partition.head),
            body: block(&inst.partition.body),
            tail: block(&inst.partition.tail),
        },
        per_class,
    }
}

/// Compares the library against the oracle; exact equality is required.
pub fn check(inst: &Instance) -> Result<(), String> {
    let preds = PredictionSet::from_scores(&inst.scores, inst.graph_constraint);
    let want = oracle(inst);
    let r = recall_at_k(&inst.images, &preds, inst.k, inst.graph_constraint).map_err(|e| e.to_string())?;
    let (mr, classes) = mean_recall_at_k(&inst.images, &preds, inst.k, inst.graph_constraint).map_err(|e| e.to_string())?;
    let per_class: BTreeMap<usize, f64> = classes.iter().map(|(&c, v)| (c, v.recall)).collect();
    let groups = group_recall(&per_class, &inst.partition).map_err(|e| e.to_string())?;
    if r != want.recall {
        return Err(format!("R@{}: library {r}, oracle {}", inst.k, want.recall));
    }
    if mr != want.mean_recall {
        return Err(format!("mR@{}: library {mr}, oracle {}", inst.k, want.mean_recall));
    }
    if per_class != want.per_class {
        return Err(format!("per-class recall: library {per_class:?}, oracle {:?}", want.per_class));
    }
    if groups != want.groups {
        return Err(format!("group recall: library {groups:?}, oracle {:?}", want.groups));
    }
    Ok(())
}
