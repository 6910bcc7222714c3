//! Predicate-classification recall metrics.
//!
//! For each image the candidate triplets are ranked by confidence and the
//! top `K` are compared against the ground-truth relations. `R@K` averages
//! per-image recall; `mR@K` averages per-class recall with instances pooled
//! across images. Under the graph constraint each ordered pair contributes
//! at most one triplet.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Block, ImageRecord, PredicatePartition};

/// One ranked prediction `(subj, obj, predicate)` with its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub subj: usize,
    pub obj: usize,
    pub predicate: usize,
    pub confidence: f32,
}

/// Class distribution predicted for one candidate pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub subj: usize,
    pub obj: usize,
    /// Indexed by class; entry 0 is ignored.
    pub probs: Vec<f32>,
}

/// Per-image triplet lists, in dataset order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub images: Vec<Vec<Triplet>>,
}

impl PredictionSet {
    /// Expands pair distributions into triplets. With the graph constraint
    /// each pair yields its best positive class only; without it every
    /// positive class of every pair is a candidate.
    pub fn from_scores(scores: &[Vec<ScoredPair>], graph_constraint: bool) -> Self {
        let images = scores
            .iter()
            .map(|pairs| {
                let mut out = Vec::new();
                for p in pairs {
                    if graph_constraint {
                        let mut best = 1;
                        for c in 2..p.probs.len() {
                            if p.probs[c] > p.probs[best] {
                                best = c;
                            }
                        }
                        out.push(Triplet {
                            subj: p.subj,
                            obj: p.obj,
                            predicate: best,
                            confidence: p.probs[best],
                        });
                    } else {
                        out.extend((1..p.probs.len()).map(|c| Triplet {
                            subj: p.subj,
                            obj: p.obj,
                            predicate: c,
                            confidence: p.probs[c],
                        }));
                    }
                }
                out
            })
            .collect();
        Self { images }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("{gt} ground-truth images but {pred} prediction lists")]
    ImageCount { gt: usize, pred: usize },
    #[error("class {0} is not in the predicate partition")]
    UnpartitionedClass(usize),
    #[error("no recall values to average")]
    Empty,
}

/// Ranks triplets by confidence descending, then `(subj, obj, predicate)`
/// ascending. Class 0 is dropped and, under the graph constraint, only the
/// first triplet of each ordered pair is kept.
pub fn rank_triplets(triplets: &[Triplet], graph_constraint: bool) -> Vec<Triplet> {
    let mut ranked: Vec<Triplet> = triplets.iter().copied().filter(|t| t.predicate > 0).collect();
    ranked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((a.subj, a.obj, a.predicate).cmp(&(b.subj, b.obj, b.predicate)))
    });
    if graph_constraint {
        let mut seen = HashSet::new();
        ranked.retain(|t| seen.insert((t.subj, t.obj)));
    }
    ranked
}

/// Hit flags of every positive ground-truth relation, per image.
fn hits_at_k(
    gt: &[ImageRecord],
    preds: &PredictionSet,
    k: usize,
    graph_constraint: bool,
) -> Result<Vec<Vec<(usize, bool)>>, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if gt.len() != preds.images.len() {
        return Err(MetricError::ImageCount {
            gt: gt.len(),
            pred: preds.images.len(),
        });
    }
    Ok(gt
        .iter()
        .zip(&preds.images)
        .map(|(img, triplets)| {
            let top: HashSet<(usize, usize, usize)> = rank_triplets(triplets, graph_constraint)
                .into_iter()
                .take(k)
                .map(|t| (t.subj, t.obj, t.predicate))
                .collect();
            img.positive_relations()
                .map(|r| (r.predicate, top.contains(&(r.subj, r.obj, r.predicate))))
                .collect()
        })
        .collect())
}

/// Mean over images with at least one ground-truth relation of
/// `hits / #GT`.
pub fn recall_at_k(gt: &[ImageRecord], preds: &PredictionSet, k: usize, graph_constraint: bool) -> Result<f64, MetricError> {
    let hits = hits_at_k(gt, preds, k, graph_constraint)?;
    let per_image: Vec<f64> = hits
        .iter()
        .filter(|h| !h.is_empty())
        .map(|h| h.iter().filter(|(_, hit)| *hit).count() as f64 / h.len() as f64)
        .collect();
    Ok(if per_image.is_empty() {
        0.0
    } else {
        per_image.iter().sum::<f64>() / per_image.len() as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub count: usize,
    pub hits: usize,
    pub recall: f64,
}

/// Pooled per-class recall and their unweighted mean over classes with
/// ground-truth support.
pub fn mean_recall_at_k(
    gt: &[ImageRecord],
    preds: &PredictionSet,
    k: usize,
    graph_constraint: bool,
) -> Result<(f64, BTreeMap<usize, ClassRecall>), MetricError> {
    let hits = hits_at_k(gt, preds, k, graph_constraint)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(class, hit) in hits.iter().flatten() {
        let e = tally.entry(class).or_default();
        e.0 += 1;
        e.1 += usize::from(hit);
    }
    let per_class: BTreeMap<usize, ClassRecall> = tally
        .into_iter()
        .map(|(c, (count, hits))| {
            (
                c,
                ClassRecall {
                    count,
                    hits,
                    recall: hits as f64 / count as f64,
                },
            )
        })
        .collect();
    let mr = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|r| r.recall).sum::<f64>() / per_class.len() as f64
    };
    Ok((mr, per_class))
}

/// Average recall per frequency block. Blocks without any supported class
/// are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    pub head: Option<f64>,
    pub body: Option<f64>,
    pub tail: Option<f64>,
}

pub fn group_recall(per_class: &BTreeMap<usize, f64>, partition: &PredicatePartition) -> Result<GroupRecall, MetricError> {
    let mut sums = [(0.0f64, 0usize); 3];
    for (&c, &r) in per_class {
        let slot = match partition.block_of(c) {
            Some(Block::Head) => 0,
            Some(Block::Body) => 1,
            Some(Block::Tail) => 2,
            None => return Err(MetricError::UnpartitionedClass(c)),
        };
        sums[slot].0 += r;
        sums[slot].1 += 1;
    }
    let avg = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(GroupRecall {
        head: avg(sums[0]),
        body: avg(sums[1]),
        tail: avg(sums[2]),
    })
}

/// Arithmetic mean of every supplied `R@K` and `mR@K` value.
pub fn mean_metric(r_values: &[f64], mr_values: &[f64]) -> Result<f64, MetricError> {
    let n = r_values.len() + mr_values.len();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    Ok((r_values.iter().sum::<f64>() + mr_values.iter().sum::<f64>()) / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub graph_constraint: bool,
    pub r_at_k: BTreeMap<usize, f64>,
    pub mr_at_k: BTreeMap<usize, f64>,
    pub per_class_recall: BTreeMap<usize, BTreeMap<usize, ClassRecall>>,
    pub group_recall: BTreeMap<usize, GroupRecall>,
    pub mean_metric: f64,
}

impl MetricsReport {
    pub fn compute(
        gt: &[ImageRecord],
        preds: &PredictionSet,
        ks: &[usize],
        graph_constraint: bool,
        partition: Option<&PredicatePartition>,
    ) -> Result<Self, MetricError> {
        let mut report = Self {
            graph_constraint,
            r_at_k: BTreeMap::new(),
            mr_at_k: BTreeMap::new(),
            per_class_recall: BTreeMap::new(),
            group_recall: BTreeMap::new(),
            mean_metric: 0.0,
        };
        for &k in ks {
            report.r_at_k.insert(k, recall_at_k(gt, preds, k, graph_constraint)?);
            let (mr, per_class) = mean_recall_at_k(gt, preds, k, graph_constraint)?;
            report.mr_at_k.insert(k, mr);
            if let Some(p) = partition {
                let recalls = per_class.iter().map(|(&c, r)| (c, r.recall)).collect();
                report.group_recall.insert(k, group_recall(&recalls, p)?);
            }
            report.per_class_recall.insert(k, per_class);
        }
        let r: Vec<f64> = report.r_at_k.values().copied().collect();
        let mr: Vec<f64> = report.mr_at_k.values().copied().collect();
        report.mean_metric = mean_metric(&r, &mr)?;
        Ok(report)
    }

    /// One row per class and K, followed by a summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,class,count,hits,recall\n");
        for (k, classes) in &self.per_class_recall {
            for (c, r) in classes {
                let _ = writeln!(out, "{k},{c},{},{},{}", r.count, r.hits, r.recall);
            }
        }
        out.push_str("\nmetric,k,value\n");
        for (k, v) in &self.r_at_k {
            let _ = writeln!(out, "R,{k},{v}");
        }
        for (k, v) in &self.mr_at_k {
            let _ = writeln!(out, "mR,{k},{v}");
        }
        for (k, g) in &self.group_recall {
            for (name, v) in [("head", g.head), ("body", g.body), ("tail", g.tail)] {
                let _ = writeln!(out, "{name},{k},{}", v.map_or(String::new(), |v| v.to_string()));
            }
        }
        let _ = writeln!(out, "Mean,,{}", self.mean_metric);
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())
    }
}
