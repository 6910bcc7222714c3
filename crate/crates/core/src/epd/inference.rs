use serde::{Deserialize, Serialize};

use crate::numcore::kernels::{softmax_rows, weighted_combination};
use crate::numcore::NumArray;

/// `λ_md·z_md + λ_ad1·z_ad1 + λ_ad2·z_ad2` on plain arrays. All-zero
/// weights give a zero array.
pub fn aggregate_arrays(z_md: &NumArray, z_ad1: &NumArray, z_ad2: &NumArray, lambda: [f32; 3]) -> NumArray {
    assert!(
        z_md.same_shape(z_ad1) && z_md.same_shape(z_ad2),
        "decoder logits must share a shape"
    );
    let data = weighted_combination(&[
        (z_md.data(), lambda[0]),
        (z_ad1.data(), lambda[1]),
        (z_ad2.data(), lambda[2]),
    ])
    .unwrap_or_else(|| vec![0.0; z_md.len()]);
    NumArray::new(z_md.shape().to_vec(), data).expect("shape copied from input")
}

/// Softmax over the positive classes of one logit row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedDistribution {
    /// Indexed by class; entry 0 (no relation) is always 0.
    pub probs: Vec<f32>,
    pub argmax: usize,
}

impl PredictedDistribution {
    /// Positive classes ordered by descending probability, ties to the
    /// smaller index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = (1..self.probs.len()).collect();
        classes.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        classes
    }
}

/// Softmax of `z[1..]`, with class 0 masked out of the ranking.
pub fn positive_distribution(z: &[f32]) -> PredictedDistribution {
    assert!(z.len() >= 2, "need at least one positive class");
    let p = softmax_rows(&z[1..], 1, z.len() - 1);
    let mut probs = Vec::with_capacity(z.len());
    probs.push(0.0);
    probs.extend_from_slice(&p);
    let mut argmax = 1;
    for (k, &v) in probs.iter().enumerate().skip(2) {
        if v > probs[argmax] {
            argmax = k;
        }
    }
    PredictedDistribution { probs, argmax }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainRow {
    pub class: usize,
    pub score: f32,
}

/// Top classes under one combination of decoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainPanel {
    /// `MD`, `MD+AD1` or `MD+AD1+AD2`.
    pub label: String,
    /// Renormalized weights actually applied, `[md, ad1, ad2]`.
    pub weights: [f32; 3],
    pub rows: Vec<ExplainRow>,
    /// Full distribution, for rank queries.
    pub distribution: PredictedDistribution,
}

impl ExplainPanel {
    /// 1-based rank of `class` among the positive classes.
    pub fn rank_of(&self, class: usize) -> Option<usize> {
        self.distribution.ranking().iter().position(|&c| c == class).map(|p| p + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub panels: Vec<ExplainPanel>,
}

/// Score tables for `MD`, `MD+AD1` and `MD+AD1+AD2` on one instance.
///
/// Each panel renormalizes λ over the decoders it includes so the panels'
/// logits stay on a comparable scale. A panel whose weights sum to zero
/// falls back to the main decoder alone.
pub fn explain(z_md: &[f32], z_ad1: &[f32], z_ad2: &[f32], lambda: [f32; 3], top_n: usize) -> Result<Explanation, String> {
    let c = z_md.len();
    if z_ad1.len() != c || z_ad2.len() != c {
        return Err(format!(
            "decoder logit widths differ: {}, {}, {}",
            c,
            z_ad1.len(),
            z_ad2.len()
        ));
    }
    if c < 2 {
        return Err("need at least one positive class".into());
    }
    if top_n == 0 || top_n > c - 1 {
        return Err(format!("top_n must lie in 1..={}, got {top_n}", c - 1));
    }
    let labels = ["MD", "MD+AD1", "MD+AD1+AD2"];
    let mut panels = Vec::with_capacity(3);
    for included in 1..=3 {
        let s: f32 = lambda[..included].iter().sum();
        let mut w = [0.0f32; 3];
        if s > 0.0 {
            for k in 0..included {
                w[k] = lambda[k] / s;
            }
        } else {
            w[0] = 1.0;
        }
        let z = weighted_combination(&[(z_md, w[0]), (z_ad1, w[1]), (z_ad2, w[2])]).expect("at least one weight is positive");
        let distribution = positive_distribution(&z);
        let rows = distribution
            .ranking()
            .into_iter()
            .take(top_n)
            .map(|class| ExplainRow {
                class,
                score: distribution.probs[class],
            })
            .collect();
        panels.push(ExplainPanel {
            label: labels[included - 1].to_string(),
            weights: w,
            rows,
            distribution,
        });
    }
    Ok(Explanation { panels })
}
