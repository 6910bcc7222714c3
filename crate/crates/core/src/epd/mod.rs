//! Ensemble predicate decoding.
//!
//! Three decoders share the pair gate `W_p`, the trunk `F_pd` and the
//! classifier `FC`, and differ only in their batch-norm layers. Each decoder
//! is trained on its own class subset:
//!
//! ```text
//! L_x   = mean CE(z_x) over batch rows whose label ∈ N_x     x ∈ {md, ad1, ad2}
//! z_sum = λ_md·z_md + λ_ad1·z_ad1 + λ_ad2·z_ad2
//! L_agg = mean CE(z_sum) over all rows
//! L_all = (1−γ)(L_md + α·L_ad1 + β·L_ad2) + γ·L_agg
//! ```
//!
//! At inference `z_sum` is the prediction. The single-decoder ablation uses
//! `L'_all = L_N1 + (1+α)(1−γ)·L_N2 + (1+α+β)(1−γ)·L_N3` with block means
//! `L_Ni`.

mod head;
mod inference;
mod loss;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numcore::BatchNormOptions;

pub use head::{BnParams, EpdHead, PerDecoder};
pub use inference::{aggregate_arrays, explain, positive_distribution, ExplainPanel, ExplainRow, Explanation, PredictedDistribution};
pub use loss::{
    aggregate_logits, aggregated_loss, compose_total, decoder_losses, single_decoder_coefficients, single_decoder_loss,
    total_loss, DecoderLosses, LossBreakdown, SubsetCounts,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decoder {
    Md,
    Ad1,
    Ad2,
}

impl Decoder {
    pub const ALL: [Decoder; 3] = [Decoder::Md, Decoder::Ad1, Decoder::Ad2];

    pub fn name(self) -> &'static str {
        match self {
            Decoder::Md => "md",
            Decoder::Ad1 => "ad1",
            Decoder::Ad2 => "ad2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    Single,
    Multi,
}

impl FromStr for DecoderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(format!("unknown decoder mode '{other}' (expected single|multi)")),
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Multi => "multi",
        })
    }
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Subset-masked decoder losses plus the aggregated loss.
    Ensemble,
    /// Block-reweighted loss of a single decoder.
    SingleReweighted,
    /// Unweighted mean cross-entropy.
    PlainCe,
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ensemble" => Ok(Self::Ensemble),
            "single_reweighted" => Ok(Self::SingleReweighted),
            "plain_ce" => Ok(Self::PlainCe),
            other => Err(format!(
                "unknown objective '{other}' (expected ensemble|single_reweighted|plain_ce)"
            )),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ensemble => "ensemble",
            Self::SingleReweighted => "single_reweighted",
            Self::PlainCe => "plain_ce",
        })
    }
}

/// Structure of the decoding head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_p: usize,
    /// Gate width; equals the union-feature width.
    pub d_u: usize,
    pub d_h: usize,
    /// Includes the no-relation class 0.
    pub num_predicate_classes: usize,
    pub decoder_mode: DecoderMode,
    pub shared_fpd: bool,
    pub bn_enabled: bool,
    pub bn: BatchNormOptions,
}

/// Loss and aggregation weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpdHyper {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    /// `(λ_md, λ_ad1, λ_ad2)`
    pub lambda: [f32; 3],
    pub objective: Objective,
    /// Weight of the object-classification cross-entropy (0 disables it).
    pub object_loss_weight: f32,
}

/// Aggregation weights with the best Mean in the weight sweep.
pub const LAMBDA_DEFAULT: [f32; 3] = [0.5, 0.2, 0.3];
/// Aggregation weights with the best mean recall in the weight sweep.
pub const LAMBDA_BEST_MR: [f32; 3] = [0.4, 0.2, 0.4];

impl Default for EpdHyper {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            beta: 10.0,
            gamma: 0.01,
            lambda: LAMBDA_DEFAULT,
            objective: Objective::Ensemble,
            object_loss_weight: 1.0,
        }
    }
}

impl EpdHyper {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(format!("alpha and beta must be non-negative ({}, {})", self.alpha, self.beta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(format!("lambda weights must be non-negative, got {:?}", self.lambda));
        }
        if !(self.object_loss_weight >= 0.0) {
            return Err("object loss weight must be non-negative".into());
        }
        Ok(())
    }

    /// Describes a violation of `λ_md > λ_ad2 > λ_ad1`, which is advisory.
    pub fn lambda_ordering_warning(&self) -> Option<String> {
        let [md, ad1, ad2] = self.lambda;
        (!(md > ad2 && ad2 > ad1)).then(|| {
            format!("lambda ({md}, {ad1}, {ad2}) does not satisfy lambda_md > lambda_ad2 > lambda_ad1")
        })
    }

    /// Named aggregation presets: `default` and `best_mr`.
    pub fn lambda_preset(name: &str) -> Option<[f32; 3]> {
        match name {
            "default" | "best_mean" => Some(LAMBDA_DEFAULT),
            "best_mr" => Some(LAMBDA_BEST_MR),
            _ => None,
        }
    }
}
