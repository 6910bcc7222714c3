use serde::{Deserialize, Serialize};

use crate::datamodel::Block;
use crate::numcore::kernels::weighted_combination;
use crate::numcore::{NumError, Tape, Var};

use super::{EpdHyper, Objective, PerDecoder};

/// Number of batch rows falling in each training subset and block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub total: usize,
    pub md: usize,
    pub ad1: usize,
    pub ad2: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

/// Scalar loss values of one batch.
///
/// Terms that were skipped (empty subset, or not part of the active
/// objective) are stored as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_md: f32,
    pub l_ad1: f32,
    pub l_ad2: f32,
    pub l_agg: f32,
    pub l_n1: f32,
    pub l_n2: f32,
    pub l_n3: f32,
    pub l_obj: f32,
    pub l_total: f32,
    pub counts: SubsetCounts,
}

/// Masked decoder losses. `None` marks a subset with no rows in the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLosses {
    pub md: Option<Var>,
    pub ad1: Option<Var>,
    pub ad2: Option<Var>,
}

/// Mean cross-entropy over the rows selected by `keep`; `None` if no row is
/// selected. Unselected rows get weight 0 and therefore no gradient.
fn masked_mean_ce(
    tape: &mut Tape,
    z: Var,
    labels: &[usize],
    keep: impl Fn(usize) -> bool,
) -> Result<(Option<Var>, usize), NumError> {
    let selected = labels.iter().filter(|&&l| keep(l)).count();
    if selected == 0 {
        return Ok((None, 0));
    }
    let w = 1.0 / selected as f32;
    let weights: Vec<f32> = labels.iter().map(|&l| if keep(l) { w } else { 0.0 }).collect();
    Ok((Some(tape.weighted_cross_entropy(z, labels, &weights)?), selected))
}

/// `L_md`, `L_ad1`, `L_ad2`, each the mean CE over rows whose label is in
/// the decoder's subset. `masks` is indexed `[md, ad1, ad2][class]`.
pub fn decoder_losses(
    tape: &mut Tape,
    logits: PerDecoder,
    labels: &[usize],
    masks: &[Vec<bool>; 3],
) -> Result<(DecoderLosses, [usize; 3]), NumError> {
    let member = |m: &Vec<bool>, l: usize| m.get(l).copied().unwrap_or(false);
    let (md, c_md) = masked_mean_ce(tape, logits.md, labels, |l| member(&masks[0], l))?;
    let (ad1, c_ad1) = masked_mean_ce(tape, logits.ad1, labels, |l| member(&masks[1], l))?;
    let (ad2, c_ad2) = masked_mean_ce(tape, logits.ad2, labels, |l| member(&masks[2], l))?;
    Ok((DecoderLosses { md, ad1, ad2 }, [c_md, c_ad1, c_ad2]))
}

/// `z_sum = λ_md·z_md + λ_ad1·z_ad1 + λ_ad2·z_ad2`. Zero weights drop their
/// term, so `λ = (1, 0, 0)` returns a copy of `z_md` bit for bit.
pub fn aggregate_logits(tape: &mut Tape, logits: PerDecoder, lambda: [f32; 3]) -> Result<Var, NumError> {
    tape.weighted_sum(&[
        (logits.md, lambda[0]),
        (logits.ad1, lambda[1]),
        (logits.ad2, lambda[2]),
    ])
}

/// `L_agg`: mean CE of `z_sum` over every row.
pub fn aggregated_loss(tape: &mut Tape, z_sum: Var, labels: &[usize]) -> Result<Var, NumError> {
    tape.softmax_cross_entropy(z_sum, labels)
}

/// Coefficients of the ensemble objective, in the order
/// `(L_md, L_ad1, L_ad2, L_agg)`.
fn ensemble_coefficients(h: &EpdHyper) -> [f32; 4] {
    let keep = 1.0 - h.gamma;
    [keep, keep * h.alpha, keep * h.beta, h.gamma]
}

/// `(1, (1+α)(1−γ), (1+α+β)(1−γ))` for the head, body and tail blocks.
pub fn single_decoder_coefficients(alpha: f32, beta: f32, gamma: f32) -> [f32; 3] {
    let keep = 1.0 - gamma;
    [1.0, (1.0 + alpha) * keep, (1.0 + alpha + beta) * keep]
}

/// `(1−γ)(L_md + α·L_ad1 + β·L_ad2) + γ·L_agg`, plus the weighted object
/// loss when given. Missing decoder terms are skipped.
pub fn total_loss(
    tape: &mut Tape,
    losses: &DecoderLosses,
    l_agg: Var,
    object: Option<(Var, f32)>,
    hyper: &EpdHyper,
) -> Result<Var, NumError> {
    let c = ensemble_coefficients(hyper);
    let mut terms: Vec<(Var, f32)> = [(losses.md, c[0]), (losses.ad1, c[1]), (losses.ad2, c[2])]
        .into_iter()
        .filter_map(|(v, w)| v.map(|v| (v, w)))
        .collect();
    terms.push((l_agg, c[3]));
    terms.extend(object);
    tape.weighted_sum(&terms)
}

/// Block-reweighted single-decoder loss
/// `L_N1 + (1+α)(1−γ)·L_N2 + (1+α+β)(1−γ)·L_N3`, where `L_Ni` is the mean CE
/// over rows whose label lies in block `Ni`. Returns the total and the three
/// block losses (`None` for blocks absent from the batch).
pub fn single_decoder_loss(
    tape: &mut Tape,
    z: Var,
    labels: &[usize],
    blocks: &[Option<Block>],
    hyper: &EpdHyper,
) -> Result<(Var, [Option<(Var, usize)>; 3]), NumError> {
    let coef = single_decoder_coefficients(hyper.alpha, hyper.beta, hyper.gamma);
    let block_of = |l: usize| blocks.get(l).copied().flatten();
    let mut parts = [None; 3];
    let mut terms = Vec::with_capacity(3);
    for (k, b) in [Block::Head, Block::Body, Block::Tail].into_iter().enumerate() {
        let (loss, count) = masked_mean_ce(tape, z, labels, |l| block_of(l) == Some(b))?;
        if let Some(v) = loss {
            parts[k] = Some((v, count));
            terms.push((v, coef[k]));
        }
    }
    if terms.is_empty() {
        return Err(NumError::Empty { op: "single_decoder_loss" });
    }
    Ok((tape.weighted_sum(&terms)?, parts))
}

/// Recomputes `l_total` from the stored components with the same
/// coefficients and summation order the tape uses.
pub fn compose_total(b: &LossBreakdown, hyper: &EpdHyper) -> f32 {
    let mut terms: Vec<(f32, f32)> = Vec::with_capacity(6);
    match hyper.objective {
        Objective::Ensemble => {
            let c = ensemble_coefficients(hyper);
            let counts = [b.counts.md, b.counts.ad1, b.counts.ad2];
            for (k, &l) in [b.l_md, b.l_ad1, b.l_ad2].iter().enumerate() {
                if counts[k] > 0 {
                    terms.push((l, c[k]));
                }
            }
            terms.push((b.l_agg, c[3]));
        }
        Objective::SingleReweighted => {
            let c = single_decoder_coefficients(hyper.alpha, hyper.beta, hyper.gamma);
            let counts = [b.counts.n1, b.counts.n2, b.counts.n3];
            for (k, &l) in [b.l_n1, b.l_n2, b.l_n3].iter().enumerate() {
                if counts[k] > 0 {
                    terms.push((l, c[k]));
                }
            }
        }
        Objective::PlainCe => terms.push((b.l_agg, 1.0)),
    }
    if hyper.object_loss_weight > 0.0 {
        terms.push((b.l_obj, hyper.object_loss_weight));
    }
    let slices: Vec<([f32; 1], f32)> = terms.iter().map(|&(v, c)| ([v], c)).collect();
    let refs: Vec<(&[f32], f32)> = slices.iter().map(|(v, c)| (&v[..], *c)).collect();
    weighted_combination(&refs).map_or(0.0, |v| v[0])
}
