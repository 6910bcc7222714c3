//! Minibatch SGD over the ensemble objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{assign_subsets, Block, ImageRecord, PredicatePartition, SubsetMode};
use crate::epd::{
    aggregated_loss, decoder_losses, single_decoder_loss, total_loss, EpdHyper, LossBreakdown, Objective, SubsetCounts,
};
use crate::model::{EpdModel, RelationBatch};
use crate::numcore::{BnMode, NumError, Sgd, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f32,
    pub momentum: f32,
    /// Images per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.0025,
            momentum: 0.0,
            batch_size: 12,
            epochs: 30,
        }
    }
}

/// Everything the objective needs besides the model.
#[derive(Clone, Debug)]
pub struct Objectives {
    pub hyper: EpdHyper,
    /// Subset membership `[md, ad1, ad2][class]`.
    pub masks: [Vec<bool>; 3],
    /// Frequency block of each class.
    pub blocks: Vec<Option<Block>>,
}

impl Objectives {
    /// Derives subset masks and block table from a partition.
    pub fn new(hyper: EpdHyper, partition: &PredicatePartition, mode: SubsetMode, num_predicate_classes: usize) -> Self {
        Self {
            hyper,
            masks: assign_subsets(partition, mode).masks(num_predicate_classes),
            blocks: partition.block_table(num_predicate_classes),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("epoch {epoch}, step {step}: {source}")]
    Numeric {
        epoch: usize,
        step: usize,
        #[source]
        source: NumError,
    },
    #[error("no training relations")]
    NoData,
}

impl TrainError {
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            TrainError::Numeric {
                source: NumError::NonFinite { .. },
                ..
            }
        )
    }
}

/// Averages over the steps of one epoch. Decoder and block losses are
/// averaged over the steps where their subset was non-empty; counts are
/// summed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
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

/// Builds the loss of one batch on `tape`. Returns the root and the scalar
/// breakdown.
pub fn batch_loss(
    model: &mut EpdModel,
    tape: &mut Tape,
    bind: &crate::numcore::Bindings,
    batch: &RelationBatch,
    obj: &Objectives,
) -> Result<(Var, LossBreakdown), NumError> {
    let h = &obj.hyper;
    let out = model.forward(tape, bind, batch, BnMode::Train, h.lambda)?;
    let labels = &batch.labels;
    let mut b = LossBreakdown::default();

    let object = if h.object_loss_weight > 0.0 {
        let l = tape.softmax_cross_entropy(out.object_logits, &batch.objects.labels)?;
        b.l_obj = tape.value(l).item();
        Some((l, h.object_loss_weight))
    } else {
        None
    };

    let block_of = |l: usize| obj.blocks.get(l).copied().flatten();
    b.counts = SubsetCounts {
        total: labels.len(),
        n1: labels.iter().filter(|&&l| block_of(l) == Some(Block::Head)).count(),
        n2: labels.iter().filter(|&&l| block_of(l) == Some(Block::Body)).count(),
        n3: labels.iter().filter(|&&l| block_of(l) == Some(Block::Tail)).count(),
        ..SubsetCounts::default()
    };

    let l_agg = aggregated_loss(tape, out.z_pred, labels)?;
    b.l_agg = tape.value(l_agg).item();

    let root = match h.objective {
        Objective::Ensemble => {
            let (losses, counts) = decoder_losses(tape, out.logits, labels, &obj.masks)?;
            [b.counts.md, b.counts.ad1, b.counts.ad2] = counts;
            let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
            (b.l_md, b.l_ad1, b.l_ad2) = (val(losses.md), val(losses.ad1), val(losses.ad2));
            total_loss(tape, &losses, l_agg, object, h)?
        }
        Objective::SingleReweighted => {
            let (total, parts) = single_decoder_loss(tape, out.logits.md, labels, &obj.blocks, h)?;
            let val = |p: Option<(Var, usize)>| p.map_or(0.0, |(v, _)| tape.value(v).item());
            (b.l_n1, b.l_n2, b.l_n3) = (val(parts[0]), val(parts[1]), val(parts[2]));
            let mut terms = vec![(total, 1.0)];
            terms.extend(object);
            tape.weighted_sum(&terms)?
        }
        Objective::PlainCe => {
            let mut terms = vec![(l_agg, 1.0)];
            terms.extend(object);
            tape.weighted_sum(&terms)?
        }
    };
    b.l_total = tape.value(root).item();
    Ok((root, b))
}

/// Trains in place. Image order is reshuffled every epoch from a generator
/// seeded with `seed`; `on_epoch` sees each finished epoch and may stop
/// training by returning `false`.
pub fn train(
    model: &mut EpdModel,
    images: &[ImageRecord],
    obj: &Objectives,
    opt: &OptimizerConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog, &mut EpdModel) -> bool,
) -> Result<Vec<EpochLog>, TrainError> {
    let usable: Vec<&ImageRecord> = images.iter().filter(|im| im.positive_relations().next().is_some()).collect();
    if usable.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sgd = Sgd::new(opt.lr, opt.momentum);
    let mut logs = Vec::with_capacity(opt.epochs);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 1..=opt.epochs {
        order.shuffle(&mut rng);
        let mut acc = Accumulator::default();
        for (step, idx) in order.chunks(opt.batch_size.max(1)).enumerate() {
            let group: Vec<&ImageRecord> = idx.iter().map(|&i| usable[i]).collect();
            let batch = RelationBatch::from_images(&group, true).expect("usable images have positive relations");
            let wrap = |source| TrainError::Numeric {
                epoch,
                step: step + 1,
                source,
            };
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let (root, breakdown) = batch_loss(model, &mut tape, &bind, &batch, obj).map_err(wrap)?;
            tape.backward(root).map_err(wrap)?;
            let grads = model.store.collect_grads(&mut tape, &bind);
            sgd.step(&mut model.store, &grads).map_err(wrap)?;
            acc.add(&breakdown);
        }
        let log = acc.finish(epoch);
        log::info!(
            "epoch {epoch}: l_total {:.4} (md {:.4}, ad1 {:.4}, ad2 {:.4}, agg {:.4})",
            log.l_total,
            log.l_md,
            log.l_ad1,
            log.l_ad2,
            log.l_agg
        );
        let go_on = on_epoch(&log, model);
        logs.push(log);
        if !go_on {
            break;
        }
    }
    Ok(logs)
}

#[derive(Default)]
struct Accumulator {
    steps: usize,
    sums: [f64; 9],
    present: [usize; 9],
    counts: SubsetCounts,
}

impl Accumulator {
    fn add(&mut self, b: &LossBreakdown) {
        let c = &b.counts;
        let vals = [
            (b.l_md, c.md > 0),
            (b.l_ad1, c.ad1 > 0),
            (b.l_ad2, c.ad2 > 0),
            (b.l_agg, true),
            (b.l_n1, c.n1 > 0),
            (b.l_n2, c.n2 > 0),
            (b.l_n3, c.n3 > 0),
            (b.l_obj, true),
            (b.l_total, true),
        ];
        for (k, (v, present)) in vals.into_iter().enumerate() {
            if present {
                self.sums[k] += v as f64;
                self.present[k] += 1;
            }
        }
        self.steps += 1;
        self.counts.total += c.total;
        self.counts.md += c.md;
        self.counts.ad1 += c.ad1;
        self.counts.ad2 += c.ad2;
        self.counts.n1 += c.n1;
        self.counts.n2 += c.n2;
        self.counts.n3 += c.n3;
    }

    fn finish(&self, epoch: usize) -> EpochLog {
        let m: Vec<f32> = (0..9)
            .map(|k| {
                if self.present[k] == 0 {
                    0.0
                } else {
                    (self.sums[k] / self.present[k] as f64) as f32
                }
            })
            .collect();
        EpochLog {
            epoch,
            steps: self.steps,
            l_md: m[0],
            l_ad1: m[1],
            l_ad2: m[2],
            l_agg: m[3],
            l_n1: m[4],
            l_n2: m[5],
            l_n3: m[6],
            l_obj: m[7],
            l_total: m[8],
            counts: self.counts,
        }
    }
}
