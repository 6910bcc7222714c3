//! Train and evaluate from a [`RunConfig`]; shared by `train`, `eval`
//! and `ablate`.

use std::path::Path;

use epd_core::datamodel::{compute_frequency_table, load_dataset, partition_predicates, Dataset, PredicatePartition};
use epd_core::epd::{explain, Explanation};
use epd_core::metrics::{MetricsReport, PredictionSet};
use epd_core::model::{EpdModel, RelationBatch};
use epd_core::train::{train, EpochLog, Objectives};

use crate::config::RunConfig;
use crate::error::CliError;

/// Images scored per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

pub fn load_checked(path: &Path, cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ds = load_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    cfg.model_config()
        .check_header(&ds.header)
        .map_err(|m| CliError::Data(format!("{}: {m}", path.display())))?;
    Ok(ds)
}

/// Frequency partition of the training split.
pub fn partition_for(cfg: &RunConfig, train: &Dataset) -> Result<PredicatePartition, CliError> {
    let freq = compute_frequency_table(&train.images, cfg.num_predicate_classes);
    let [h, b, t] = cfg.cardinalities;
    Ok(partition_predicates(&freq, (h, b, t))?)
}

pub struct BestSnapshot {
    pub epoch: usize,
    pub mean_recall: f64,
    pub model: EpdModel,
}

pub struct TrainedRun {
    pub model: EpdModel,
    pub logs: Vec<EpochLog>,
    pub partition: PredicatePartition,
    /// Epoch with the highest `mR@K` (largest configured K) on the
    /// selection split, when tracking was requested.
    pub best: Option<BestSnapshot>,
}

/// Trains a fresh model. With `select_on`, every epoch is evaluated on
/// that split and the best mean-recall snapshot is kept.
pub fn train_run(cfg: &RunConfig, train_set: &Dataset, select_on: Option<&Dataset>) -> Result<TrainedRun, CliError> {
    cfg.validate()?;
    if let Some(w) = cfg.hyper().lambda_ordering_warning() {
        log::warn!("{w}");
    }
    let partition = partition_for(cfg, train_set)?;
    let objectives = Objectives::new(cfg.hyper(), &partition, cfg.subset_mode, cfg.num_predicate_classes);
    let mut model = EpdModel::new(cfg.model_config(), cfg.seed);
    let k_sel = *cfg.ks.iter().max().expect("validated non-empty");
    let mut best: Option<BestSnapshot> = None;
    let mut eval_error: Option<CliError> = None;
    let shuffle_seed = cfg.seed.wrapping_add(1);
    let logs = train(&mut model, &train_set.images, &objectives, &cfg.optimizer(), shuffle_seed, |log, m| {
        let Some(sel) = select_on else { return true };
        match evaluate(m, sel, cfg, &partition) {
            Ok(report) => {
                let mr = report.mr_at_k[&k_sel];
                if best.as_ref().map_or(true, |b| mr > b.mean_recall) {
                    best = Some(BestSnapshot {
                        epoch: log.epoch,
                        mean_recall: mr,
                        model: m.clone(),
                    });
                }
                true
            }
            Err(e) => {
                eval_error = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = eval_error {
        return Err(e);
    }
    Ok(TrainedRun {
        model,
        logs,
        partition,
        best,
    })
}

/// Scores every candidate pair and computes the report at `cfg.ks`.
pub fn evaluate(model: &mut EpdModel, data: &Dataset, cfg: &RunConfig, partition: &PredicatePartition) -> Result<MetricsReport, CliError> {
    let scores = model.score_images(&data.images, cfg.lambda, EVAL_CHUNK)?;
    let preds = PredictionSet::from_scores(&scores, cfg.graph_constraint);
    Ok(MetricsReport::compute(&data.images, &preds, &cfg.ks, cfg.graph_constraint, Some(partition))?)
}

/// Per-decoder score panels for the candidate pair `(subj, obj)` of one
/// image.
pub fn explain_pair(
    model: &mut EpdModel,
    data: &Dataset,
    image_id: &str,
    subj: usize,
    obj: usize,
    lambda: [f32; 3],
    top_n: usize,
) -> Result<Explanation, CliError> {
    let image = data
        .find_image(image_id)
        .ok_or_else(|| CliError::Data(format!("image '{image_id}' not found")))?;
    let rel_idx = image
        .relations
        .iter()
        .position(|r| r.subj == subj && r.obj == obj)
        .ok_or_else(|| CliError::Data(format!("image '{image_id}' has no candidate pair ({subj}, {obj})")))?;
    let batch = RelationBatch::from_images(&[image], false).expect("image has at least one relation");
    let row = batch
        .sources
        .iter()
        .position(|&(_, r)| r == rel_idx)
        .expect("every relation is a batch row");
    let [md, ad1, ad2] = model.decoder_logits(&batch)?;
    explain(md.row(row), ad1.row(row), ad2.row(row), lambda, top_n).map_err(CliError::Usage)
}
