//! Full predicate classifier: object/predicate encoders feeding the
//! ensemble decoding head, plus batching of dataset images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetHeader, ImageRecord};
use crate::encoders::{Activation, EncoderDims, EncoderParams, LabelSource, ObjectBatch};
use crate::epd::{aggregate_arrays, aggregate_logits, positive_distribution, DecoderMode, EpdHead, HeadConfig, PerDecoder};
use crate::metrics::ScoredPair;
use crate::numcore::{BatchNormOptions, Bindings, BnMode, NumArray, NumError, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderDims,
    pub d_h: usize,
    /// Includes the no-relation class 0.
    pub num_predicate_classes: usize,
    pub activation: Activation,
    pub decoder_mode: DecoderMode,
    pub shared_fpd: bool,
    pub bn_enabled: bool,
    pub bn: BatchNormOptions,
    pub label_source: LabelSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderDims::default(),
            d_h: 64,
            num_predicate_classes: 51,
            activation: Activation::Relu,
            decoder_mode: DecoderMode::Multi,
            shared_fpd: true,
            bn_enabled: true,
            bn: BatchNormOptions::default(),
            label_source: LabelSource::GroundTruth,
        }
    }
}

impl ModelConfig {
    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            d_p: self.encoder.d_p,
            d_u: self.encoder.d_v,
            d_h: self.d_h,
            num_predicate_classes: self.num_predicate_classes,
            decoder_mode: self.decoder_mode,
            shared_fpd: self.shared_fpd,
            bn_enabled: self.bn_enabled,
            bn: self.bn,
        }
    }

    /// Checks the dataset header against the configured dimensions.
    pub fn check_header(&self, h: &DatasetHeader) -> Result<(), String> {
        let pairs = [
            ("d_v", self.encoder.d_v, h.d_v),
            ("num_object_classes", self.encoder.num_object_classes, h.num_object_classes),
            ("num_predicate_classes", self.num_predicate_classes, h.num_predicate_classes),
        ];
        for (name, model, data) in pairs {
            if model != data {
                return Err(format!("{name}: model expects {model}, dataset has {data}"));
            }
        }
        Ok(())
    }
}

/// Relation instances of several images with their objects stacked.
#[derive(Clone, Debug)]
pub struct RelationBatch {
    pub objects: ObjectBatch,
    /// Row of each relation's subject and object in `objects`.
    pub subj_rows: Vec<usize>,
    pub obj_rows: Vec<usize>,
    pub union: NumArray,
    pub labels: Vec<usize>,
    /// `(position of the image in the input slice, relation index)`.
    pub sources: Vec<(usize, usize)>,
}

impl RelationBatch {
    /// Stacks `images`; `None` when they hold no usable relation.
    /// Negative candidates (class 0) are skipped when `positives_only`.
    pub fn from_images(images: &[&ImageRecord], positives_only: bool) -> Option<Self> {
        let d_v = images.iter().flat_map(|im| im.objects.first()).map(|o| o.visual.len()).next()?;
        let (mut visual, mut boxes, mut obj_labels) = (Vec::new(), Vec::new(), Vec::new());
        let (mut subj_rows, mut obj_rows, mut union, mut labels, mut sources) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (pos, img) in images.iter().enumerate() {
            let offset = obj_labels.len();
            for o in &img.objects {
                visual.extend_from_slice(&o.visual);
                boxes.extend_from_slice(&o.bbox);
                obj_labels.push(o.label);
            }
            for (r_idx, r) in img.relations.iter().enumerate() {
                if positives_only && r.predicate == 0 {
                    continue;
                }
                subj_rows.push(offset + r.subj);
                obj_rows.push(offset + r.obj);
                union.extend_from_slice(&r.union);
                labels.push(r.predicate);
                sources.push((pos, r_idx));
            }
        }
        if labels.is_empty() {
            return None;
        }
        let n_obj = obj_labels.len();
        Some(Self {
            objects: ObjectBatch {
                visual: NumArray::matrix(n_obj, d_v, visual).ok()?,
                boxes: NumArray::matrix(n_obj, 4, boxes).ok()?,
                labels: obj_labels,
            },
            subj_rows,
            obj_rows,
            union: NumArray::matrix(labels.len(), d_v, union).ok()?,
            labels,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: PerDecoder,
    /// Prediction logits: `z_sum` with multiple decoders, the single
    /// decoder's logits otherwise.
    pub z_pred: Var,
    pub object_logits: Var,
}

#[derive(Clone, Debug)]
pub struct EpdModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub head: EpdHead,
}

impl EpdModel {
    /// Initializes every parameter from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, &mut rng, config.encoder, config.activation);
        let head = EpdHead::new(&mut store, &mut rng, config.head_config(), config.activation);
        Self {
            config,
            store,
            encoder,
            head,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape,
        bind: &Bindings,
        batch: &RelationBatch,
        mode: BnMode,
        lambda: [f32; 3],
    ) -> Result<ForwardOutput, NumError> {
        let enc = self.encoder.forward(tape, bind, &batch.objects, self.config.label_source)?;
        let p_i = tape.gather_rows(enc.predicate_features, &batch.subj_rows)?;
        let p_j = tape.gather_rows(enc.predicate_features, &batch.obj_rows)?;
        let union = tape.constant(batch.union.clone());
        let branches = self.head.decode_branches(tape, bind, &mut self.store, p_i, p_j, union, mode)?;
        let logits = self.head.classify(tape, bind, branches)?;
        let z_pred = match self.config.decoder_mode {
            DecoderMode::Single => logits.md,
            DecoderMode::Multi => aggregate_logits(tape, logits, lambda)?,
        };
        Ok(ForwardOutput {
            logits,
            z_pred,
            object_logits: enc.object_logits,
        })
    }

    /// Eval-mode per-decoder logits `[z_md, z_ad1, z_ad2]` for a batch.
    pub fn decoder_logits(&mut self, batch: &RelationBatch) -> Result<[NumArray; 3], NumError> {
        let mut tape = Tape::new();
        let bind = self.store.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bind, batch, BnMode::Eval, [1.0, 0.0, 0.0])?;
        let z = out.logits;
        Ok([z.md, z.ad1, z.ad2].map(|v| tape.value(v).clone()))
    }

    /// Prediction logits from per-decoder logits.
    pub fn combine(&self, z: &[NumArray; 3], lambda: [f32; 3]) -> NumArray {
        match self.config.decoder_mode {
            DecoderMode::Single => z[0].clone(),
            DecoderMode::Multi => aggregate_arrays(&z[0], &z[1], &z[2], lambda),
        }
    }

    /// Class distributions for every candidate pair of every image, in
    /// eval mode. Images are processed `chunk` at a time.
    pub fn score_images(
        &mut self,
        images: &[ImageRecord],
        lambda: [f32; 3],
        chunk: usize,
    ) -> Result<Vec<Vec<ScoredPair>>, NumError> {
        let mut out: Vec<Vec<ScoredPair>> = vec![Vec::new(); images.len()];
        for (c, group) in images.chunks(chunk.max(1)).enumerate() {
            let refs: Vec<&ImageRecord> = group.iter().collect();
            let Some(batch) = RelationBatch::from_images(&refs, false) else {
                continue;
            };
            let per_decoder = self.decoder_logits(&batch)?;
            let z = self.combine(&per_decoder, lambda);
            for (row, &(pos, r_idx)) in batch.sources.iter().enumerate() {
                let rel = &group[pos].relations[r_idx];
                out[c * chunk.max(1) + pos].push(ScoredPair {
                    subj: rel.subj,
                    obj: rel.obj,
                    probs: positive_distribution(z.row(row)).probs,
                });
            }
        }
        Ok(out)
    }
}
