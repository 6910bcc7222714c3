//! Object encoding/decoding and predicate encoding.
//!
//! Per object `i` with visual feature `v`, box `b` and label `x`:
//!
//! ```text
//! s = W_b · b                       spatial embedding
//! g = table[x]                      semantic embedding
//! ô = F_oe([v; s; g])               refined object feature
//! x̂ = argmax(classifier · ô)        refined label
//! ĝ = table[x̂]   (or table[x] when ground-truth labels are given)
//! p = F_pe([ĝ; ô; v])               predicate encoding feature
//! ```
//!
//! Both `F_oe` and `F_pe` are two-layer stacks; the activation between the
//! layers is configurable so the purely linear reading is available.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{init_uniform, Bindings, NumArray, NumError, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "none" => Ok(Self::None),
            other => Err(format!("unknown activation '{other}' (expected relu|none)")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::None => "none",
        })
    }
}

/// Affine layer `x · W + b` with `W: [d_in × d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, &[d_in, d_out], d_in), true);
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, &[d_out], d_in), true);
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Bindings, x: Var) -> Result<Var, NumError> {
        tape.affine(x, bind.var(self.weight), bind.var(self.bias))
    }
}

/// `affine → activation → affine`
#[derive(Clone, Debug)]
pub struct Stack {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
    ) -> Self {
        Self {
            first: Linear::new(store, rng, &format!("{name}.0"), d_in, d_out),
            second: Linear::new(store, rng, &format!("{name}.1"), d_out, d_out),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Bindings, x: Var) -> Result<Var, NumError> {
        let h = self.first.forward(tape, bind, x)?;
        let h = match self.activation {
            Activation::Relu => tape.relu(h)?,
            Activation::None => h,
        };
        self.second.forward(tape, bind, h)
    }

    pub fn d_in(&self) -> usize {
        self.first.d_in
    }

    pub fn d_out(&self) -> usize {
        self.second.d_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_v: usize,
    pub d_s: usize,
    pub d_g: usize,
    pub d_o: usize,
    pub d_p: usize,
    pub num_object_classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            d_v: 32,
            d_s: 16,
            d_g: 16,
            d_o: 64,
            d_p: 64,
            num_object_classes: 20,
        }
    }
}

/// Where the refined semantic feature `ĝ` takes its label from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Predicate classification protocol: labels are given.
    GroundTruth,
    /// Use the object decoder's argmax.
    Refined,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub spatial_embed: Linear,
    /// Shared by raw labels and refined labels.
    pub semantic_table: ParamId,
    pub object_encoder: Stack,
    pub object_classifier: Linear,
    pub predicate_encoder: Stack,
}

/// Objects of a minibatch, stacked row-wise.
#[derive(Clone, Debug)]
pub struct ObjectBatch {
    pub visual: NumArray,
    pub boxes: NumArray,
    pub labels: Vec<usize>,
}

pub struct EncodedObjects {
    pub visual: Var,
    pub refined: Var,
    pub object_logits: Var,
    pub refined_labels: Vec<usize>,
    pub predicate_features: Var,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, dims: EncoderDims, activation: Activation) -> Self {
        let d = dims;
        let spatial_embed = Linear::new(store, rng, "spatial_embed", 4, d.d_s);
        let semantic_table = store.add(
            "semantic_table",
            init_uniform(rng, &[d.num_object_classes, d.d_g], d.d_g),
            true,
        );
        let object_encoder = Stack::new(store, rng, "object_encoder", d.d_v + d.d_s + d.d_g, d.d_o, activation);
        let object_classifier = Linear::new(store, rng, "object_classifier", d.d_o, d.num_object_classes);
        let predicate_encoder = Stack::new(store, rng, "predicate_encoder", d.d_g + d.d_o + d.d_v, d.d_p, activation);
        Self {
            dims,
            spatial_embed,
            semantic_table,
            object_encoder,
            object_classifier,
            predicate_encoder,
        }
    }

    pub fn embed_spatial(&self, tape: &mut Tape, bind: &Bindings, boxes: Var) -> Result<Var, NumError> {
        self.spatial_embed.forward(tape, bind, boxes)
    }

    pub fn embed_labels(&self, tape: &mut Tape, bind: &Bindings, labels: &[usize]) -> Result<Var, NumError> {
        tape.gather_rows(bind.var(self.semantic_table), labels)
    }

    /// `ô = F_oe([v; s; g])`
    pub fn encode_object(&self, tape: &mut Tape, bind: &Bindings, v: Var, s: Var, g: Var) -> Result<Var, NumError> {
        let x = tape.concat(&[v, s, g])?;
        self.object_encoder.forward(tape, bind, x)
    }

    /// Object logits and their argmax labels.
    pub fn decode_object(&self, tape: &mut Tape, bind: &Bindings, refined: Var) -> Result<(Var, Vec<usize>), NumError> {
        let logits = self.object_classifier.forward(tape, bind, refined)?;
        let lv = tape.value(logits);
        let labels = (0..lv.rows()).map(|i| lv.argmax_row(i)).collect();
        Ok((logits, labels))
    }

    /// `p = F_pe([ĝ; ô; v])`
    pub fn encode_predicate(&self, tape: &mut Tape, bind: &Bindings, g_hat: Var, refined: Var, v: Var) -> Result<Var, NumError> {
        let x = tape.concat(&[g_hat, refined, v])?;
        self.predicate_encoder.forward(tape, bind, x)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        batch: &ObjectBatch,
        source: LabelSource,
    ) -> Result<EncodedObjects, NumError> {
        if batch.visual.cols() != self.dims.d_v || batch.boxes.cols() != 4 || batch.visual.rows() != batch.labels.len() {
            return Err(NumError::Shape {
                op: "encode_objects",
                detail: format!(
                    "visual {:?}, boxes {:?}, {} labels, d_v = {}",
                    batch.visual.shape(),
                    batch.boxes.shape(),
                    batch.labels.len(),
                    self.dims.d_v
                ),
            });
        }
        let v = tape.constant(batch.visual.clone());
        let b = tape.constant(batch.boxes.clone());
        let s = self.embed_spatial(tape, bind, b)?;
        let g = self.embed_labels(tape, bind, &batch.labels)?;
        let refined = self.encode_object(tape, bind, v, s, g)?;
        let (object_logits, refined_labels) = self.decode_object(tape, bind, refined)?;
        let g_hat = match source {
            LabelSource::GroundTruth => g,
            LabelSource::Refined => self.embed_labels(tape, bind, &refined_labels)?,
        };
        let predicate_features = self.encode_predicate(tape, bind, g_hat, refined, v)?;
        Ok(EncodedObjects {
            visual: v,
            refined,
            object_logits,
            refined_labels,
            predicate_features,
        })
    }
}
