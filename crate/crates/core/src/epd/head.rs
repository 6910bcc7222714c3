use rand::Rng;

use crate::encoders::{Activation, Linear, Stack};
use crate::numcore::{BatchNormOptions, Bindings, BnMode, NumArray, NumError, ParamId, ParamStore, Tape, Var};

use super::{Decoder, DecoderMode, HeadConfig};

/// Parameter ids of one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnParams {
    fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), NumArray::full(&[channels], 1.0), true),
            beta: store.add(format!("{name}.beta"), NumArray::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), NumArray::zeros(&[channels]), false),
            running_var: store.add(format!("{name}.running_var"), NumArray::full(&[channels], 1.0), false),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        store: &mut ParamStore,
        x: Var,
        opts: BatchNormOptions,
        mode: BnMode,
    ) -> Result<Var, NumError> {
        let (mean, var) = store.get_pair_mut(self.running_mean, self.running_var);
        tape.batchnorm(x, bind.var(self.gamma), bind.var(self.beta), mean, var, opts, mode)
    }
}

/// Per-decoder features or logits. In single-decoder mode all three
/// fields hold the same tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerDecoder {
    pub md: Var,
    pub ad1: Var,
    pub ad2: Var,
}

impl PerDecoder {
    pub fn uniform(v: Var) -> Self {
        Self { md: v, ad1: v, ad2: v }
    }

    pub fn get(&self, d: Decoder) -> Var {
        match d {
            Decoder::Md => self.md,
            Decoder::Ad1 => self.ad1,
            Decoder::Ad2 => self.ad2,
        }
    }
}

/// Ensemble decoding head.
///
/// ```text
/// t   = F_pd(W_p([p_i; p_j]) ⊙ u_ij)      shared trunk, computed once
/// p'x = B_x(t)                           x ∈ {md, ad1, ad2}, independent BN
/// z_x = FC(p'x)                          one shared classifier
/// ```
#[derive(Clone, Debug)]
pub struct EpdHead {
    pub config: HeadConfig,
    pub pair_expand: Linear,
    /// One stack when `F_pd` is shared, otherwise one per decoder.
    pub decoders: Vec<Stack>,
    /// One layer per active decoder when batch norm is enabled.
    pub batch_norms: Vec<BnParams>,
    pub classifier: Linear,
}

impl EpdHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, config: HeadConfig, activation: Activation) -> Self {
        let c = config;
        let pair_expand = Linear::new(store, rng, "pair_expand", 2 * c.d_p, c.d_u);
        let n_branches = match c.decoder_mode {
            DecoderMode::Single => 1,
            DecoderMode::Multi => 3,
        };
        let n_stacks = if c.shared_fpd { 1 } else { n_branches };
        let decoders = (0..n_stacks)
            .map(|k| {
                let name = if c.shared_fpd {
                    "shared_decoder".to_string()
                } else {
                    format!("decoder_{}", Decoder::ALL[k].name())
                };
                Stack::new(store, rng, &name, c.d_u, c.d_h, activation)
            })
            .collect();
        let batch_norms = if c.bn_enabled {
            (0..n_branches)
                .map(|k| BnParams::new(store, &format!("bn_{}", Decoder::ALL[k].name()), c.d_h))
                .collect()
        } else {
            Vec::new()
        };
        let classifier = Linear::new(store, rng, "classifier", c.d_h, c.num_predicate_classes);
        Self {
            config,
            pair_expand,
            decoders,
            batch_norms,
            classifier,
        }
    }

    /// `W_p([p_i; p_j]) ⊙ u_ij`
    pub fn gate(&self, tape: &mut Tape, bind: &Bindings, p_i: Var, p_j: Var, union: Var) -> Result<Var, NumError> {
        let pair = tape.concat(&[p_i, p_j])?;
        let expanded = self.pair_expand.forward(tape, bind, pair)?;
        tape.hadamard(expanded, union)
    }

    /// Branch features `(p'_md, p'_ad1, p'_ad2)`. Every row passes through
    /// every branch; masking happens only in the losses.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_branches(
        &self,
        tape: &mut Tape,
        bind: &Bindings,
        store: &mut ParamStore,
        p_i: Var,
        p_j: Var,
        union: Var,
        mode: BnMode,
    ) -> Result<PerDecoder, NumError> {
        let gated = self.gate(tape, bind, p_i, p_j, union)?;
        let trunks: Vec<Var> = self
            .decoders
            .iter()
            .map(|d| d.forward(tape, bind, gated))
            .collect::<Result<_, _>>()?;
        let n_branches = match self.config.decoder_mode {
            DecoderMode::Single => 1,
            DecoderMode::Multi => 3,
        };
        let mut outs = Vec::with_capacity(n_branches);
        for k in 0..n_branches {
            let t = trunks[if self.config.shared_fpd { 0 } else { k }];
            let out = match self.batch_norms.get(k) {
                Some(bn) => bn.forward(tape, bind, store, t, self.config.bn, mode)?,
                None => t,
            };
            outs.push(out);
        }
        Ok(match outs.as_slice() {
            [one] => PerDecoder::uniform(*one),
            [md, ad1, ad2] => PerDecoder {
                md: *md,
                ad1: *ad1,
                ad2: *ad2,
            },
            _ => unreachable!("one or three branches"),
        })
    }

    /// Shared classifier applied to each branch. Identical branch nodes are
    /// classified once.
    pub fn classify(&self, tape: &mut Tape, bind: &Bindings, features: PerDecoder) -> Result<PerDecoder, NumError> {
        let md = self.classifier.forward(tape, bind, features.md)?;
        let ad1 = if features.ad1 == features.md {
            md
        } else {
            self.classifier.forward(tape, bind, features.ad1)?
        };
        let ad2 = if features.ad2 == features.md {
            md
        } else if features.ad2 == features.ad1 {
            ad1
        } else {
            self.classifier.forward(tape, bind, features.ad2)?
        };
        Ok(PerDecoder { md, ad1, ad2 })
    }
}
