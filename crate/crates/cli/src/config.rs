//! Run configuration.
//!
//! Config files are flat `key = value` lines with `#` comments (a flat
//! TOML table). Every key is optional; precedence is command-line flag,
//! then file, then built-in default.

use std::path::Path;

use epd_core::datamodel::SubsetMode;
use epd_core::encoders::{Activation, EncoderDims, LabelSource};
use epd_core::epd::{DecoderMode, EpdHyper, Objective};
use epd_core::model::ModelConfig;
use epd_core::numcore::BatchNormOptions;
use epd_core::train::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub d_v: usize,
    pub d_s: usize,
    pub d_g: usize,
    pub d_o: usize,
    pub d_p: usize,
    pub d_h: usize,
    pub num_object_classes: usize,
    /// Includes the no-relation class 0.
    pub num_predicate_classes: usize,
    /// Head, body and tail sizes of the predicate partition.
    pub cardinalities: [usize; 3],

    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub lambda: [f32; 3],
    pub object_loss_weight: f32,

    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,

    pub activation: Activation,
    pub bn_enabled: bool,
    pub bn_momentum: f32,
    pub bn_eps: f32,
    pub shared_fpd: bool,
    pub decoder_mode: DecoderMode,
    pub subset_mode: SubsetMode,
    pub objective: Objective,
    pub label_source: LabelSource,

    pub ks: Vec<usize>,
    pub graph_constraint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderDims::default();
        let hyper = EpdHyper::default();
        let opt = OptimizerConfig::default();
        let bn = BatchNormOptions::default();
        Self {
            seed: 0,
            d_v: enc.d_v,
            d_s: enc.d_s,
            d_g: enc.d_g,
            d_o: enc.d_o,
            d_p: enc.d_p,
            d_h: 64,
            num_object_classes: enc.num_object_classes,
            num_predicate_classes: 51,
            cardinalities: [5, 10, 35],
            alpha: hyper.alpha,
            beta: hyper.beta,
            gamma: hyper.gamma,
            lambda: hyper.lambda,
            object_loss_weight: hyper.object_loss_weight,
            lr: opt.lr,
            momentum: opt.momentum,
            batch_size: opt.batch_size,
            epochs: opt.epochs,
            activation: Activation::Relu,
            bn_enabled: true,
            bn_momentum: bn.momentum,
            bn_eps: bn.eps,
            shared_fpd: true,
            decoder_mode: DecoderMode::Multi,
            subset_mode: SubsetMode::Nested,
            objective: Objective::Ensemble,
            label_source: LabelSource::GroundTruth,
            ks: vec![5, 10],
            graph_constraint: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Flat `key = value` rendering that [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        self.hyper().validate().map_err(CliError::Usage)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return usage(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return usage(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return usage("batch_size must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return usage(format!("ks must be non-empty positive values, got {:?}", self.ks));
        }
        if self.cardinalities.iter().sum::<usize>() + 1 != self.num_predicate_classes {
            return usage(format!(
                "cardinalities {:?} must sum to num_predicate_classes - 1 = {}",
                self.cardinalities,
                self.num_predicate_classes.saturating_sub(1)
            ));
        }
        let dims = [self.d_v, self.d_s, self.d_g, self.d_o, self.d_p, self.d_h, self.num_object_classes];
        if dims.contains(&0) || self.num_predicate_classes < 2 {
            return usage("dimensions and vocabulary sizes must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0 && self.bn_eps > 0.0) {
            return usage("bn_momentum must lie in (0, 1) and bn_eps must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderDims {
                d_v: self.d_v,
                d_s: self.d_s,
                d_g: self.d_g,
                d_o: self.d_o,
                d_p: self.d_p,
                num_object_classes: self.num_object_classes,
            },
            d_h: self.d_h,
            num_predicate_classes: self.num_predicate_classes,
            activation: self.activation,
            decoder_mode: self.decoder_mode,
            shared_fpd: self.shared_fpd,
            bn_enabled: self.bn_enabled,
            bn: BatchNormOptions {
                momentum: self.bn_momentum,
                eps: self.bn_eps,
            },
            label_source: self.label_source,
        }
    }

    pub fn hyper(&self) -> EpdHyper {
        EpdHyper {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            lambda: self.lambda,
            objective: self.objective,
            object_loss_weight: self.object_loss_weight,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }

    /// The fields that fix the model's architecture and objective.
    /// Evaluation-time options (`ks`, `graph_constraint`, `lambda`) and the
    /// run length and seed are left out.
    pub fn model_fingerprint(&self) -> RunConfig {
        RunConfig {
            seed: 0,
            epochs: 0,
            ks: Vec::new(),
            graph_constraint: true,
            lambda: [0.0; 3],
            ..self.clone()
        }
    }
}

/// Command-line overrides shared by `train`, `eval` and `ablate`.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f32>,
    /// Images per minibatch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Aggregation weights `md,ad1,ad2`, or a preset name (`default`, `best_mr`).
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<[f32; 3]>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
    }
}

pub fn parse_lambda(s: &str) -> Result<[f32; 3], String> {
    if let Some(p) = EpdHyper::lambda_preset(s) {
        return Ok(p);
    }
    let v: Vec<f32> = s
        .split(',')
        .map(|x| x.trim().parse::<f32>().map_err(|e| format!("'{x}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f32>| format!("expected three weights, got {}", v.len()))
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("'{x}': {e}")))
        .collect()
}

/// Default config, overlaid by the file at `path` if given, then by the
/// seed flag.
pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
