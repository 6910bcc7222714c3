//! Ablation sweeps: train each variant with the shared seed and compare
//! test metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use epd_core::datamodel::{Dataset, SubsetMode};
use epd_core::epd::{DecoderMode, Objective};
use epd_core::metrics::{GroupRecall, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::{evaluate, train_run};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// One decoder, plain cross-entropy.
    BaselineCe,
    /// One decoder, block-reweighted loss.
    SingleReweighted,
    MultiNested,
    MultiDisjoint,
    MultiMdFull,
    /// Shared vs separate decoder trunk, with and without batch norm.
    BnGrid,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::BaselineCe,
        AblationMode::SingleReweighted,
        AblationMode::MultiNested,
        AblationMode::MultiDisjoint,
        AblationMode::MultiMdFull,
        AblationMode::BnGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::BaselineCe => "baseline_ce",
            AblationMode::SingleReweighted => "single_reweighted",
            AblationMode::MultiNested => "multi_nested",
            AblationMode::MultiDisjoint => "multi_disjoint",
            AblationMode::MultiMdFull => "multi_md_full",
            AblationMode::BnGrid => "bn_grid",
        }
    }

    /// Named run configurations derived from `base`.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let single = |objective| RunConfig {
            decoder_mode: DecoderMode::Single,
            objective,
            ..base.clone()
        };
        let multi = |subset_mode| RunConfig {
            decoder_mode: DecoderMode::Multi,
            objective: Objective::Ensemble,
            subset_mode,
            ..base.clone()
        };
        let one = |cfg: RunConfig| vec![(self.name().to_string(), cfg)];
        match self {
            AblationMode::BaselineCe => one(single(Objective::PlainCe)),
            AblationMode::SingleReweighted => one(single(Objective::SingleReweighted)),
            AblationMode::MultiNested => one(multi(SubsetMode::Nested)),
            AblationMode::MultiDisjoint => one(multi(SubsetMode::Disjoint)),
            AblationMode::MultiMdFull => one(multi(SubsetMode::MdFullDisjointAux)),
            AblationMode::BnGrid => [(true, true), (true, false), (false, true), (false, false)]
                .into_iter()
                .map(|(shared, bn)| {
                    let name = format!(
                        "bn_grid/{}_{}",
                        if shared { "shared" } else { "separate" },
                        if bn { "bn" } else { "no_bn" }
                    );
                    let cfg = RunConfig {
                        shared_fpd: shared,
                        bn_enabled: bn,
                        ..multi(SubsetMode::Nested)
                    };
                    (name, cfg)
                })
                .collect(),
        }
    }
}

impl FromStr for AblationMode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
            CliError::Usage(format!("unknown ablation mode '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

pub fn parse_modes(s: &str) -> Result<Vec<AblationMode>, CliError> {
    s.split(',').map(|m| m.trim().parse()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub r_at_k: BTreeMap<usize, f64>,
    pub mr_at_k: BTreeMap<usize, f64>,
    pub mean: f64,
    /// Group recalls at the largest K.
    pub groups: GroupRecall,
    pub final_loss: f32,
}

impl AblationRow {
    fn new(variant: String, report: &MetricsReport, final_loss: f32) -> Self {
        let k = *report.r_at_k.keys().max().expect("at least one K");
        Self {
            variant,
            r_at_k: report.r_at_k.clone(),
            mr_at_k: report.mr_at_k.clone(),
            mean: report.mean_metric,
            groups: report.group_recall.get(&k).copied().unwrap_or_default(),
            final_loss,
        }
    }
}

/// Trains and evaluates every variant of every mode, in order.
pub fn run_ablation(base: &RunConfig, modes: &[AblationMode], train_set: &Dataset, test_set: &Dataset) -> Result<Vec<AblationRow>, CliError> {
    let mut rows = Vec::new();
    for mode in modes {
        for (name, cfg) in mode.variants(base) {
            log::info!("ablation: training {name}");
            let mut run = train_run(&cfg, train_set, None)?;
            let report = evaluate(&mut run.model, test_set, &cfg, &run.partition)?;
            let final_loss = run.logs.last().map_or(0.0, |l| l.l_total);
            rows.push(AblationRow::new(name, &report, final_loss));
        }
    }
    Ok(rows)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// Fixed-width comparison table, values in percent.
pub fn render_table(rows: &[AblationRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let ks: Vec<usize> = first.r_at_k.keys().copied().collect();
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let mut out = format!("{:width$}", "variant");
    for k in &ks {
        let _ = write!(out, " {:>7}", format!("R@{k}"));
    }
    for k in &ks {
        let _ = write!(out, " {:>7}", format!("mR@{k}"));
    }
    out.push_str("    Mean    Head    Body    Tail\n");
    for r in rows {
        let _ = write!(out, "{:width$}", r.variant);
        for k in &ks {
            let _ = write!(out, " {:>7}", pct(r.r_at_k.get(k).copied()));
        }
        for k in &ks {
            let _ = write!(out, " {:>7}", pct(r.mr_at_k.get(k).copied()));
        }
        let _ = writeln!(
            out,
            " {:>7} {:>7} {:>7} {:>7}",
            pct(Some(r.mean)),
            pct(r.groups.head),
            pct(r.groups.body),
            pct(r.groups.tail)
        );
    }
    out
}

pub fn render_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,metric,k,value\n");
    for r in rows {
        for (k, v) in &r.r_at_k {
            let _ = writeln!(out, "{},R,{k},{v}", r.variant);
        }
        for (k, v) in &r.mr_at_k {
            let _ = writeln!(out, "{},mR,{k},{v}", r.variant);
        }
        let _ = writeln!(out, "{},Mean,,{}", r.variant, r.mean);
        for (name, v) in [("head", r.groups.head), ("body", r.groups.body), ("tail", r.groups.tail)] {
            if let Some(v) = v {
                let _ = writeln!(out, "{},{name},,{v}", r.variant);
            }
        }
    }
    out
}
