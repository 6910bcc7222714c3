use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epd_cli::ablation::{parse_modes, render_csv, render_table, run_ablation};
use epd_cli::checkpoint;
use epd_cli::config::{parse_lambda, parse_usize_list, resolve, Overrides, RunConfig};
use epd_cli::error::CliError;
use epd_cli::pipeline::{evaluate, explain_pair, load_checked, partition_for, train_run};
use epd_core::datamodel::{compute_frequency_table, generate_synthetic, GeneratorConfig, SimilarPair};

#[derive(Parser)]
#[command(name = "epd", version, about = "Ensemble predicate decoding on synthetic scene-graph data")]
struct Cli {
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded train.jsonl and test.jsonl files.
    GenData(GenDataArgs),
    /// Print the head/body/tail split of a training file.
    Partition {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model and write final and best checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Split used to pick the best checkpoint (defaults to the training data).
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint and write report.json and report.csv.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_usize_list)]
        k: Option<Vec<usize>>,
        #[arg(long, value_parser = parse_lambda)]
        lambda: Option<[f32; 3]>,
        #[arg(long)]
        no_graph_constraint: bool,
        /// Evaluate even when --config disagrees with the checkpoint.
        #[arg(long)]
        force: bool,
    },
    /// Show the MD, MD+AD1 and MD+AD1+AD2 score panels for one pair.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        image_id: String,
        #[arg(long)]
        subj: usize,
        #[arg(long)]
        obj: usize,
        #[arg(long, default_value_t = 5)]
        top_n: usize,
        #[arg(long, value_parser = parse_lambda)]
        lambda: Option<[f32; 3]>,
    },
    /// Train and compare ablation variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma-separated: baseline_ce, single_reweighted, multi_nested,
        /// multi_disjoint, multi_md_full, bn_grid.
        #[arg(long, default_value = "baseline_ce,single_reweighted,multi_nested")]
        modes: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    num_images: Option<usize>,
    #[arg(long)]
    num_test_images: Option<usize>,
    /// Positive predicate classes (class 0 is added on top).
    #[arg(long)]
    num_predicates: Option<usize>,
    #[arg(long)]
    zipf_s: Option<f64>,
    /// `F:R:delta,...`; an empty string disables similar pairs.
    #[arg(long)]
    similar_pairs: Option<String>,
    #[arg(long)]
    neg_frac: Option<f32>,
    /// Standard deviation of union-feature noise.
    #[arg(long)]
    noise: Option<f32>,
    /// Multiplier on every emitted feature vector.
    #[arg(long)]
    feature_scale: Option<f32>,
}

fn out_dir(cli_out: &Option<PathBuf>, fallback: &str) -> Result<PathBuf, CliError> {
    let dir = cli_out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_data(cli: &Cli, cfg: &RunConfig, args: &GenDataArgs) -> Result<(), CliError> {
    let mut g = GeneratorConfig {
        d_v: cfg.d_v,
        num_object_classes: cfg.num_object_classes,
        num_predicates: cfg.num_predicate_classes - 1,
        ..GeneratorConfig::default()
    };
    if let Some(v) = args.num_images {
        g.num_images = v;
    }
    if let Some(v) = args.num_test_images {
        g.num_test_images = v;
    }
    if let Some(v) = args.num_predicates {
        g.num_predicates = v;
    }
    if let Some(v) = args.zipf_s {
        g.zipf_s = v;
    }
    if let Some(s) = &args.similar_pairs {
        g.similar_pairs = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse::<SimilarPair>)
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = args.neg_frac {
        g.neg_frac = v;
    }
    if let Some(v) = args.noise {
        g.noise = v;
    }
    if let Some(v) = args.feature_scale {
        g.feature_scale = v;
    }
    let dir = out_dir(&cli.out, "data")?;
    let (train, test) = generate_synthetic(&g, cfg.seed)?;
    train.save(&dir.join("train.jsonl"))?;
    test.save(&dir.join("test.jsonl"))?;
    write_json(&dir.join("generator.json"), &g)?;
    println!(
        "wrote {} train and {} test images ({} and {} positive relations) to {}",
        train.images.len(),
        test.images.len(),
        train.num_positive_relations(),
        test.num_positive_relations(),
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::GenData(args) => gen_data(&cli, &cfg, args),
        Command::Partition { data } => {
            let ds = load_checked(data, &cfg)?;
            let freq = compute_frequency_table(&ds.images, cfg.num_predicate_classes);
            let partition = partition_for(&cfg, &ds)?;
            let report = serde_json::json!({ "counts": freq.counts, "partition": partition });
            println!("{}", serde_json::to_string_pretty(&report)?);
            if cli.out.is_some() {
                let dir = out_dir(&cli.out, ".")?;
                write_json(&dir.join("partition.json"), &report)?;
            }
            Ok(())
        }
        Command::Train { data, val, overrides } => {
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let train_set = load_checked(data, &cfg)?;
            let val_set = val.as_deref().map(|p| load_checked(p, &cfg)).transpose()?;
            let dir = out_dir(&cli.out, "run")?;
            fs::write(dir.join("config.cfg"), cfg.to_text())?;
            let run = train_run(&cfg, &train_set, Some(val_set.as_ref().unwrap_or(&train_set)))?;
            let mut log = BufWriter::new(File::create(dir.join("epochs.jsonl"))?);
            for e in &run.logs {
                writeln!(log, "{}", serde_json::to_string(e)?)?;
            }
            log.flush()?;
            checkpoint::save(&dir.join("final"), &cfg, &run.partition, run.logs.len(), &run.model)?;
            let (best_epoch, best_model) = match &run.best {
                Some(b) => (b.epoch, &b.model),
                None => (run.logs.len(), &run.model),
            };
            checkpoint::save(&dir.join("best"), &cfg, &run.partition, best_epoch, best_model)?;
            if let Some(last) = run.logs.last() {
                println!("epoch {} l_total {:.4}", last.epoch, last.l_total);
            }
            if let Some(b) = &run.best {
                println!("best mR@{} {:.4} at epoch {}", cfg.ks.iter().max().unwrap(), b.mean_recall, b.epoch);
            }
            println!("checkpoints written to {}", dir.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            k,
            lambda,
            no_graph_constraint,
            force,
        } => {
            let (manifest, mut model) = checkpoint::load(ckpt)?;
            if cli.config.is_some() && cfg.model_fingerprint() != manifest.config.model_fingerprint() {
                let msg = format!("--config does not match the configuration stored in {}", ckpt.display());
                if !force {
                    return Err(CliError::Data(format!("{msg} (pass --force to evaluate anyway)")));
                }
                log::warn!("{msg}; using the checkpoint's configuration");
            }
            let mut eval_cfg = manifest.config.clone();
            if cli.config.is_some() {
                eval_cfg.ks = cfg.ks.clone();
                eval_cfg.lambda = cfg.lambda;
                eval_cfg.graph_constraint = cfg.graph_constraint;
            }
            if let Some(k) = k {
                eval_cfg.ks = k.clone();
            }
            if let Some(l) = lambda {
                eval_cfg.lambda = *l;
            }
            if *no_graph_constraint {
                eval_cfg.graph_constraint = false;
            }
            eval_cfg.validate()?;
            let ds = load_checked(data, &eval_cfg)?;
            let report = evaluate(&mut model, &ds, &eval_cfg, &manifest.partition)?;
            let dir = out_dir(&cli.out, ".")?;
            report.write(&dir, "report")?;
            for (k, r) in &report.r_at_k {
                println!("R@{k} {:.4}  mR@{k} {:.4}", r, report.mr_at_k[k]);
            }
            println!("Mean {:.4}", report.mean_metric);
            Ok(())
        }
        Command::Explain {
            ckpt,
            data,
            image_id,
            subj,
            obj,
            top_n,
            lambda,
        } => {
            let (manifest, mut model) = checkpoint::load(ckpt)?;
            let ds = load_checked(data, &manifest.config)?;
            let lambda = lambda.unwrap_or(manifest.config.lambda);
            let ex = explain_pair(&mut model, &ds, image_id, *subj, *obj, lambda, *top_n)?;
            for panel in &ex.panels {
                println!("{} (weights {:?})", panel.label, panel.weights);
                for row in &panel.rows {
                    println!("  {:>4}  {:.4}", row.class, row.score);
                }
            }
            if cli.out.is_some() {
                let dir = out_dir(&cli.out, ".")?;
                write_json(&dir.join("explain.json"), &ex)?;
            }
            Ok(())
        }
        Command::Ablate {
            data,
            test,
            modes,
            overrides,
        } => {
            let modes = parse_modes(modes)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let train_set = load_checked(data, &cfg)?;
            let test_set = load_checked(test, &cfg)?;
            let rows = run_ablation(&cfg, &modes, &train_set, &test_set)?;
            let dir = out_dir(&cli.out, "ablation")?;
            write_json(&dir.join("ablation.json"), &rows)?;
            fs::write(dir.join("ablation.csv"), render_csv(&rows))?;
            print!("{}", render_table(&rows));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
