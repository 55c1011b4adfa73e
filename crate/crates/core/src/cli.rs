//! Command-line driver: argument parsing, config layering and the
//! subcommands.
//!
//! Configuration is layered as built-in defaults, then `--config` file,
//! then `--backbone`/`--seed`, then each `--set key=value` in order. Every
//! failure prints one `error:` line and maps to an exit code via
//! [`Error::exit_code`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config_text, BackboneKind, TrainConfig};
use crate::data::{generate_sbm, load_dataset_with, write_dataset, Dataset, LoadOptions, SbmSpec};
use crate::error::{Error, Result};
use crate::flops::{estimate_flops, FlopDims};
use crate::gradcheck::{check_all, verify, GradcheckSetup, TOLERANCE};
use crate::grid::{grid_search, Grid};
use crate::head::write_matrix_csv;
use crate::model::forward;
use crate::tape::Tape;
use crate::train::{evaluate, train_problem, Problem};

#[derive(Parser, Debug)]
#[command(name = "glgnn", version, about = "Global-local graph neural network trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write metrics, summary and checkpoint.
    Train(TrainArgs),
    /// Report accuracies of a checkpoint on a split.
    Eval(EvalArgs),
    /// Search a hyper-parameter grid and rank the trials.
    Gridsearch(GridArgs),
    /// Compare tape gradients with finite differences on tiny models.
    Gradcheck(GradcheckArgs),
    /// Print the analytic FLOP estimate per term.
    Flops(FlopsArgs),
    /// Write a stochastic block model dataset.
    GenSbm(SbmArgs),
    /// Write node and label features of a checkpoint as CSV.
    ExportEmbeddings(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// `key: value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<BackboneKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one config key, e.g. `--set loss.gamma=1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "public")]
    pub split: String,
    /// Override the dataset's feature row-normalization flag.
    #[arg(long)]
    pub row_normalize: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for metrics.csv, summary.txt and checkpoint.bin.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory (export-embeddings only).
    #[arg(long, default_value = "runs/embeddings")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Grid axis `key=v1,v2,...` (repeatable); defaults to the standard grid.
    #[arg(long = "grid", value_name = "KEY=V1,V2")]
    pub axes: Vec<String>,
    /// Number of grid points to sample; 0 evaluates the whole grid.
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    /// Retrain the winner with this many consecutive seeds and report the mean.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value = "runs/grid")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negate the tape gradient of this block before comparing (self-test).
    #[arg(long, hide = true)]
    pub inject_sign_flip: Option<String>,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct SbmArgs {
    /// Comma-separated block sizes.
    #[arg(long, default_value = "50,50", value_delimiter = ',')]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_out: f64,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data/sbm")]
    pub out: PathBuf,
}

fn parse_backbone(s: &str) -> std::result::Result<BackboneKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gridsearch(a) => cmd_gridsearch(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Flops(a) => cmd_flops(&a),
        Command::GenSbm(a) => cmd_gen_sbm(&a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(&a),
    }
}

/// Layers defaults, config file, flags and `--set` overrides, then
/// validates the result.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in parse_config_text(&text, path)? {
            cfg.set(&k, &v)?;
        }
    }
    if let Some(kind) = args.backbone {
        cfg.set("model.backbone", &kind.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    for a in &args.overrides {
        cfg.apply_assignment(a)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(data: &DataArgs) -> Result<Dataset> {
    load_dataset_with(
        &data.dataset,
        LoadOptions {
            row_normalize: data.row_normalize,
        },
    )
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let ds = load(&a.data)?;
    let split = ds.split(&a.data.split)?;
    let problem = Problem::new(&ds, split);
    let out = train_problem(&problem, &cfg)?;
    create_dir(&a.out)?;
    out.metrics.write_csv(&a.out.join("metrics.csv"))?;
    let summary = out.metrics.summary(&cfg);
    write_text(&a.out.join("summary.txt"), &summary)?;
    Checkpoint {
        config: cfg,
        input_dim: ds.num_features(),
        num_classes: ds.num_classes(),
        params: out.params,
    }
    .save(&a.out.join("checkpoint.bin"))?;
    print!("{summary}");
    Ok(())
}

fn load_checkpoint_for(a: &EvalArgs, ds: &Dataset) -> Result<Checkpoint> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.input_dim != ds.num_features() || ck.num_classes != ds.num_classes() {
        return Err(Error::Integrity(format!(
            "checkpoint expects {} features and {} classes, dataset has {} and {}",
            ck.input_dim,
            ck.num_classes,
            ds.num_features(),
            ds.num_classes()
        )));
    }
    Ok(ck)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let ck = load_checkpoint_for(a, &ds)?;
    let problem = Problem::new(&ds, ds.split(&a.data.split)?);
    let acc = evaluate(&problem, &ck.params, &ck.config)?;
    println!("train_acc: {:.6}\nval_acc: {:.6}\ntest_acc: {:.6}", acc.train, acc.val, acc.test);
    Ok(())
}

fn cmd_export_embeddings(a: &EvalArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let ck = load_checkpoint_for(a, &ds)?;
    let inputs = ds.graph_inputs();
    let mut tape = Tape::new();
    let vars = ck.params.bind(&mut tape);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let out = forward(&mut tape, &ck.config, &vars, &inputs, crate::backbone::Mode::Eval, &mut rng)?;
    create_dir(&a.out)?;
    let nodes = a.out.join("node_features.csv");
    write_matrix_csv(&nodes, tape.value(out.features))?;
    println!("node_features: {}", nodes.display());
    if let Some(g) = out.label_features {
        let labels = a.out.join("label_features.csv");
        write_matrix_csv(&labels, tape.value(g))?;
        println!("label_features: {}", labels.display());
    }
    Ok(())
}

fn cmd_gridsearch(a: &GridArgs) -> Result<()> {
    let base = resolve_config(&a.config)?;
    let grid = if a.axes.is_empty() {
        Grid::standard()
    } else {
        Grid::from_axes(&a.axes)?
    };
    if a.repeats == 0 {
        return Err(Error::Config("--repeats must be at least 1".into()));
    }
    let ds = load(&a.data)?;
    let problem = Problem::new(&ds, ds.split(&a.data.split)?);
    let budget = (a.budget > 0).then_some(a.budget);
    let outcome = grid_search(&problem, &base, &grid, budget, base.seed)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("results.csv"), &outcome.to_csv())?;
    let best = outcome.best();
    let mut summary = format!("trials: {}\nbest_index: {}\n", outcome.trials.len(), best.index);
    for (k, v) in &best.assignment {
        summary.push_str(&format!("best.{k}: {v}\n"));
    }
    if let (Some(val), Some(test)) = (best.best_val_acc, best.test_acc) {
        summary.push_str(&format!("best_val_acc: {val:.6}\nbest_test_acc: {test:.6}\n"));
    }
    if a.repeats > 1 {
        let mut tests = Vec::with_capacity(a.repeats);
        for r in 0..a.repeats as u64 {
            let mut cfg = best.config.clone();
            cfg.seed = base.seed + r;
            tests.push(train_problem(&problem, &cfg)?.metrics.test_acc);
        }
        let mean = tests.iter().sum::<f64>() / tests.len() as f64;
        let sd = (tests.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tests.len() as f64).sqrt();
        summary.push_str(&format!("repeats: {}\nmean_test_acc: {mean:.6}\nstd_test_acc: {sd:.6}\n", a.repeats));
    }
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let setup = GradcheckSetup {
        seed: a.seed,
        ..GradcheckSetup::default()
    };
    let reports = check_all(&setup, a.inject_sign_flip.as_deref())?;
    for r in &reports {
        let mark = if r.rel_err < TOLERANCE { "ok" } else { "FAIL" };
        println!("{:<6} {:<28} {:.3e} {mark}", r.backbone.to_string(), r.block, r.rel_err);
    }
    verify(&reports, TOLERANCE)
}

fn cmd_flops(a: &FlopsArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let ds = load_dataset_with(&a.dataset, LoadOptions::default())?;
    let dims = FlopDims {
        nodes: ds.num_nodes(),
        input_features: ds.num_features(),
        classes: ds.num_classes(),
        avg_degree: ds.graph().stats().input_edges as f64 * 2.0 / ds.num_nodes() as f64,
    };
    println!("{}", estimate_flops(&dims, &cfg));
    Ok(())
}

fn cmd_gen_sbm(a: &SbmArgs) -> Result<()> {
    let ds = generate_sbm(&SbmSpec {
        blocks: a.blocks.clone(),
        p_in: a.p_in,
        p_out: a.p_out,
        feature_dim: a.features,
        noise: a.sigma,
        seed: a.seed,
    })?;
    write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} ({} nodes, {} edges, {} classes)",
        a.out.display(),
        ds.num_nodes(),
        ds.graph().num_edges(),
        ds.num_classes()
    );
    Ok(())
}
