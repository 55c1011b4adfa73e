//! Training loop with early stopping, evaluation and metrics records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Mode;
use crate::config::TrainConfig;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{targets_from_mask, total_loss};
use crate::model::{forward, GraphInputs, ModelParams};
use crate::optim::{adam_step, AdamState};
use crate::tape::Tape;
use crate::tensor::DenseMatrix;

/// Everything a run needs from a dataset, with the sparse operators built
/// once so that many runs can share them.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub inputs: GraphInputs,
    pub labels: &'a [Option<usize>],
    pub num_classes: usize,
    pub split: &'a Split,
}

impl<'a> Problem<'a> {
    pub fn new(ds: &'a Dataset, split: &'a Split) -> Self {
        Self {
            inputs: ds.graph_inputs(),
            labels: ds.labels(),
            num_classes: ds.num_classes(),
            split,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.features.cols()
    }

    /// Fresh parameters and the generator that continues to drive dropout,
    /// both derived from `cfg.seed`.
    pub fn init(&self, cfg: &TrainConfig) -> (ModelParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelParams::init(cfg, self.input_dim(), self.num_classes, &mut rng);
        (params, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracies {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub loss_ce: f64,
    /// Raw (unaveraged) global-local loss; 0 for heads without it.
    pub loss_gl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) with the highest validation accuracy; first wins ties.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy at `best_epoch`.
    pub test_acc: f64,
    pub stopped_early: bool,
    pub train_size: usize,
}

pub const METRICS_HEADER: &str = "epoch,train_acc,val_acc,test_acc,loss_ce,loss_gl";

impl Metrics {
    /// One line per epoch after a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.train_acc, r.val_acc, r.test_acc, r.loss_ce, r.loss_gl
            )
            .expect("write to String");
        }
        out
    }

    /// `key: value` summary document.
    pub fn summary(&self, cfg: &TrainConfig) -> String {
        let mut out = String::new();
        let last = self.records.last();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}: {v}").expect("write to String");
        kv("test_acc", format!("{:.6}", self.test_acc));
        kv("best_val_acc", format!("{:.6}", self.best_val_acc));
        kv("best_epoch", self.best_epoch.to_string());
        kv("epochs_run", self.records.len().to_string());
        kv("stopped_early", self.stopped_early.to_string());
        if let Some(r) = last {
            kv("final_loss_ce", format!("{:.6}", r.loss_ce));
            kv("final_loss_gl", format!("{:.6}", r.loss_gl));
            kv(
                "final_loss_gl_per_node",
                format!("{:.6}", r.loss_gl / self.train_size.max(1) as f64),
            );
        }
        for (k, v) in cfg.to_pairs() {
            kv(&k, v);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Metrics,
    /// Parameters at the best validation epoch.
    pub params: ModelParams,
}

/// Fraction of `mask` whose argmax prediction equals the label; argmax ties
/// go to the lowest class index.
pub fn accuracy(probs: &DenseMatrix, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Contract("accuracy over an empty mask".into()));
    }
    let mut correct = 0usize;
    for &i in mask {
        let y = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("evaluated node {i} has no label")))?;
        correct += usize::from(argmax(probs.row(i)) == y);
    }
    Ok(correct as f64 / mask.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Eval-mode class probabilities. Consumes no randomness.
pub fn predict_probs(problem: &Problem, params: &ModelParams, cfg: &TrainConfig) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    // Eval mode never draws from the generator; any seed will do.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut tape, cfg, &vars, &problem.inputs, Mode::Eval, &mut rng)?;
    Ok(tape.value(out.probs).clone())
}

pub fn evaluate(problem: &Problem, params: &ModelParams, cfg: &TrainConfig) -> Result<Accuracies> {
    let probs = predict_probs(problem, params, cfg)?;
    let s = problem.split;
    Ok(Accuracies {
        train: accuracy(&probs, problem.labels, &s.train)?,
        val: accuracy(&probs, problem.labels, &s.val)?,
        test: accuracy(&probs, problem.labels, &s.test)?,
    })
}

/// Trains on the named split of `ds`.
pub fn train(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_problem(&Problem::new(ds, split), cfg)
}

pub fn train_problem(problem: &Problem, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = problem.split;
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Split(format!("split {}: training needs nonempty val and test sets", split.name)));
    }
    let targets = targets_from_mask(problem.labels, &split.train)?;
    let (mut params, mut rng) = problem.init(cfg);
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut metrics = Metrics {
        records: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
        test_acc: 0.0,
        stopped_early: false,
        train_size: targets.len(),
    };
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = forward(&mut tape, cfg, &vars, &problem.inputs, Mode::Train, &mut rng)?;
        let terms = total_loss(&mut tape, out.probs, out.label_features, out.features, &targets, &cfg.loss)?;
        let loss_ce = tape.scalar(terms.cross_entropy);
        let loss_gl = terms.global_local.map_or(0.0, |v| tape.scalar(v));
        if !loss_ce.is_finite() || !loss_gl.is_finite() || !tape.scalar(terms.total).is_finite() {
            return Err(Error::NonFinite { epoch, loss_ce, loss_gl });
        }
        tape.backward(terms.total)?;
        let grads = vars.grads(&tape);
        drop(tape);
        adam_step(&mut params, &grads, &mut adam, &cfg.optim)?;
        if !params.is_finite() {
            return Err(Error::NonFinite { epoch, loss_ce, loss_gl });
        }

        let acc = evaluate(problem, &params, cfg)?;
        metrics.records.push(EpochRecord {
            epoch,
            train_acc: acc.train,
            val_acc: acc.val,
            test_acc: acc.test,
            loss_ce,
            loss_gl,
        });
        if acc.val > metrics.best_val_acc {
            metrics.best_val_acc = acc.val;
            metrics.best_epoch = epoch;
            metrics.test_acc = acc.test;
            best.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                metrics.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { metrics, params: best })
}
