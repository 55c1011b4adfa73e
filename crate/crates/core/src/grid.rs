//! Hyper-parameter grid search over config keys, optionally subsampled to a
//! budget, with trials trained in parallel.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::train::{train_problem, Problem};

/// Cartesian product of per-key value lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

const LR: &[&str] = &["0.1", "0.01", "0.001", "0.0001"];
const WD: &[&str] = &["0.001", "0.0001", "0.00001", "0"];

impl Grid {
    /// The standard search space: both learning rates and weight decays,
    /// γ and dropout (3840 points).
    pub fn standard() -> Self {
        let axis = |k: &str, vs: &[&str]| (k.to_string(), vs.iter().map(|s| s.to_string()).collect());
        Grid {
            axes: vec![
                axis("optim.lr", LR),
                axis("optim.lr_gnn", LR),
                axis("optim.wd", WD),
                axis("optim.wd_gnn", WD),
                axis("loss.gamma", &["100", "10", "1", "0.1", "0.01"]),
                axis("train.dropout", &["0.5", "0.6", "0.7"]),
            ],
        }
    }

    /// Parses `key=v1,v2,...`; the key must be a config key.
    pub fn parse_axis(text: &str) -> Result<(String, Vec<String>)> {
        let (key, values) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis {text:?} is not key=v1,v2,...")))?;
        let key = key.trim();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis {key} has no values")));
        }
        let mut probe = TrainConfig::default();
        for v in &values {
            probe.set(key, v)?;
        }
        Ok((key.to_string(), values))
    }

    pub fn from_axes(specs: &[String]) -> Result<Self> {
        let axes = specs.iter().map(|s| Self::parse_axis(s)).collect::<Result<Vec<_>>>()?;
        if axes.is_empty() {
            return Err(Error::Config("grid has no axes".into()));
        }
        Ok(Grid { axes })
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Assignment for flat point index `idx` (last axis varies fastest).
    pub fn point(&self, mut idx: usize) -> Vec<(String, String)> {
        let mut out = vec![(String::new(), String::new()); self.axes.len()];
        for (slot, (key, values)) in out.iter_mut().zip(&self.axes).rev() {
            *slot = (key.clone(), values[idx % values.len()].clone());
            idx /= values.len();
        }
        out
    }

    /// Point indices to evaluate: all of them when `budget` covers the grid,
    /// otherwise `budget` distinct indices drawn with `seed`, ascending.
    pub fn select(&self, budget: Option<usize>, seed: u64) -> Vec<usize> {
        let size = self.size();
        match budget {
            Some(b) if b < size => {
                let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), size, b).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..size).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub config: TrainConfig,
    /// `None` when training diverged.
    pub best_val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Ranked best first.
    pub trials: Vec<Trial>,
    pub keys: Vec<String>,
}

impl GridOutcome {
    pub fn best(&self) -> &Trial {
        &self.trials[0]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,index");
        for k in &self.keys {
            write!(out, ",{k}").expect("write to String");
        }
        out.push_str(",best_val_acc,test_acc,best_epoch,status\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        for (rank, t) in self.trials.iter().enumerate() {
            write!(out, "{},{}", rank + 1, t.index).expect("write to String");
            for (_, v) in &t.assignment {
                write!(out, ",{v}").expect("write to String");
            }
            let status = if t.best_val_acc.is_some() { "ok" } else { "diverged" };
            writeln!(out, ",{},{},{},{status}", fmt(t.best_val_acc), fmt(t.test_acc), t.best_epoch)
                .expect("write to String");
        }
        out
    }
}

/// Higher validation accuracy first; ties go to lower γ, then lower
/// learning rate, then lower point index.
fn rank(a: &Trial, b: &Trial) -> Ordering {
    let val = |t: &Trial| t.best_val_acc.unwrap_or(f64::NEG_INFINITY);
    val(b)
        .total_cmp(&val(a))
        .then(a.config.loss.gamma.total_cmp(&b.config.loss.gamma))
        .then(a.config.optim.lr.total_cmp(&b.config.optim.lr))
        .then(a.index.cmp(&b.index))
}

/// Trains every selected grid point on `problem` and ranks the trials.
/// Diverging trials are kept and ranked last; other failures abort.
pub fn grid_search(problem: &Problem, base: &TrainConfig, grid: &Grid, budget: Option<usize>, seed: u64) -> Result<GridOutcome> {
    if grid.size() == 0 {
        return Err(Error::Config("grid is empty".into()));
    }
    let configs = grid
        .select(budget, seed)
        .into_iter()
        .map(|index| {
            let assignment = grid.point(index);
            let mut config = base.clone();
            for (k, v) in &assignment {
                config.set(k, v)?;
            }
            config.validate()?;
            Ok((index, assignment, config))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trials = configs
        .into_par_iter()
        .map(|(index, assignment, config)| {
            let (best_val_acc, test_acc, best_epoch) = match train_problem(problem, &config) {
                Ok(out) => (Some(out.metrics.best_val_acc), Some(out.metrics.test_acc), out.metrics.best_epoch),
                Err(Error::NonFinite { .. }) => (None, None, 0),
                Err(e) => return Err(e),
            };
            Ok(Trial {
                index,
                assignment,
                config,
                best_val_acc,
                test_acc,
                best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    trials.sort_by(rank);
    Ok(GridOutcome {
        trials,
        keys: grid.axes.iter().map(|(k, _)| k.clone()).collect(),
    })
}
