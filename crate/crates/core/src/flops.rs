//! Analytic multiply-accumulate counts for one forward pass.

use std::fmt;

use crate::config::{BackboneKind, HeadKind, TrainConfig};

/// Problem dimensions the estimate depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlopDims {
    pub nodes: usize,
    pub input_features: usize,
    pub classes: usize,
    /// Average degree `2|E|/n`, used by the attention term.
    pub avg_degree: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopBreakdown {
    /// `(term name, count)` in evaluation order.
    pub terms: Vec<(&'static str, f64)>,
}

impl FlopBreakdown {
    pub fn total(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    pub fn total_millions(&self) -> f64 {
        self.total() / 1e6
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

impl fmt::Display for FlopBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in &self.terms {
            writeln!(f, "{name}: {:.4}M", v / 1e6)?;
        }
        write!(f, "total: {:.4}M", self.total_millions())
    }
}

/// Per-term counts:
///
/// - embedding `n·c_in·c`
/// - backbone `n·c²·L`, plus `n·d̃·c·L` for attention
/// - readout `n·2c·c` and label MLPs `2·e·c·k` (global-local head)
/// - correspondence `n·c·k` (or the linear classifier of the same size)
pub fn estimate_flops(dims: &FlopDims, cfg: &TrainConfig) -> FlopBreakdown {
    let n = dims.nodes as f64;
    let c = cfg.backbone.hidden as f64;
    let l = cfg.backbone.layers as f64;
    let k = dims.classes as f64;
    let e = cfg.head.expansion as f64;
    let mut terms = vec![
        ("embedding", n * dims.input_features as f64 * c),
        ("backbone", n * c * c * l),
    ];
    if cfg.backbone.kind == BackboneKind::Gat {
        terms.push(("attention", n * dims.avg_degree * c * l));
    }
    match cfg.head.kind {
        HeadKind::GlobalLocal => {
            terms.push(("readout", n * 2.0 * c * c));
            terms.push(("label_mlps", 2.0 * e * c * k));
            terms.push(("correspondence", n * c * k));
        }
        HeadKind::Linear => terms.push(("classifier", n * c * k)),
    }
    FlopBreakdown { terms }
}
