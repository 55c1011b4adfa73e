//! Training objective: masked cross-entropy plus the γ-weighted global-local
//! contrastive term.

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// `(node, class)` pairs for the nodes in `mask`. Every masked node must have
/// a known label.
pub fn targets_from_mask(labels: &[Option<usize>], mask: &[usize]) -> Result<Vec<(usize, usize)>> {
    if mask.is_empty() {
        return Err(Error::Contract("loss mask is empty".into()));
    }
    mask.iter()
        .map(|&i| match labels.get(i) {
            Some(Some(y)) => Ok((i, *y)),
            Some(None) => Err(Error::Contract(format!("masked node {i} has no label"))),
            None => Err(Error::Contract(format!("masked node {i} outside {} nodes", labels.len()))),
        })
        .collect()
}

/// Mean of `−log max(ŷ[i, y_i], 1e-12)` over the targets.
pub fn cross_entropy(tape: &mut Tape, probs: Var, targets: &[(usize, usize)]) -> Result<Var> {
    tape.cross_entropy(probs, targets.to_vec())
}

/// `Σ_i ‖g_{y_i} − f_i‖² − Σ_i Σ_{q≠y_i} min(‖g_q − f_i‖², r)`, not averaged.
pub fn global_local_loss(tape: &mut Tape, g: Var, fl: Var, targets: &[(usize, usize)], cutoff: f64) -> Result<Var> {
    if cutoff <= 0.0 || cutoff.is_nan() {
        return Err(Error::Config(format!("loss cut-off r must be positive, got {cutoff}")));
    }
    tape.global_local(g, fl, targets.to_vec(), cutoff)
}

/// Loss nodes for one step.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cross_entropy: Var,
    /// Absent for heads without label features.
    pub global_local: Option<Var>,
}

/// `L_CE + γ·L_GL`. With γ = 0, or without label features, the total is
/// the cross-entropy node itself.
pub fn total_loss(
    tape: &mut Tape,
    probs: Var,
    g: Option<Var>,
    fl: Var,
    targets: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let ce = cross_entropy(tape, probs, targets)?;
    let gl = g.map(|g| global_local_loss(tape, g, fl, targets, cfg.cutoff)).transpose()?;
    let total = match gl {
        Some(gl) if cfg.gamma != 0.0 => {
            let w = tape.scale(gl, cfg.gamma);
            tape.add(ce, w)?
        }
        _ => ce,
    };
    Ok(LossTerms {
        total,
        cross_entropy: ce,
        global_local: gl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    #[test]
    fn masks_and_labels() {
        let labels = [Some(1), None, Some(0)];
        assert_eq!(targets_from_mask(&labels, &[2, 0]).unwrap(), vec![(2, 0), (0, 1)]);
        assert!(matches!(targets_from_mask(&labels, &[]), Err(Error::Contract(_))));
        assert!(matches!(targets_from_mask(&labels, &[1]), Err(Error::Contract(_))));
    }

    #[test]
    fn one_hot_and_uniform_cross_entropy() {
        let mut t = Tape::new();
        let p = t.constant(DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        let ce = cross_entropy(&mut t, p, &[(0, 1), (1, 0)]).unwrap();
        assert!(t.scalar(ce) <= 1e-11);
        let u = t.constant(DenseMatrix::filled(3, 7, 1.0 / 7.0));
        let ce = cross_entropy(&mut t, u, &[(0, 3), (2, 6)]).unwrap();
        assert!((t.scalar(ce) - 7f64.ln()).abs() < 1e-12);
        assert!((t.scalar(ce) - 1.94591).abs() < 1e-5);
    }

    #[test]
    fn global_local_trivial_cases() {
        let mut t = Tape::new();
        let g = t.constant(DenseMatrix::from_rows(&[[1.0, 2.0]]));
        let f = t.constant(DenseMatrix::from_rows(&[[1.0, 2.0]]));
        let l = global_local_loss(&mut t, g, f, &[(0, 0)], 10.0).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let g = t.constant(DenseMatrix::from_rows(&[[1.0, 2.0], [10.0, 2.0]]));
        let l = global_local_loss(&mut t, g, f, &[(0, 0)], 10.0).unwrap();
        assert_eq!(t.scalar(l), -10.0);
        assert!(matches!(global_local_loss(&mut t, g, f, &[(0, 0)], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let mut t = Tape::new();
        let p = t.constant(DenseMatrix::from_rows(&[[0.3, 0.7]]));
        let g = t.constant(DenseMatrix::from_rows(&[[1.0], [2.0]]));
        let f = t.constant(DenseMatrix::from_rows(&[[0.5]]));
        let cfg = LossConfig { gamma: 0.0, cutoff: 10.0 };
        let terms = total_loss(&mut t, p, Some(g), f, &[(0, 1)], &cfg).unwrap();
        assert_eq!(terms.total, terms.cross_entropy);
        assert!(terms.global_local.is_some());
    }

    #[test]
    fn two_node_toy_sum() {
        // Probabilities and features chosen by hand.
        let mut t = Tape::new();
        let p = t.constant(DenseMatrix::from_rows(&[[0.8, 0.2], [0.4, 0.6]]));
        let g = t.constant(DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]));
        let f = t.constant(DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]));
        let targets = [(0, 0), (1, 1)];
        let cfg = LossConfig { gamma: 1.0, cutoff: 2.0 };
        let terms = total_loss(&mut t, p, Some(g), f, &targets, &cfg).unwrap();
        let ce = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        // node 0: own |(1,0)|²=1, other |(0,-1)|²=1 → 1 - 1
        // node 1: own |(-1,2)|²=5, other |(0,3)|²=9 clamped to 2 → 5 - 2
        let gl = 0.0 + 3.0;
        assert!((t.scalar(terms.cross_entropy) - ce).abs() < 1e-15);
        assert_eq!(t.scalar(terms.global_local.unwrap()), gl);
        assert!((t.scalar(terms.total) - (ce + gl)).abs() < 1e-15);
    }
}
