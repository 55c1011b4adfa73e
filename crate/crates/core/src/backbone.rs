//! Node-feature extractors: the input embedding and GCN, GAT and GCNII
//! layers, all expressed as tape operations.

use std::sync::Arc;

use rand::Rng;

use crate::config::{BackboneConfig, BackboneKind};
use crate::error::{Error, Result};
use crate::model::{Affine, Attention, GraphInputs, ModelParams};
use crate::tape::{check_dropout, dropout_sparse, Tape, Var};
use crate::tensor::SparseMatrix;

/// LeakyReLU slope used on attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        self == Mode::Train
    }
}

/// `f0 = ReLU(dropout(f_in)·K0 + b0)`. The input features are a constant
/// sparse matrix, so dropout acts on its stored entries.
pub fn embed<R: Rng + ?Sized>(
    tape: &mut Tape,
    features: &Arc<SparseMatrix>,
    params: &Affine<Var>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let x = if mode.is_training() && p > 0.0 {
        Arc::new(dropout_sparse(features, p, true, rng)?)
    } else {
        check_dropout(p)?;
        Arc::clone(features)
    };
    let h = tape.spmm(x, params.weight)?;
    let h = tape.add_row(h, params.bias)?;
    Ok(tape.relu(h))
}

/// `ReLU(P̃·dropout(f)·K)`.
pub fn gcn_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    f: Var,
    propagation: &Arc<SparseMatrix>,
    kernel: Var,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let fd = tape.dropout(f, p, mode.is_training(), rng)?;
    let h = tape.spmm(Arc::clone(propagation), fd)?;
    let h = tape.matmul(h, kernel)?;
    Ok(tape.relu(h))
}

/// Attention coefficients on the stored entries of `pattern` (the pattern of
/// `A + I`), as a 1×nnz node: for row `i`, the softmax over `j ∈ N_i ∪ {i}`
/// of `LeakyReLU(a_srcᵀ K̃ᵀ f_i + a_dstᵀ K̃ᵀ f_j)`.
pub fn gat_coefficients(
    tape: &mut Tape,
    f: Var,
    pattern: &Arc<SparseMatrix>,
    attention: &Attention<Var>,
) -> Result<Var> {
    let c = tape.shape(attention.kernel).1;
    if tape.shape(attention.score) != (2 * c, 1) {
        return Err(Error::dim("gat_coefficients", (2 * c, 1), tape.shape(attention.score)));
    }
    let h = tape.matmul(f, attention.kernel)?;
    let a_src = tape.slice_rows(attention.score, 0, c)?;
    let a_dst = tape.slice_rows(attention.score, c, c)?;
    let u = tape.matmul(h, a_src)?;
    let v = tape.matmul(h, a_dst)?;
    let e = tape.edge_scores(Arc::clone(pattern), u, v)?;
    let e = tape.leaky_relu(e, ATTENTION_SLOPE);
    tape.edge_softmax(Arc::clone(pattern), e)
}

/// Materializes coefficients from [`gat_coefficients`] as a sparse matrix.
pub fn attention_matrix(tape: &Tape, pattern: &SparseMatrix, coefficients: Var) -> Result<SparseMatrix> {
    pattern.with_values(tape.value(coefficients).data().to_vec())
}

/// `ReLU(S·dropout(f)·K)` where `S` carries `coefficients` on `pattern`.
pub fn gat_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    f: Var,
    pattern: &Arc<SparseMatrix>,
    coefficients: Var,
    kernel: Var,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let fd = tape.dropout(f, p, mode.is_training(), rng)?;
    let h = tape.spmm_values(Arc::clone(pattern), coefficients, fd)?;
    let h = tape.matmul(h, kernel)?;
    Ok(tape.relu(h))
}

/// Initial-residual propagation `(1−α)·P̃f + α·f0`.
pub fn gcnii_propagate(
    tape: &mut Tape,
    f: Var,
    f0: Var,
    propagation: &Arc<SparseMatrix>,
    alpha: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("GCNII alpha {alpha} outside [0, 1]")));
    }
    let pf = tape.spmm(Arc::clone(propagation), f)?;
    let pf = tape.scale(pf, 1.0 - alpha);
    let r = tape.scale(f0, alpha);
    tape.add(pf, r)
}

/// `ReLU(β·S·K + (1−β)·S)` with `S` from [`gcnii_propagate`] applied to
/// `dropout(f)`.
#[allow(clippy::too_many_arguments)]
pub fn gcnii_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    f: Var,
    f0: Var,
    propagation: &Arc<SparseMatrix>,
    kernel: Var,
    alpha: f64,
    beta: f64,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("GCNII beta {beta} outside [0, 1]")));
    }
    let fd = tape.dropout(f, p, mode.is_training(), rng)?;
    let s = gcnii_propagate(tape, fd, f0, propagation, alpha)?;
    let sk = tape.matmul(s, kernel)?;
    let sk = tape.scale(sk, beta);
    let skip = tape.scale(s, 1.0 - beta);
    let out = tape.add(sk, skip)?;
    Ok(tape.relu(out))
}

/// Embedding followed by the configured stack of layers; returns
/// `(f0, f^(L))`.
pub fn run_backbone<R: Rng + ?Sized>(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    params: &ModelParams<Var>,
    inputs: &GraphInputs,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var, Var)> {
    if params.layers.len() != cfg.layers {
        return Err(Error::Contract(format!(
            "config asks for {} backbone layers, parameters hold {}",
            cfg.layers,
            params.layers.len()
        )));
    }
    let f0 = embed(tape, &inputs.features, &params.embed, p, mode, rng)?;
    let mut f = f0;
    for (l, layer) in params.layers.iter().enumerate() {
        f = match cfg.kind {
            BackboneKind::Gcn => gcn_layer(tape, f, &inputs.propagation, layer.kernel, p, mode, rng)?,
            BackboneKind::Gat => {
                let attention = layer
                    .attention
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("GAT layer {l} has no attention parameters")))?;
                let coefficients = gat_coefficients(tape, f, &inputs.attention_pattern, attention)?;
                gat_layer(tape, f, &inputs.attention_pattern, coefficients, layer.kernel, p, mode, rng)?
            }
            BackboneKind::Gcnii => gcnii_layer(
                tape,
                f,
                f0,
                &inputs.propagation,
                layer.kernel,
                cfg.gcnii_alpha,
                cfg.gcnii_beta(l + 1),
                p,
                mode,
                rng,
            )?,
        };
    }
    Ok((f0, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(-2.0..2.0))
    }

    #[test]
    fn embed_identity_square_case() {
        let mut t = Tape::new();
        let x = DenseMatrix::from_rows(&[[1.0, 0.0, 2.5], [0.0, 3.0, 0.5]]);
        let w = t.param(DenseMatrix::identity(3));
        let b = t.param(DenseMatrix::zeros(1, 3));
        let feats = Arc::new(SparseMatrix::from_dense(&x));
        let f0 = embed(&mut t, &feats, &Affine { weight: w, bias: b }, 0.0, Mode::Train, &mut rng()).unwrap();
        assert_eq!(t.value(f0), &x);
    }

    #[test]
    fn embed_zero_input() {
        let mut t = Tape::new();
        let w = t.param(DenseMatrix::filled(3, 2, 0.7));
        let b = t.param(DenseMatrix::zeros(1, 2));
        let feats = Arc::new(SparseMatrix::zeros(4, 3));
        let f0 = embed(&mut t, &feats, &Affine { weight: w, bias: b }, 0.5, Mode::Train, &mut rng()).unwrap();
        assert_eq!(t.value(f0), &DenseMatrix::zeros(4, 2));
    }

    #[test]
    fn gcn_single_node() {
        let mut t = Tape::new();
        let g = Graph::build_adjacency([], 1).unwrap();
        let f = t.constant(DenseMatrix::from_rows(&[[-3.0, 4.0]]));
        let k = t.param(DenseMatrix::identity(2));
        let out = gcn_layer(&mut t, f, &Arc::new(g.normalized_adjacency()), k, 0.0, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 4.0]);
    }

    #[test]
    fn gcn_identity_kernel_on_nonnegative_features() {
        let mut r = rng();
        let g = Graph::build_adjacency([(0, 1), (1, 2), (2, 3), (0, 3), (1, 4)], 5).unwrap();
        let prop = Arc::new(g.normalized_adjacency());
        let fm = random(5, 3, &mut r).map(f64::abs);
        let mut t = Tape::new();
        let f = t.constant(fm.clone());
        let k = t.param(DenseMatrix::identity(3));
        let out = gcn_layer(&mut t, f, &prop, k, 0.0, Mode::Eval, &mut r).unwrap();
        assert_eq!(t.value(out), &prop.spmm(&fm).unwrap());
    }

    #[test]
    fn gat_zero_score_vector_is_uniform() {
        let g = Graph::build_adjacency([(0, 1), (0, 2), (0, 3)], 5).unwrap();
        let pattern = Arc::new(g.self_loop_pattern());
        let mut r = rng();
        let mut t = Tape::new();
        let f = t.constant(random(5, 3, &mut r));
        let att = Attention {
            kernel: t.param(random(3, 3, &mut r)),
            score: t.param(DenseMatrix::zeros(6, 1)),
        };
        let coeffs = gat_coefficients(&mut t, f, &pattern, &att).unwrap();
        let s = attention_matrix(&t, &pattern, coeffs).unwrap();
        assert_eq!(s.get(0, 2), 0.25);
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(s.get(4, 4), 1.0);
    }

    #[test]
    fn gat_isolated_nodes_reduce_to_dense_layer() {
        let g = Graph::build_adjacency([], 3).unwrap();
        let pattern = Arc::new(g.self_loop_pattern());
        let mut r = rng();
        let (fm, km) = (random(3, 2, &mut r), random(2, 2, &mut r));
        let mut t = Tape::new();
        let f = t.constant(fm.clone());
        let att = Attention {
            kernel: t.param(random(2, 2, &mut r)),
            score: t.param(random(4, 1, &mut r)),
        };
        let k = t.param(km.clone());
        let coeffs = gat_coefficients(&mut t, f, &pattern, &att).unwrap();
        let out = gat_layer(&mut t, f, &pattern, coeffs, k, 0.0, Mode::Eval, &mut r).unwrap();
        assert_eq!(t.value(out), &fm.matmul(&km).unwrap().map(|x| x.max(0.0)));
    }

    #[test]
    fn gat_constant_features_on_clique_are_preserved() {
        let g = Graph::build_adjacency([(0, 1), (0, 2), (1, 2)], 3).unwrap();
        let pattern = Arc::new(g.self_loop_pattern());
        let mut r = rng();
        let fm = DenseMatrix::from_rows(&[[0.5, 2.0]; 3]);
        let mut t = Tape::new();
        let f = t.constant(fm.clone());
        let att = Attention {
            kernel: t.param(random(2, 2, &mut r)),
            score: t.param(random(4, 1, &mut r)),
        };
        let k = t.param(DenseMatrix::identity(2));
        let coeffs = gat_coefficients(&mut t, f, &pattern, &att).unwrap();
        let out = gat_layer(&mut t, f, &pattern, coeffs, k, 0.0, Mode::Eval, &mut r).unwrap();
        for (x, y) in t.value(out).data().iter().zip(fm.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn gcnii_propagate_extremes() {
        let g = Graph::build_adjacency([(0, 1), (1, 2)], 3).unwrap();
        let prop = Arc::new(g.normalized_adjacency());
        let mut r = rng();
        let (fm, f0m) = (random(3, 2, &mut r), random(3, 2, &mut r));
        let mut t = Tape::new();
        let f = t.constant(fm.clone());
        let f0 = t.constant(f0m.clone());
        let a0 = gcnii_propagate(&mut t, f, f0, &prop, 0.0).unwrap();
        assert_eq!(t.value(a0), &prop.spmm(&fm).unwrap());
        let a1 = gcnii_propagate(&mut t, f, f0, &prop, 1.0).unwrap();
        assert_eq!(t.value(a1), &f0m);
        assert!(matches!(gcnii_propagate(&mut t, f, f0, &prop, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn gcnii_beta_extremes() {
        let g = Graph::build_adjacency([(0, 1), (1, 2)], 3).unwrap();
        let prop = Arc::new(g.normalized_adjacency());
        let mut r = rng();
        let (fm, f0m, km) = (random(3, 2, &mut r), random(3, 2, &mut r), random(2, 2, &mut r));
        let mut t = Tape::new();
        let f = t.constant(fm);
        let f0 = t.constant(f0m);
        let k = t.param(km.clone());
        let s = gcnii_propagate(&mut t, f, f0, &prop, 0.1).unwrap();
        let sv = t.value(s).clone();
        let b0 = gcnii_layer(&mut t, f, f0, &prop, k, 0.1, 0.0, 0.0, Mode::Eval, &mut r).unwrap();
        assert_eq!(t.value(b0), &sv.map(|x| x.max(0.0)));
        let b1 = gcnii_layer(&mut t, f, f0, &prop, k, 0.1, 1.0, 0.0, Mode::Eval, &mut r).unwrap();
        assert_eq!(t.value(b1), &sv.matmul(&km).unwrap().map(|x| x.max(0.0)));
    }

    #[test]
    fn zero_layers_returns_embedding() {
        let mut cfg = crate::config::TrainConfig::default();
        cfg.backbone.layers = 0;
        cfg.backbone.hidden = 3;
        let g = Graph::build_adjacency([(0, 1)], 2).unwrap();
        let mut r = rng();
        let inputs = GraphInputs::new(&g, &random(2, 4, &mut r)).unwrap();
        let params = ModelParams::init(&cfg, 4, 2, &mut r);
        let mut t = Tape::new();
        let vars = params.bind(&mut t);
        let (f0, fl) = run_backbone(&mut t, &cfg.backbone, &vars, &inputs, 0.5, Mode::Eval, &mut r).unwrap();
        assert_eq!(f0, fl);
    }
}
