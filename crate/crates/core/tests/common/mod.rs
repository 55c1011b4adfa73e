//! Shared fixtures, brute-force oracles and invariant checks for the
//! integration and acceptance suites.

#![allow(dead_code)]

use std::sync::Arc;

use glgnn::backbone::{gat_coefficients, Mode};
use glgnn::config::{BackboneKind, TrainConfig};
use glgnn::graph::Graph;
use glgnn::head::{correspondence, label_features};
use glgnn::model::{forward, Affine, Attention, GraphInputs, LabelMlp, ModelParams};
use glgnn::tape::Tape;
use glgnn::{DenseMatrix, SparseMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Undirected edge list on `n` nodes, each pair present with probability `p`.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    Graph::build_adjacency(random_edges(n, p, rng), n).unwrap()
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        if u != v {
            a[u][v] = 1.0;
            a[v][u] = 1.0;
        }
    }
    a
}

// ------------------------------------------------------------------ oracles

/// Dense `D̃^{-1/2}(A+I)D̃^{-1/2}` built entry by entry.
pub fn oracle_normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> DenseMatrix {
    let mut a = dense_adjacency(n, edges);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    DenseMatrix::from_fn(n, n, |i, j| a[i][j] / deg[i].sqrt() / deg[j].sqrt())
}

pub fn oracle_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|t| a.get(i, t) * b.get(t, j)).sum())
}

/// Per-row softmax over `N_i ∪ {i}` of `LeakyReLU(a_src·h_i + a_dst·h_j)`,
/// with `h = f·K̃`, returned as an n×n dense matrix.
pub fn oracle_gat_coefficients(
    n: usize,
    edges: &[(usize, usize)],
    f: &DenseMatrix,
    kernel: &DenseMatrix,
    score: &DenseMatrix,
) -> DenseMatrix {
    let c = kernel.cols();
    let h = oracle_matmul(f, kernel);
    let a = dense_adjacency(n, edges);
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| j == i || a[i][j] != 0.0).collect();
        let logits: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let mut e = 0.0;
                for t in 0..c {
                    e += score.get(t, 0) * h.get(i, t) + score.get(c + t, 0) * h.get(j, t);
                }
                if e > 0.0 {
                    e
                } else {
                    0.2 * e
                }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|e| (e - m).exp()).sum();
        for (&j, e) in nbrs.iter().zip(&logits) {
            out.set(i, j, (e - m).exp() / z);
        }
    }
    out
}

/// `g_q = ReLU(s·W_e + b_e)·W_s + b_s` with explicit loops.
pub fn oracle_label_features(s: &DenseMatrix, classes: &[LabelMlp<DenseMatrix>]) -> DenseMatrix {
    let c = s.cols();
    let out_c = classes[0].shrink.weight.cols();
    let mut g = DenseMatrix::zeros(classes.len(), out_c);
    for (q, mlp) in classes.iter().enumerate() {
        let hidden = mlp.expand.weight.cols();
        let mut h = vec![0.0; hidden];
        for (u, hu) in h.iter_mut().enumerate() {
            let mut acc = mlp.expand.bias.get(0, u);
            for t in 0..c {
                acc += s.get(0, t) * mlp.expand.weight.get(t, u);
            }
            *hu = acc.max(0.0);
        }
        for v in 0..out_c {
            let mut acc = mlp.shrink.bias.get(0, v);
            for (u, hu) in h.iter().enumerate() {
                acc += hu * mlp.shrink.weight.get(u, v);
            }
            g.set(q, v, acc);
        }
    }
    g
}

pub fn oracle_correspondence(f: &DenseMatrix, g: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(f.rows(), g.rows(), |i, q| (0..f.cols()).map(|t| f.get(i, t) * g.get(q, t)).sum())
}

pub fn oracle_cross_entropy(probs: &DenseMatrix, targets: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(i, y) in targets {
        total -= probs.get(i, y).max(1e-12).ln();
    }
    total / targets.len() as f64
}

pub fn oracle_global_local(g: &DenseMatrix, f: &DenseMatrix, targets: &[(usize, usize)], r: f64) -> f64 {
    let mut total = 0.0;
    for q in 0..g.rows() {
        for &(i, y) in targets {
            let mut d = 0.0;
            for t in 0..g.cols() {
                d += (g.get(q, t) - f.get(i, t)).powi(2);
            }
            if y == q {
                total += d;
            } else {
                total -= d.min(r);
            }
        }
    }
    total
}

/// Worst absolute deviation from the oracle of each engine routine over
/// `instances` random problems with at most 20 nodes.
pub fn oracle_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    let mut worst = vec![
        ("normalized_adjacency", 0.0f64),
        ("spmm", 0.0),
        ("gat_coefficients", 0.0),
        ("label_features", 0.0),
        ("correspondence", 0.0),
        ("cross_entropy", 0.0),
        ("global_local_loss", 0.0),
    ];
    for _ in 0..instances {
        let n = rng.random_range(1..=20);
        let c = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let edges = random_edges(n, rng.random_range(0.0..0.6), &mut rng);
        let graph = Graph::build_adjacency(edges.clone(), n).unwrap();

        let p = graph.normalized_adjacency();
        let e0 = max_abs_diff(&p.to_dense(), &oracle_normalized_adjacency(n, &edges));

        let dense_s = DenseMatrix::from_fn(n, n, |_, _| {
            if rng.random::<f64>() < 0.3 {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        });
        let d = uniform(n, c, -2.0, 2.0, &mut rng);
        let e1 = max_abs_diff(&SparseMatrix::from_dense(&dense_s).spmm(&d).unwrap(), &oracle_matmul(&dense_s, &d));

        let f = uniform(n, c, -2.0, 2.0, &mut rng);
        let kernel = uniform(c, c, -1.0, 1.0, &mut rng);
        let score = uniform(2 * c, 1, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let pattern = Arc::new(graph.self_loop_pattern());
        let att = Attention {
            kernel: tape.constant(kernel.clone()),
            score: tape.constant(score.clone()),
        };
        let fv = tape.constant(f.clone());
        let coeffs = gat_coefficients(&mut tape, fv, &pattern, &att).unwrap();
        let engine = pattern.with_values(tape.value(coeffs).data().to_vec()).unwrap().to_dense();
        let e2 = max_abs_diff(&engine, &oracle_gat_coefficients(n, &edges, &f, &kernel, &score));

        let e = rng.random_range(1..=3);
        let s = uniform(1, c, 0.0, 2.0, &mut rng);
        let mlps: Vec<LabelMlp<DenseMatrix>> = (0..k)
            .map(|_| LabelMlp {
                expand: Affine {
                    weight: uniform(c, e * c, -1.0, 1.0, &mut rng),
                    bias: uniform(1, e * c, -0.5, 0.5, &mut rng),
                },
                shrink: Affine {
                    weight: uniform(e * c, c, -1.0, 1.0, &mut rng),
                    bias: uniform(1, c, -0.5, 0.5, &mut rng),
                },
            })
            .collect();
        let sv = tape.constant(s.clone());
        let mlp_vars: Vec<LabelMlp<_>> = mlps
            .iter()
            .map(|m| LabelMlp {
                expand: Affine {
                    weight: tape.constant(m.expand.weight.clone()),
                    bias: tape.constant(m.expand.bias.clone()),
                },
                shrink: Affine {
                    weight: tape.constant(m.shrink.weight.clone()),
                    bias: tape.constant(m.shrink.bias.clone()),
                },
            })
            .collect();
        let g = label_features(&mut tape, sv, &mlp_vars).unwrap();
        let g_val = tape.value(g).clone();
        let e3 = max_abs_diff(&g_val, &oracle_label_features(&s, &mlps));

        let z = correspondence(&mut tape, fv, g).unwrap();
        let e4 = max_abs_diff(tape.value(z), &oracle_correspondence(&f, &g_val));

        let probs = tape.row_softmax(z).unwrap();
        let probs_val = tape.value(probs).clone();
        let count = rng.random_range(1..=n);
        let targets: Vec<(usize, usize)> = (0..count).map(|_| (rng.random_range(0..n), rng.random_range(0..k))).collect();
        let ce = tape.cross_entropy(probs, targets.clone()).unwrap();
        let e5 = (tape.scalar(ce) - oracle_cross_entropy(&probs_val, &targets)).abs();

        let r = rng.random_range(0.5..10.0);
        let gl = tape.global_local(g, fv, targets.clone(), r).unwrap();
        let e6 = (tape.scalar(gl) - oracle_global_local(&g_val, &f, &targets, r)).abs();

        for (slot, err) in worst.iter_mut().zip([e0, e1, e2, e3, e4, e5, e6]) {
            slot.1 = slot.1.max(err);
        }
    }
    worst
}

// --------------------------------------------------------------- invariants

/// A small global-local model on a random graph with tie-free inputs.
pub struct Scene {
    pub graph: Graph,
    pub edges: Vec<(usize, usize)>,
    pub features: DenseMatrix,
    pub cfg: TrainConfig,
    pub params: ModelParams,
}

pub fn scene(kind: BackboneKind, n: usize, seed: u64) -> Scene {
    let mut rng = rng(seed);
    let edges = random_edges(n, 0.3, &mut rng);
    let graph = Graph::build_adjacency(edges.clone(), n).unwrap();
    let input_dim = 5;
    let features = uniform(n, input_dim, 0.0, 1.0, &mut rng);
    let mut cfg = TrainConfig::default().with_backbone(kind);
    cfg.backbone.hidden = 6;
    cfg.backbone.layers = 2;
    cfg.head.expansion = 2;
    cfg.dropout = 0.0;
    let params = ModelParams::init(&cfg, input_dim, 3, &mut rng).map(&mut |_, _, m| {
        DenseMatrix::from_fn(m.rows(), m.cols(), |_, _| rng.random_range(-1.0..1.0))
    });
    Scene {
        graph,
        edges,
        features,
        cfg,
        params,
    }
}

/// `(f^(L), g)` of an eval-mode forward pass.
pub fn eval_features(scene: &Scene, graph: &Graph, features: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let inputs = GraphInputs::new(graph, features).unwrap();
    let mut tape = Tape::new();
    let vars = scene.params.bind(&mut tape);
    let out = forward(&mut tape, &scene.cfg, &vars, &inputs, Mode::Eval, &mut rng(0)).unwrap();
    (
        tape.value(out.features).clone(),
        tape.value(out.label_features.unwrap()).clone(),
    )
}

/// Relabels the nodes of `scene` by `perm` (new index of old node `i` is
/// `perm[i]`) and returns the worst deviations of `f^(L)` from the permuted
/// original and of `g` from the original.
pub fn permutation_check(scene: &Scene, perm: &[usize]) -> (f64, f64) {
    let n = perm.len();
    let (f, g) = eval_features(scene, &scene.graph, &scene.features);
    let edges: Vec<(usize, usize)> = scene.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let graph = Graph::build_adjacency(edges, n).unwrap();
    let mut x = DenseMatrix::zeros(n, scene.features.cols());
    for i in 0..n {
        x.row_mut(perm[i]).copy_from_slice(scene.features.row(i));
    }
    let (fp, gp) = eval_features(scene, &graph, &x);
    let mut expect = DenseMatrix::zeros(n, f.cols());
    for i in 0..n {
        expect.row_mut(perm[i]).copy_from_slice(f.row(i));
    }
    (max_abs_diff(&fp, &expect), max_abs_diff(&gp, &g))
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
