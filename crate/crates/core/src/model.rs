//! Trainable parameter sets and the full forward pass.
//!
//! Parameter containers are generic over their leaf type: `ModelParams`
//! holds matrices, `ModelParams<Var>` the same layout bound to a tape. Every
//! traversal visits leaves in one canonical order, which is also the
//! checkpoint serialization order.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::backbone::{self, Mode};
use crate::config::{BackboneKind, HeadKind, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::head;
use crate::tape::{Tape, Var};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Optimizer parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    /// Embedding and head layers (`optim.lr` / `optim.wd`).
    EmbeddingHead,
    /// Backbone GNN layers (`optim.lr_gnn` / `optim.wd_gnn`).
    Backbone,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

/// GAT attention parameters: feature transform `K̃` (c×c) and score vector
/// `a` (2c×1, source half first).
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub kernel: T,
    pub score: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kernel: T,
    pub attention: Option<Attention<T>>,
}

/// Per-class expand (c → e·c) and shrink (e·c → c) maps.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMlp<T> {
    pub expand: Affine<T>,
    pub shrink: Affine<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// Applied to `[f0 ⊕ fL]` (2c → c) before the global max-pool.
    pub readout: Affine<T>,
    pub classes: Vec<LabelMlp<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    GlobalLocal(HeadParams<T>),
    Linear(Affine<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = DenseMatrix> {
    pub embed: Affine<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head: Head<T>,
}

/// Glorot/Xavier uniform initialization for a `fan_in × fan_out` weight.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| dist.sample(rng))
}

fn glorot_affine<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Affine<DenseMatrix> {
    Affine {
        weight: glorot(fan_in, fan_out, rng),
        bias: DenseMatrix::zeros(1, fan_out),
    }
}

impl ModelParams<DenseMatrix> {
    /// Fresh parameters: Glorot for the embedding, attention and head layers,
    /// identity for every backbone kernel, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &TrainConfig, input_dim: usize, classes: usize, rng: &mut R) -> Self {
        let c = cfg.backbone.hidden;
        let embed = glorot_affine(input_dim, c, rng);
        let layers = (0..cfg.backbone.layers)
            .map(|_| LayerParams {
                kernel: DenseMatrix::identity(c),
                attention: (cfg.backbone.kind == BackboneKind::Gat).then(|| Attention {
                    kernel: glorot(c, c, rng),
                    score: glorot(2 * c, 1, rng),
                }),
            })
            .collect();
        let head = match cfg.head.kind {
            HeadKind::GlobalLocal => {
                let readout = glorot_affine(2 * c, c, rng);
                let ec = cfg.head.expansion * c;
                let classes = (0..classes)
                    .map(|_| LabelMlp {
                        expand: glorot_affine(c, ec, rng),
                        shrink: glorot_affine(ec, c, rng),
                    })
                    .collect();
                Head::GlobalLocal(HeadParams { readout, classes })
            }
            HeadKind::Linear => Head::Linear(glorot_affine(c, classes, rng)),
        };
        ModelParams { embed, layers, head }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, m)| m.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |_, _, m| DenseMatrix::zeros(m.rows(), m.cols()))
    }

    /// Pushes every matrix onto `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, _, m| tape.param(m.clone()))
    }

    /// Rebuilds parameters from `(name, matrix)` pairs in canonical order,
    /// checking names and shapes against `template`.
    pub fn from_named(template: &Self, named: Vec<(String, DenseMatrix)>) -> Result<Self> {
        let expected = template.tensors();
        if expected.len() != named.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, model needs {}",
                named.len(),
                expected.len()
            )));
        }
        for ((name, _, m), (got_name, got)) in expected.iter().zip(&named) {
            if name != got_name || m.shape() != got.shape() {
                return Err(Error::Integrity(format!(
                    "checkpoint tensor {got_name} {:?} does not match {name} {:?}",
                    got.shape(),
                    m.shape()
                )));
            }
        }
        let mut it = named.into_iter();
        Ok(template.map(&mut |_, _, _| it.next().expect("length checked").1))
    }
}

impl<T> ModelParams<T> {
    /// Structure-preserving map over all leaves in canonical order.
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, Group, &T) -> U) -> ModelParams<U> {
        use Group::*;
        let affine = |name: &str, g: Group, a: &Affine<T>, f: &mut dyn FnMut(&str, Group, &T) -> U| Affine {
            weight: f(&format!("{name}.weight"), g, &a.weight),
            bias: f(&format!("{name}.bias"), g, &a.bias),
        };
        let embed = affine("embed", EmbeddingHead, &self.embed, f);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, p)| LayerParams {
                kernel: f(&format!("backbone.{l}.kernel"), Backbone, &p.kernel),
                attention: p.attention.as_ref().map(|a| Attention {
                    kernel: f(&format!("backbone.{l}.attn_kernel"), Backbone, &a.kernel),
                    score: f(&format!("backbone.{l}.attn_score"), Backbone, &a.score),
                }),
            })
            .collect();
        let head = match &self.head {
            Head::GlobalLocal(h) => Head::GlobalLocal(HeadParams {
                readout: affine("head.readout", EmbeddingHead, &h.readout, f),
                classes: h
                    .classes
                    .iter()
                    .enumerate()
                    .map(|(q, m)| LabelMlp {
                        expand: affine(&format!("head.class.{q}.expand"), EmbeddingHead, &m.expand, f),
                        shrink: affine(&format!("head.class.{q}.shrink"), EmbeddingHead, &m.shrink, f),
                    })
                    .collect(),
            }),
            Head::Linear(a) => Head::Linear(affine("head.classifier", EmbeddingHead, a, f)),
        };
        ModelParams { embed, layers, head }
    }

    /// Leaves with their names and groups, in canonical order.
    pub fn tensors(&self) -> Vec<(String, Group, &T)> {
        let mut out = Vec::new();
        push_affine(&mut out, "embed", Group::EmbeddingHead, &self.embed);
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("backbone.{l}.kernel"), Group::Backbone, &p.kernel));
            if let Some(a) = &p.attention {
                out.push((format!("backbone.{l}.attn_kernel"), Group::Backbone, &a.kernel));
                out.push((format!("backbone.{l}.attn_score"), Group::Backbone, &a.score));
            }
        }
        match &self.head {
            Head::GlobalLocal(h) => {
                push_affine(&mut out, "head.readout", Group::EmbeddingHead, &h.readout);
                for (q, m) in h.classes.iter().enumerate() {
                    push_affine(&mut out, &format!("head.class.{q}.expand"), Group::EmbeddingHead, &m.expand);
                    push_affine(&mut out, &format!("head.class.{q}.shrink"), Group::EmbeddingHead, &m.shrink);
                }
            }
            Head::Linear(a) => push_affine(&mut out, "head.classifier", Group::EmbeddingHead, a),
        }
        out
    }

    /// Mutable leaves in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = vec![&mut self.embed.weight, &mut self.embed.bias];
        for p in &mut self.layers {
            out.push(&mut p.kernel);
            if let Some(a) = &mut p.attention {
                out.push(&mut a.kernel);
                out.push(&mut a.score);
            }
        }
        match &mut self.head {
            Head::GlobalLocal(h) => {
                out.push(&mut h.readout.weight);
                out.push(&mut h.readout.bias);
                for m in &mut h.classes {
                    out.extend([
                        &mut m.expand.weight,
                        &mut m.expand.bias,
                        &mut m.shrink.weight,
                        &mut m.shrink.bias,
                    ]);
                }
            }
            Head::Linear(a) => out.extend([&mut a.weight, &mut a.bias]),
        }
        out
    }
}

fn push_affine<'a, T>(out: &mut Vec<(String, Group, &'a T)>, name: &str, g: Group, a: &'a Affine<T>) {
    out.push((format!("{name}.weight"), g, &a.weight));
    out.push((format!("{name}.bias"), g, &a.bias));
}

impl ModelParams<Var> {
    /// Gradients of every bound leaf (zeros where disconnected).
    pub fn grads(&self, tape: &Tape) -> ModelParams<DenseMatrix> {
        self.map(&mut |_, _, &v| tape.grad_or_zeros(v))
    }
}

/// Graph-derived constants shared by every forward pass on one dataset.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    /// Input node features (n×c_in), stored sparse.
    pub features: Arc<SparseMatrix>,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    pub propagation: Arc<SparseMatrix>,
    /// Sparsity pattern of `Ã`: attention neighborhoods with self.
    pub attention_pattern: Arc<SparseMatrix>,
}

impl GraphInputs {
    pub fn new(graph: &Graph, features: &DenseMatrix) -> Result<Self> {
        if features.rows() != graph.num_nodes() {
            return Err(Error::dim(
                "graph inputs",
                (graph.num_nodes(), graph.num_nodes()),
                features.shape(),
            ));
        }
        Ok(Self {
            features: Arc::new(SparseMatrix::from_dense(features)),
            propagation: Arc::new(graph.normalized_adjacency()),
            attention_pattern: Arc::new(graph.self_loop_pattern()),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub f0: Var,
    pub features: Var,
    /// Label features `g` (k×c); absent for the linear head.
    pub label_features: Option<Var>,
    /// Pre-softmax class scores (n×k).
    pub scores: Var,
    pub probs: Var,
}

pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    cfg: &TrainConfig,
    params: &ModelParams<Var>,
    inputs: &GraphInputs,
    mode: Mode,
    rng: &mut R,
) -> Result<Forward> {
    let (f0, fl) = backbone::run_backbone(tape, &cfg.backbone, params, inputs, cfg.dropout, mode, rng)?;
    let (label_features, scores) = match &params.head {
        Head::GlobalLocal(h) => {
            let s = head::global_readout(tape, f0, fl, &h.readout)?;
            let g = head::label_features(tape, s, &h.classes)?;
            (Some(g), head::correspondence(tape, fl, g)?)
        }
        Head::Linear(a) => {
            let z = tape.matmul(fl, a.weight)?;
            (None, tape.add_row(z, a.bias)?)
        }
    };
    let probs = head::predict(tape, scores)?;
    Ok(Forward {
        f0,
        features: fl,
        label_features,
        scores,
        probs,
    })
}
