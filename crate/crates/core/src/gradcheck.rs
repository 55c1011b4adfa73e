//! Finite-difference verification of tape gradients on small random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::Mode;
use crate::config::{BackboneKind, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::total_loss;
use crate::model::{forward, GraphInputs, ModelParams};
use crate::tape::Tape;
use crate::tensor::DenseMatrix;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Sizes of the random problem.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSetup {
    pub nodes: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub expansion: usize,
    pub gamma: f64,
    pub cutoff: f64,
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            nodes: 8,
            input_dim: 6,
            classes: 3,
            hidden: 5,
            expansion: 2,
            gamma: 1.0,
            cutoff: 10.0,
            edge_prob: 0.35,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub backbone: BackboneKind,
    pub block: String,
    pub rel_err: f64,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = a.zip_map(b, "relative_error", |x, y| x - y).expect("same shape").norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

struct Fixture {
    cfg: TrainConfig,
    inputs: GraphInputs,
    targets: Vec<(usize, usize)>,
    params: ModelParams,
}

fn fixture(kind: BackboneKind, setup: &GradcheckSetup) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut cfg = TrainConfig::default().with_backbone(kind);
    cfg.backbone.hidden = setup.hidden;
    cfg.head.expansion = setup.expansion;
    cfg.loss.gamma = setup.gamma;
    cfg.loss.cutoff = setup.cutoff;
    cfg.dropout = 0.0;
    let n = setup.nodes;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < setup.edge_prob {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::build_adjacency(edges, n)?;
    let features = DenseMatrix::from_fn(n, setup.input_dim, |_, _| {
        if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            rng.random_range(-2.0..2.0)
        }
    });
    let inputs = GraphInputs::new(&graph, &features)?;
    let targets = (0..n).map(|i| (i, rng.random_range(0..setup.classes))).collect();
    let params = ModelParams::init(&cfg, setup.input_dim, setup.classes, &mut rng)
        .map(&mut |_, _, m| DenseMatrix::from_fn(m.rows(), m.cols(), |_, _| rng.random_range(-1.0..1.0)));
    Ok(Fixture {
        cfg,
        inputs,
        targets,
        params,
    })
}

fn loss_and_grads(fx: &Fixture, params: &ModelParams, with_grads: bool) -> Result<(f64, Option<ModelParams>)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut tape, &fx.cfg, &vars, &fx.inputs, Mode::Eval, &mut rng)?;
    let terms = total_loss(&mut tape, out.probs, out.label_features, out.features, &fx.targets, &fx.cfg.loss)?;
    let value = tape.scalar(terms.total);
    if !with_grads {
        return Ok((value, None));
    }
    tape.backward(terms.total)?;
    Ok((value, Some(vars.grads(&tape))))
}

/// Compares tape gradients of the total loss with central differences for
/// every parameter block of one backbone. `flip_block` negates the tape
/// gradient of the named block first (a self-test of the checker).
pub fn check_backbone(kind: BackboneKind, setup: &GradcheckSetup, flip_block: Option<&str>) -> Result<Vec<BlockReport>> {
    let fx = fixture(kind, setup)?;
    let (_, grads) = loss_and_grads(&fx, &fx.params, true)?;
    let grads = grads.expect("requested");
    let mut probe = fx.params.clone();
    let mut reports = Vec::new();
    for (slot, (name, _, tape_grad)) in grads.tensors().into_iter().enumerate() {
        let mut fd = DenseMatrix::zeros(tape_grad.rows(), tape_grad.cols());
        for e in 0..tape_grad.len() {
            let orig = fx.params.tensors()[slot].2.data()[e];
            let set = |probe: &mut ModelParams, v: f64| probe.tensors_mut()[slot].data_mut()[e] = v;
            set(&mut probe, orig + FD_STEP);
            let (plus, _) = loss_and_grads(&fx, &probe, false)?;
            set(&mut probe, orig - FD_STEP);
            let (minus, _) = loss_and_grads(&fx, &probe, false)?;
            set(&mut probe, orig);
            fd.data_mut()[e] = (plus - minus) / (2.0 * FD_STEP);
        }
        let analytic = if flip_block == Some(name.as_str()) {
            tape_grad.scale(-1.0)
        } else {
            tape_grad.clone()
        };
        reports.push(BlockReport {
            backbone: kind,
            block: name,
            rel_err: relative_error(&analytic, &fd),
        });
    }
    Ok(reports)
}

/// Runs [`check_backbone`] for every backbone.
pub fn check_all(setup: &GradcheckSetup, flip_block: Option<&str>) -> Result<Vec<BlockReport>> {
    let mut out = Vec::new();
    for kind in BackboneKind::ALL {
        out.extend(check_backbone(kind, setup, flip_block)?);
    }
    Ok(out)
}

/// Fails with the worst block when any error reaches `tol`.
pub fn verify(reports: &[BlockReport], tol: f64) -> Result<()> {
    let worst = reports
        .iter()
        .filter(|r| !(r.rel_err < tol))
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err));
    match worst {
        Some(r) => Err(Error::GradientMismatch {
            block: format!("{}/{}", r.backbone, r.block),
            rel_err: r.rel_err,
        }),
        None => Ok(()),
    }
}
