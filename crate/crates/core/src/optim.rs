//! Adam with bias correction and coupled L2 weight decay, applied per
//! parameter group.

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::model::{Group, ModelParams};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hyper: AdamHyper::default(),
        }
    }
}

/// One Adam update of a single matrix at (already incremented) step `t`.
/// The decay term `wd·θ` is added to the gradient before the moments.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut DenseMatrix,
    grad: &DenseMatrix,
    m: &mut DenseMatrix,
    v: &mut DenseMatrix,
    t: u64,
    lr: f64,
    wd: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != m.shape() || param.shape() != v.shape() {
        return Err(Error::Contract(format!(
            "adam shapes differ: param {:?}, grad {:?}, m {:?}, v {:?}",
            param.shape(),
            grad.shape(),
            m.shape(),
            v.shape()
        )));
    }
    if t == 0 {
        return Err(Error::Contract("adam step counter must start at 1".into()));
    }
    let AdamHyper { beta1, beta2, eps } = *hyper;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    let (pd, gd) = (param.data_mut(), grad.data());
    for (((p, &g), m), v) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
        let g = g + wd * *p;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Advances the step counter and updates every parameter with its group's
/// learning rate and weight decay.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &OptimConfig) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let hyper = state.hyper;
    let groups: Vec<Group> = params.tensors().into_iter().map(|(_, g, _)| g).collect();
    let grads = grads.tensors();
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    if grads.len() != ps.len() || ms.len() != ps.len() || vs.len() != ps.len() {
        return Err(Error::Contract("adam parameter layouts differ".into()));
    }
    for ((((p, (_, _, g)), m), v), group) in ps.into_iter().zip(grads).zip(ms).zip(vs).zip(groups) {
        let (lr, wd) = match group {
            Group::EmbeddingHead => (cfg.lr, cfg.wd),
            Group::Backbone => (cfg.lr_gnn, cfg.wd_gnn),
        };
        adam_update(p, g, m, v, t, lr, wd, &hyper)?;
    }
    Ok(())
}
