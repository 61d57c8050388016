//! SGD-with-momentum and Adam steps whose state exists only for the
//! parameters of the currently unfrozen block.
//!
//! SGD applies coupled L2 weight decay (`g + wd * w` enters the momentum
//! buffer); Adam applies decoupled decay (subtracted from the weight after
//! the moment update).

use crate::autodiff::GradSet;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamSet};
use crate::partition::FreezeMask;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
}

impl OptimKind {
    /// Number of state buffers per parameter: momentum for SGD, two
    /// moments for Adam.
    pub fn state_coeff(self) -> u64 {
        match self {
            OptimKind::Sgd => 1,
            OptimKind::Adam => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimHyper {
    pub kind: OptimKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimHyper {
    /// SGD defaults: lr 0.1, momentum 0.9, weight decay 1e-5.
    pub fn sgd_default() -> Self {
        OptimHyper {
            kind: OptimKind::Sgd,
            lr: 0.1,
            momentum: 0.9,
            betas: default_betas(),
            eps: default_eps(),
            weight_decay: 1e-5,
        }
    }

    /// Adam defaults: lr 1e-4, betas (0.9, 0.999), weight decay 1e-5.
    pub fn adam_default() -> Self {
        OptimHyper {
            kind: OptimKind::Adam,
            lr: 1e-4,
            momentum: 0.0,
            betas: default_betas(),
            eps: default_eps(),
            weight_decay: 1e-5,
        }
    }

    /// Adam with the reduced learning rate used for billion-parameter
    /// scale runs (5e-5), other settings unchanged.
    pub fn adam_large_model() -> Self {
        OptimHyper {
            lr: 5e-5,
            ..Self::adam_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer hyperparameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
struct MomentBuffers {
    m: Tensor,
    /// Second moment; present for Adam only.
    v: Option<Tensor>,
}

/// Optimizer state for exactly one trainable block.
#[derive(Clone, Debug)]
pub struct OptimState {
    kind: OptimKind,
    step_count: u64,
    buffers: BTreeMap<usize, Vec<MomentBuffers>>,
}

impl OptimState {
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Total floats held: `state_coeff * trainable_param_count`.
    pub fn float_units(&self) -> u64 {
        self.buffers
            .values()
            .flatten()
            .map(|b| (b.m.numel() + b.v.as_ref().map_or(0, Tensor::numel)) as u64)
            .sum()
    }
}

/// Builds zeroed optimizer state for the trainable block of `mask`.
pub fn alloc_state(model: &ModelSpec, mask: &FreezeMask, hyper: &OptimHyper) -> Result<OptimState> {
    hyper.validate()?;
    let mut buffers = BTreeMap::new();
    for layer in mask.trainable_layers() {
        let shapes = model.layers[layer].param_shapes();
        if shapes.is_empty() {
            continue;
        }
        let bufs = shapes
            .into_iter()
            .map(|s| MomentBuffers {
                m: Tensor::zeros(s.clone()),
                v: matches!(hyper.kind, OptimKind::Adam).then(|| Tensor::zeros(s)),
            })
            .collect();
        buffers.insert(layer, bufs);
    }
    if buffers.is_empty() {
        return Err(Error::EmptyTrainableSet);
    }
    Ok(OptimState {
        kind: hyper.kind,
        step_count: 0,
        buffers,
    })
}

/// Applies one optimizer step in place. Gradients must exist for exactly
/// the layers the state was allocated for; frozen parameters are never
/// touched.
pub fn step(
    params: &mut ParamSet,
    grads: &GradSet,
    state: &mut OptimState,
    hyper: &OptimHyper,
) -> Result<()> {
    if grads.by_layer.keys().ne(state.buffers.keys()) {
        return Err(Error::InvalidConfig(
            "gradient layers do not match optimizer state layers".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count;
    for (&layer, layer_grads) in &grads.by_layer {
        let bufs = state.buffers.get_mut(&layer).expect("checked above");
        for (pi, grad) in layer_grads.iter().enumerate() {
            let w = &mut params.layer_mut(layer)[pi];
            let buf = &mut bufs[pi];
            match state.kind {
                OptimKind::Sgd => {
                    let mu = hyper.momentum;
                    let wd = hyper.weight_decay;
                    let lr = hyper.lr;
                    let m = buf.m.data_mut();
                    for ((wv, gv), mv) in
                        w.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut())
                    {
                        let g = gv + wd * *wv;
                        *mv = mu * *mv + g;
                        *wv -= lr * *mv;
                    }
                }
                OptimKind::Adam => {
                    let (b1, b2) = hyper.betas;
                    let lr = hyper.lr;
                    let eps = hyper.eps;
                    let wd = hyper.weight_decay;
                    let bc1 = 1.0 - b1.powi(t as i32);
                    let bc2 = 1.0 - b2.powi(t as i32);
                    let v = buf.v.as_mut().expect("adam state has second moments");
                    for (((wv, gv), mv), vv) in w
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(buf.m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *wv -= lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *wv;
                    }
                }
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("parameter update in layer {layer}")));
            }
        }
    }
    Ok(())
}
