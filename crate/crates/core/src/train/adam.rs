use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::MomentRecord;
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam. Moments are created lazily, keyed by parameter id.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(&id).map(|(m, v)| (m, v))
    }

    /// Applies one update using each parameter's accumulated `grad`.
    pub fn step<S: ParamStore<T> + ?Sized>(&mut self, store: &mut S, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::InvalidParameter(format!("learning rate {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in store.parameters_mut() {
            let shape = p.shape();
            let (m, v) = self
                .moments
                .entry(p.id)
                .or_insert_with(|| (Tensor::zeros(shape), Tensor::zeros(shape)));
            if m.shape() != shape {
                return Err(Error::Shape(format!(
                    "optimizer state {} vs parameter {} ({})",
                    m.shape(),
                    shape,
                    p.name
                )));
            }
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((theta, &g), mi), vi) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g.as_f64();
                let m_new = b1 * mi.as_f64() + (1.0 - b1) * g;
                let v_new = b2 * vi.as_f64() + (1.0 - b2) * g * g;
                *mi = T::from_f64_lossy(m_new);
                *vi = T::from_f64_lossy(v_new);
                let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
                *theta = T::from_f64_lossy(theta.as_f64() - update);
            }
        }
        Ok(())
    }

    /// Moments in a form suitable for checkpoints.
    pub fn records(&self) -> Vec<MomentRecord> {
        self.moments
            .iter()
            .map(|(&id, (m, v))| MomentRecord {
                id,
                first: m.data().iter().map(|x| x.as_f64() as f32).collect(),
                second: v.data().iter().map(|x| x.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Restores moments saved with [`Adam::records`] for the parameters of `store`.
    pub fn restore<S: ParamStore<T> + ?Sized>(store: &S, step: u64, records: &[MomentRecord]) -> Result<Self> {
        let shapes: BTreeMap<ParamId, _> = store.parameters().iter().map(|p| (p.id, p.shape())).collect();
        let mut adam = Adam::new();
        adam.step = step;
        for r in records {
            let shape = *shapes
                .get(&r.id)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {}", r.id)))?;
            let conv = |xs: &[f32]| Tensor::from_vec(shape, xs.iter().map(|&x| T::from_f64_lossy(x as f64)).collect());
            adam.moments.insert(r.id, (conv(&r.first)?, conv(&r.second)?));
        }
        Ok(adam)
    }
}
