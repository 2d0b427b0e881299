use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Bias-corrected Adam with a constant learning rate.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |p: &super::Param<T>| vec![T::zero(); p.value.numel()];
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            first: store.iter().map(|(_, p)| zeros(p)).collect(),
            second: store.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the stored gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::State(format!("parameter `{}` has no gradient", p.name)));
        }
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = store.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        let step_size = T::from_f64(self.lr / c1);
        let c2_sqrt = T::from_f64(c2.sqrt());
        let eps = T::from_f64(self.eps);
        let clip = T::from_f64(clip);
        for ((p, m), v) in store
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let grad = p.grad.as_mut().expect("checked above");
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gc = *g * clip;
                *mi = b1t * *mi + one_b1 * gc;
                *vi = b2t * *vi + one_b2 * gc * gc;
                *w -= step_size * *mi / (vi.sqrt() / c2_sqrt + eps);
                *g = T::zero();
            }
        }
        Ok(())
    }
}
