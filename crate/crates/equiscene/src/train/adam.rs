//! Adam with bias correction, moments aligned with the parameter store.

use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::{ModelState, OptimMoments};
use crate::nn::Tensor;

pub struct Adam {
    t: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(state: &ModelState) -> Self {
        Self {
            t: 0,
            m: state.params().iter().map(|p| Tensor::zeros(p.tensor.dims())).collect(),
            v: state.params().iter().map(|p| Tensor::zeros(p.tensor.dims())).collect(),
        }
    }

    /// Rebuild from checkpointed moments; zero moments when absent.
    pub fn from_moments(state: &ModelState, moments: Option<OptimMoments>) -> Result<Self> {
        let Some(om) = moments else {
            return Ok(Self::new(state));
        };
        if om.m.len() != state.params().len() || om.v.len() != state.params().len() {
            return Err(Error::Format("optimizer moments misaligned with parameters".into()));
        }
        Ok(Self { t: om.t, m: om.m, v: om.v })
    }

    pub fn moments(&self) -> OptimMoments {
        OptimMoments { t: self.t, m: self.m.clone(), v: self.v.clone() }
    }

    /// In-place update. `grads` is aligned with `state.params()`; a missing
    /// gradient is treated as zero.
    pub fn apply(
        &mut self,
        state: &mut ModelState,
        grads: &[Option<Tensor<f32>>],
        cfg: &TrainingConfig,
    ) -> Result<()> {
        debug_assert_eq!(grads.len(), state.params().len());
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let bc1 = 1.0 - (cfg.beta1 as f32).powi(self.t as i32);
        let bc2 = 1.0 - (cfg.beta2 as f32).powi(self.t as i32);
        let lr = cfg.learning_rate as f32;
        let eps = cfg.eps as f32;
        let names: Vec<String> = state.params().iter().map(|p| p.name.clone()).collect();
        for (idx, name) in names.iter().enumerate() {
            let zero;
            let g = match &grads[idx] {
                Some(g) => {
                    if !g.all_finite() {
                        return Err(Error::Training(format!(
                            "non-finite gradient for {name} at optimizer step {}",
                            self.t
                        )));
                    }
                    g
                }
                None => {
                    zero = Tensor::zeros(state.params()[idx].tensor.dims());
                    &zero
                }
            };
            let mut p = state.params()[idx].tensor.clone();
            {
                let m = self.m[idx].data_mut();
                let v = self.v[idx].data_mut();
                let pd = p.data_mut();
                for ((pi, mi), (vi, gi)) in
                    pd.iter_mut().zip(m.iter_mut()).zip(v.iter_mut().zip(g.data()))
                {
                    *mi = b1 * *mi + (1.0 - b1) * *gi;
                    *vi = b2 * *vi + (1.0 - b2) * *gi * *gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *pi -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            state.set_param(name, p);
        }
        Ok(())
    }
}
