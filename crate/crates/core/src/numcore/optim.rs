use super::{NumError, Tensor};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Bias-corrected adaptive moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, step: 0, first_moment: zeros(), second_moment: zeros() }
    }

    /// Applies one update in place. `names` labels each block for errors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String]) -> Result<(), NumError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(NumError::Shape {
                op: "adamw_step",
                detail: format!(
                    "{} parameter blocks, {} gradient blocks, {} moment blocks",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("block{i}"));
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(NumError::Shape {
                    op: "adamw_step",
                    detail: format!("block {name}: param {:?}, grad {:?}", p.shape(), g.shape()),
                });
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFiniteGradient { block: name });
            }
        }

        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
