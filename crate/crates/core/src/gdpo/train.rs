use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{CandidateGroup, DenoiserModel, DiffusionSchedule};
use crate::numcore::{gaussian_tensor, AdamW, Tensor};

use super::{gdpo_loss_and_grads, AdvantageVector, GdpoError, PreferenceContext};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdpoConfig {
    pub omega: f64,
    pub group_size: usize,
    pub t_lo: usize,
    pub t_hi: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reuse one noising draw for every candidate of a group.
    pub shared_noise: bool,
}

impl Default for GdpoConfig {
    fn default() -> Self {
        Self {
            omega: 5000.0,
            group_size: 6,
            t_lo: 1,
            t_hi: 1000,
            learning_rate: 5e-5,
            iterations: 1500,
            batch_size: 8,
            seed: 0,
            shared_noise: false,
        }
    }
}

impl GdpoConfig {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<(), GdpoError> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(GdpoError::Config(format!("omega must be positive, got {}", self.omega)));
        }
        if self.group_size < 2 {
            return Err(GdpoError::Config(format!("group size must be at least 2, got {}", self.group_size)));
        }
        if self.t_lo == 0 || self.t_lo > self.t_hi || self.t_hi > schedule.timesteps() {
            return Err(GdpoError::Config(format!(
                "need 1 <= t_lo ({}) <= t_hi ({}) <= T ({})",
                self.t_lo,
                self.t_hi,
                schedule.timesteps()
            )));
        }
        if self.batch_size == 0 {
            return Err(GdpoError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GdpoError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// A sampled group with its precomputed advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredGroup {
    pub group: CandidateGroup,
    pub advantages: AdvantageVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Mean loss over the batch.
    pub loss: f64,
    pub group_losses: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub grad_norm: f64,
}

/// One AdamW step on the batch-mean GDPO loss. Each group draws its own
/// timestep from `[t_lo, t_hi]` and fresh noising draws from `rng`.
pub fn gdpo_train_step(
    policy: &mut DenoiserModel,
    reference: &DenoiserModel,
    batch: &[ScoredGroup],
    cfg: &GdpoConfig,
    schedule: &DiffusionSchedule,
    opt: &mut AdamW,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, GdpoError> {
    cfg.validate(schedule)?;
    if batch.is_empty() {
        return Err(GdpoError::Config("empty GDPO batch".into()));
    }
    let mut acc: Vec<Tensor> = policy.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut group_losses = Vec::with_capacity(batch.len());
    let mut timesteps = Vec::with_capacity(batch.len());
    for sg in batch {
        let t = rng.random_range(cfg.t_lo..=cfg.t_hi);
        let shape = sg.group.z_lr.shape().to_vec();
        let eps: Vec<Tensor> = if cfg.shared_noise {
            vec![gaussian_tensor(&shape, rng); sg.group.len()]
        } else {
            (0..sg.group.len()).map(|_| gaussian_tensor(&shape, rng)).collect()
        };
        let candidates: Vec<Tensor> = sg.group.candidates.iter().map(|c| c.to_tensor()).collect();
        let ctx = PreferenceContext { z_lr: &sg.group.z_lr, t, omega: cfg.omega, schedule };
        let (loss, grads) =
            gdpo_loss_and_grads(policy, reference, &candidates, &sg.advantages, &eps, &ctx).map_err(|e| match e {
                GdpoError::Diverged(msg) => {
                    GdpoError::Diverged(format!("{msg} at t={t}, group {}", group_losses.len()))
                }
                other => other,
            })?;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
        group_losses.push(loss);
        timesteps.push(t);
    }
    let n = batch.len() as f64;
    let mut sq = 0.0;
    for a in &mut acc {
        for x in a.data_mut() {
            *x /= n;
            sq += *x * *x;
        }
    }
    let loss = group_losses.iter().sum::<f64>() / n;
    let names = policy.param_names();
    opt.step(policy.params_mut(), &acc, &names)?;
    Ok(StepReport { loss, group_losses, timesteps, grad_norm: sq.sqrt() })
}
