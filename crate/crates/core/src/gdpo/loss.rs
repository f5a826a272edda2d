use crate::diffusion::{add_noise, DenoiserModel, DiffusionSchedule};
use crate::numcore::{Tape, Tensor, Var};

use super::GdpoError;

/// Population-std standardization of a reward vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&a| a == 0.0)
    }
}

/// `(R_i − mean) / std` with the population std; all zeros when the std
/// is below 1e-12.
pub fn group_advantage(rewards: &[f64]) -> AdvantageVector {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return AdvantageVector { values: vec![] };
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    if !(std >= 1e-12) {
        return AdvantageVector { values: vec![0.0; rewards.len()] };
    }
    AdvantageVector { values: rewards.iter().map(|r| (r - mean) / std).collect() }
}

/// Inputs shared by every term of one preference loss.
#[derive(Clone, Copy, Debug)]
pub struct PreferenceContext<'a> {
    /// Upsampled LR conditioning, `[C, H, W]`.
    pub z_lr: &'a Tensor,
    pub t: usize,
    pub omega: f64,
    pub schedule: &'a DiffusionSchedule,
}

/// Registered policy and reference parameters on one tape.
struct PreferenceTape<'a> {
    tape: Tape,
    policy: &'a DenoiserModel,
    reference: &'a DenoiserModel,
    policy_params: Vec<Var>,
    reference_params: Vec<Var>,
}

impl<'a> PreferenceTape<'a> {
    fn new(policy: &'a DenoiserModel, reference: &'a DenoiserModel) -> Result<Self, GdpoError> {
        if policy.arch() != reference.arch() {
            return Err(GdpoError::Config(format!(
                "policy {} and reference {} architectures differ",
                policy.arch().descriptor(),
                reference.arch().descriptor()
            )));
        }
        let mut tape = Tape::new();
        let policy_params = policy.register(&mut tape);
        let reference_params = reference.register_frozen(&mut tape);
        Ok(Self { tape, policy, reference, policy_params, reference_params })
    }

    /// `mse(ε, π_θ(x_t)) − mse(ε, π_ref(x_t))` with `x_t` the noised sample.
    fn error_gap(&mut self, x0: &Tensor, eps: &Tensor, ctx: &PreferenceContext) -> Result<Var, GdpoError> {
        if x0.shape() != ctx.z_lr.shape() || eps.shape() != x0.shape() {
            return Err(GdpoError::Shape(format!(
                "sample {:?}, noise {:?}, conditioning {:?}",
                x0.shape(),
                eps.shape(),
                ctx.z_lr.shape()
            )));
        }
        let x_t = add_noise(x0, ctx.t, eps, ctx.schedule)?;
        let input = self.tape.constant(x_t.concat_channels(ctx.z_lr)?);
        let target = self.tape.constant(eps.clone());
        let pred = self.policy.forward(&mut self.tape, &self.policy_params, input, ctx.t)?;
        let pred_ref = self.reference.forward(&mut self.tape, &self.reference_params, input, ctx.t)?;
        let err = self.tape.squared_error(pred, target)?;
        let err_ref = self.tape.squared_error(pred_ref, target)?;
        Ok(self.tape.sub(err, err_ref)?)
    }

    /// `−log σ(−ω · inner)`.
    fn finish(mut self, inner: Var, omega: f64) -> Result<(f64, Vec<Tensor>), GdpoError> {
        let arg = self.tape.scale(inner, -omega)?;
        let ls = self.tape.log_sigmoid(arg)?;
        let loss = self.tape.scale(ls, -1.0)?;
        let value = self.tape.value(loss)?.item();
        if !value.is_finite() {
            return Err(GdpoError::Diverged(format!("preference loss {value}")));
        }
        let grads = self.tape.backward(loss)?;
        let g = self.policy_params.iter().map(|&p| grads.wrt(p)).collect::<Result<Vec<_>, _>>()?;
        Ok((value, g))
    }
}

/// Diffusion-DPO loss on a win/lose pair, with gradients for the policy.
pub fn dpo_loss_and_grads(
    policy: &DenoiserModel,
    reference: &DenoiserModel,
    win: &Tensor,
    lose: &Tensor,
    eps_w: &Tensor,
    eps_l: &Tensor,
    ctx: &PreferenceContext,
) -> Result<(f64, Vec<Tensor>), GdpoError> {
    let mut pt = PreferenceTape::new(policy, reference)?;
    let gap_w = pt.error_gap(win, eps_w, ctx)?;
    let gap_l = pt.error_gap(lose, eps_l, ctx)?;
    let inner = pt.tape.sub(gap_w, gap_l)?;
    pt.finish(inner, ctx.omega)
}

pub fn dpo_loss(
    policy: &DenoiserModel,
    reference: &DenoiserModel,
    win: &Tensor,
    lose: &Tensor,
    eps_w: &Tensor,
    eps_l: &Tensor,
    ctx: &PreferenceContext,
) -> Result<f64, GdpoError> {
    Ok(dpo_loss_and_grads(policy, reference, win, lose, eps_w, eps_l, ctx)?.0)
}

/// Advantage-weighted preference loss over a group,
/// `−log σ(−ω Σ_i A_i [mse_θ(i) − mse_ref(i)])`, with policy gradients.
/// Zero-advantage terms contribute nothing and are skipped.
pub fn gdpo_loss_and_grads(
    policy: &DenoiserModel,
    reference: &DenoiserModel,
    candidates: &[Tensor],
    advantages: &AdvantageVector,
    eps: &[Tensor],
    ctx: &PreferenceContext,
) -> Result<(f64, Vec<Tensor>), GdpoError> {
    if candidates.len() != advantages.len() || candidates.len() != eps.len() {
        return Err(GdpoError::Shape(format!(
            "{} candidates, {} advantages, {} noise draws",
            candidates.len(),
            advantages.len(),
            eps.len()
        )));
    }
    let mut pt = PreferenceTape::new(policy, reference)?;
    let mut inner: Option<Var> = None;
    for ((x0, e), &a) in candidates.iter().zip(eps).zip(&advantages.values) {
        if a == 0.0 {
            continue;
        }
        let gap = pt.error_gap(x0, e, ctx)?;
        let term = pt.tape.scale(gap, a)?;
        inner = Some(match inner {
            None => term,
            Some(acc) => pt.tape.add(acc, term)?,
        });
    }
    let inner = match inner {
        Some(v) => v,
        None => pt.tape.constant(Tensor::scalar(0.0)),
    };
    pt.finish(inner, ctx.omega)
}

pub fn gdpo_loss(
    policy: &DenoiserModel,
    reference: &DenoiserModel,
    candidates: &[Tensor],
    advantages: &AdvantageVector,
    eps: &[Tensor],
    ctx: &PreferenceContext,
) -> Result<f64, GdpoError> {
    Ok(gdpo_loss_and_grads(policy, reference, candidates, advantages, eps, ctx)?.0)
}

/// Scalar form of the GDPO loss from per-candidate errors; the on-tape
/// version evaluates the same expression.
pub fn gdpo_objective(policy_err: &[f64], reference_err: &[f64], advantages: &[f64], omega: f64) -> f64 {
    let inner: f64 = policy_err.iter().zip(reference_err).zip(advantages).map(|((p, r), a)| a * (p - r)).sum();
    -crate::numcore::log_sigmoid(-omega * inner)
}
