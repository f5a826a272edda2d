use crate::imagecore::{Image, SOBEL_X, SOBEL_Y};
use crate::numcore::{AdamW, Tape, Tensor, Var};

use super::{add_noise, DenoiserModel, DiffusionError, DiffusionSchedule, NAOSDConfig};

/// Pretraining objective weights and loop sizes. `lambda2` is kept for
/// config compatibility; it weights a distillation term that is not
/// implemented and has no effect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { lambda1: 2.0, lambda2: 1.0, iterations: 2000, batch_size: 8, learning_rate: 1e-3, seed: 0 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(DiffusionError::Config("pretrain loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(DiffusionError::Config("pretrain batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DiffusionError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Per-channel Sobel pair as a `[2C, C, 3, 3]` kernel: output `2c` is the
/// horizontal response of channel `c`, `2c + 1` the vertical one.
pub fn sobel_kernel(channels: usize) -> Tensor {
    let mut data = vec![0.0; 2 * channels * channels * 9];
    for c in 0..channels {
        for (j, k) in [SOBEL_X, SOBEL_Y].iter().enumerate() {
            let o = 2 * c + j;
            for dy in 0..3 {
                for dx in 0..3 {
                    data[((o * channels + c) * 3 + dy) * 3 + dx] = k[dy][dx];
                }
            }
        }
    }
    Tensor::new(vec![2 * channels, channels, 3, 3], data).expect("finite kernel")
}

/// `L1(sr, hr) + λ1 · L1(sobel(sr), sobel(hr))` recorded on `tape`. The
/// Sobel responses use zero padding, and the gradient term averages over
/// both directions and all channels.
pub fn pretrain_loss_var(tape: &mut Tape, sr: Var, hr: &Tensor, lambda1: f64) -> Result<Var, DiffusionError> {
    let sr_shape = tape.value(sr)?.shape().to_vec();
    if sr_shape != hr.shape() || sr_shape.len() != 3 {
        return Err(DiffusionError::Shape(format!("pretrain loss on {sr_shape:?} vs {:?}", hr.shape())));
    }
    let hr = tape.constant(hr.clone());
    let diff = tape.sub(sr, hr)?;
    let abs = tape.abs(diff)?;
    let l1 = tape.mean(abs)?;
    let kernel = tape.constant(sobel_kernel(sr_shape[0]));
    let g_sr = tape.conv2d(sr, kernel, None)?;
    let g_hr = tape.conv2d(hr, kernel, None)?;
    let gdiff = tape.sub(g_sr, g_hr)?;
    let gabs = tape.abs(gdiff)?;
    let lg = tape.mean(gabs)?;
    let weighted = tape.scale(lg, lambda1)?;
    Ok(tape.add(l1, weighted)?)
}

pub fn pretrain_loss(sr: &Image, hr: &Image, cfg: &PretrainConfig) -> Result<f64, DiffusionError> {
    if !sr.same_shape(hr) {
        return Err(DiffusionError::Shape(format!("pretrain loss on {:?} vs {:?}", sr.dims(), hr.dims())));
    }
    let mut tape = Tape::new();
    let s = tape.constant(sr.to_tensor());
    let loss = pretrain_loss_var(&mut tape, s, &hr.to_tensor(), cfg.lambda1)?;
    Ok(tape.value(loss)?.item())
}

/// One-step restoration recorded on `tape`; returns the pre-clamp output.
pub fn restore_var(
    model: &DenoiserModel,
    tape: &mut Tape,
    params: &[Var],
    z_lr: &Tensor,
    eps: &Tensor,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
) -> Result<Var, DiffusionError> {
    cfg.validate(schedule)?;
    let z_tilde = add_noise(z_lr, cfg.t_add, eps, schedule)?;
    let input = tape.constant(z_tilde.concat_channels(z_lr)?);
    let eps_hat = model.forward(tape, params, input, cfg.t_diff)?;
    let (sa, sb) = (schedule.alpha(cfg.t_diff).sqrt(), schedule.beta(cfg.t_diff).sqrt());
    let base = tape.constant(z_tilde.map(|v| v / sa));
    let correction = tape.scale(eps_hat, -sb / sa)?;
    Ok(tape.add(base, correction)?)
}

/// One supervised example: conditioning, target and the injected noise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub z_lr: Tensor,
    pub hr: Tensor,
    pub eps: Tensor,
}

/// Loss and parameter gradients of one sample.
pub fn pretrain_sample_grads(
    model: &DenoiserModel,
    sample: &TrainSample,
    lambda1: f64,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
) -> Result<(f64, Vec<Tensor>), DiffusionError> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let sr = restore_var(model, &mut tape, &params, &sample.z_lr, &sample.eps, cfg, schedule)?;
    let loss = pretrain_loss_var(&mut tape, sr, &sample.hr, lambda1)?;
    let value = tape.value(loss)?.item();
    let grads = tape.backward(loss)?;
    let g = params.iter().map(|&p| grads.wrt(p)).collect::<Result<Vec<_>, _>>()?;
    Ok((value, g))
}

/// One AdamW step on the mean loss over `batch`; returns that mean.
pub fn pretrain_step(
    model: &mut DenoiserModel,
    opt: &mut AdamW,
    batch: &[TrainSample],
    cfg: &PretrainConfig,
    naosd: NAOSDConfig,
    schedule: &DiffusionSchedule,
) -> Result<f64, DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::Config("empty pretraining batch".into()));
    }
    let mut total = 0.0;
    let mut acc: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    for sample in batch {
        let (loss, grads) = pretrain_sample_grads(model, sample, cfg.lambda1, naosd, schedule)?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    let n = batch.len() as f64;
    for a in &mut acc {
        for x in a.data_mut() {
            *x /= n;
        }
    }
    let mean = total / n;
    if !mean.is_finite() {
        return Err(DiffusionError::Diverged(format!("pretraining loss {mean}")));
    }
    let names = model.param_names();
    opt.step(model.params_mut(), &acc, &names)?;
    Ok(mean)
}
