use crate::imagecore::{bicubic_upsample, Image};
use crate::numcore::{gaussian_tensor, seeded_rng, Tensor};

use super::{DenoiserModel, DiffusionError, DiffusionSchedule};

/// Inference timesteps: noise is injected at `t_add` and the denoiser is
/// queried at `t_diff`. Conditioning is always channel concatenation of the
/// upsampled LR.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NAOSDConfig {
    pub t_add: usize,
    pub t_diff: usize,
}

impl Default for NAOSDConfig {
    fn default() -> Self {
        Self { t_add: 250, t_diff: 100 }
    }
}

impl NAOSDConfig {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<(), DiffusionError> {
        if self.t_diff == 0 || self.t_diff > self.t_add || self.t_add > schedule.timesteps() {
            return Err(DiffusionError::Config(format!(
                "need 1 <= t_diff ({}) <= t_add ({}) <= T ({})",
                self.t_diff,
                self.t_add,
                schedule.timesteps()
            )));
        }
        Ok(())
    }
}

/// `√α_t · z + √β_t · eps`.
pub fn add_noise(z: &Tensor, t: usize, eps: &Tensor, schedule: &DiffusionSchedule) -> Result<Tensor, DiffusionError> {
    schedule.check(t)?;
    let (sa, sb) = (schedule.alpha(t).sqrt(), schedule.beta(t).sqrt());
    Ok(z.zip_map(eps, |z, e| sa * z + sb * e)?)
}

/// Anything that can play the ε-predictor in the restoration step.
///
/// `input` is the noisy image stacked over the LR conditioning. `injected`
/// is the draw that produced the noisy image; real models ignore it.
pub trait NoisePredictor {
    fn predict_noise(&self, input: &Tensor, t: usize, injected: &Tensor) -> Result<Tensor, DiffusionError>;
}

impl NoisePredictor for DenoiserModel {
    fn predict_noise(&self, input: &Tensor, t: usize, _injected: &Tensor) -> Result<Tensor, DiffusionError> {
        self.predict(input, t)
    }
}

/// Returns the injected noise exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectPredictor;

impl NoisePredictor for PerfectPredictor {
    fn predict_noise(&self, _input: &Tensor, _t: usize, injected: &Tensor) -> Result<Tensor, DiffusionError> {
        Ok(injected.clone())
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, _input: &Tensor, _t: usize, injected: &Tensor) -> Result<Tensor, DiffusionError> {
        Ok(Tensor::zeros(injected.shape()))
    }
}

/// Intermediate values of one restoration, all `[C, H, W]` at HR size.
#[derive(Clone, Debug, PartialEq)]
pub struct Restoration {
    pub z_lr: Tensor,
    pub z_tilde: Tensor,
    pub eps_hat: Tensor,
    /// Pre-clamp restored signal.
    pub raw: Tensor,
    pub sr: Image,
}

/// Scale factor implied by an HR-shaped tensor and an LR image.
pub fn infer_factor(lr: &Image, hr_shape: &[usize]) -> Result<usize, DiffusionError> {
    let (h, w, c) = lr.dims();
    if hr_shape.len() != 3 || hr_shape[0] != c || !hr_shape[1].is_multiple_of(h) || !hr_shape[2].is_multiple_of(w) {
        return Err(DiffusionError::Shape(format!("HR shape {hr_shape:?} incompatible with LR {h}x{w}x{c}")));
    }
    let factor = hr_shape[1] / h;
    if hr_shape[2] / w != factor {
        return Err(DiffusionError::Shape(format!("anisotropic scale {hr_shape:?} from {h}x{w}")));
    }
    Ok(factor)
}

/// Restoration from an already upsampled conditioning tensor.
pub fn restore_upsampled(
    model: &dyn NoisePredictor,
    z_lr: &Tensor,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
    eps: &Tensor,
) -> Result<Restoration, DiffusionError> {
    cfg.validate(schedule)?;
    let z_tilde = add_noise(z_lr, cfg.t_add, eps, schedule)?;
    let input = z_tilde.concat_channels(z_lr)?;
    let eps_hat = model.predict_noise(&input, cfg.t_diff, eps)?;
    if eps_hat.shape() != z_lr.shape() {
        return Err(DiffusionError::Shape(format!(
            "predictor returned {:?}, expected {:?}",
            eps_hat.shape(),
            z_lr.shape()
        )));
    }
    let (sa, sb) = (schedule.alpha(cfg.t_diff).sqrt(), schedule.beta(cfg.t_diff).sqrt());
    let raw = z_tilde.zip_map(&eps_hat, |z, e| (z - sb * e) / sa)?;
    let sr = Image::from_tensor(&raw)?.clamped();
    Ok(Restoration { z_lr: z_lr.clone(), z_tilde, eps_hat, raw, sr })
}

/// Upsample `lr`, inject `eps` at `t_add`, predict at `t_diff`, and invert.
/// The scale factor is read off the shape of `eps`.
pub fn one_step_restore(
    model: &dyn NoisePredictor,
    lr: &Image,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
    eps: &Tensor,
) -> Result<Restoration, DiffusionError> {
    let factor = infer_factor(lr, eps.shape())?;
    let z_lr = bicubic_upsample(lr, factor)?.to_tensor();
    restore_upsampled(model, &z_lr, cfg, schedule, eps)
}

/// `(signal gain, noise gain)` of the restored output under perfect noise
/// prediction: `z_SR = signal·z_LR + noise·ε`.
pub fn residual_coefficients(cfg: NAOSDConfig, schedule: &DiffusionSchedule) -> Result<(f64, f64), DiffusionError> {
    cfg.validate(schedule)?;
    let sa_diff = schedule.alpha(cfg.t_diff).sqrt();
    let signal = schedule.alpha(cfg.t_add).sqrt() / sa_diff;
    let noise = (schedule.beta(cfg.t_add).sqrt() - schedule.beta(cfg.t_diff).sqrt()) / sa_diff;
    Ok((signal, noise))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStd {
    /// Sample standard deviation (n − 1 denominator) per HR element.
    pub per_pixel: Tensor,
    pub mean: f64,
}

/// Spread of the pre-clamp restoration across `n_draws` seeded noise draws.
pub fn empirical_residual_std(
    model: &dyn NoisePredictor,
    lr: &Image,
    factor: usize,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
    n_draws: usize,
    seed: u64,
) -> Result<ResidualStd, DiffusionError> {
    if n_draws < 2 {
        return Err(DiffusionError::Config(format!("n_draws must be at least 2, got {n_draws}")));
    }
    let z_lr = bicubic_upsample(lr, factor)?.to_tensor();
    let shape = z_lr.shape().to_vec();
    let mut rng = seeded_rng(seed);
    let n = z_lr.len();
    // Welford accumulation; identical draws give exactly zero spread
    let mut mean_acc = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for k in 1..=n_draws {
        let eps = gaussian_tensor(&shape, &mut rng);
        let r = restore_upsampled(model, &z_lr, cfg, schedule, &eps)?;
        for (i, &v) in r.raw.data().iter().enumerate() {
            let delta = v - mean_acc[i];
            mean_acc[i] += delta / k as f64;
            m2[i] += delta * (v - mean_acc[i]);
        }
    }
    let std: Vec<f64> = m2.iter().map(|q| (q / (n_draws - 1) as f64).sqrt()).collect();
    let mean = std.iter().sum::<f64>() / n as f64;
    Ok(ResidualStd { per_pixel: Tensor::new(shape, std)?, mean })
}
