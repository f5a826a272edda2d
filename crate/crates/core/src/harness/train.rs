use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{
    pretrain_step, restore_upsampled, sample_group, DenoiserModel, DiffusionError, DiffusionSchedule, TrainSample,
};
use crate::gdpo::{arf_reward, gdpo_train_step, group_advantage, GdpoError, ScoredGroup};
use crate::imagecore::{bicubic_upsample, partition_regions, psnr, Image};
use crate::numcore::{derive_seed, gaussian_tensor, label_seed, seeded_rng, AdamW, AdamWConfig, Tensor};

use super::checkpoint::config_digest;
use super::{
    create_dir, load_checkpoint_for, load_split, save_checkpoint, write_rows, Checkpoint, HarnessError, ImagePair,
    MetricsTable, RunConfig, Split,
};

/// Noise for draw `draw` of held-out image `index`. Every model evaluated
/// under the same seed sees the same draws.
pub(crate) fn eval_noise(seed: u64, index: usize, draw: usize, shape: &[usize]) -> Tensor {
    let base = derive_seed(label_seed(seed, "eval/noise"), index as u64);
    gaussian_tensor(shape, &mut seeded_rng(derive_seed(base, draw as u64)))
}

pub(crate) fn hr_shape(img: &Image) -> [usize; 3] {
    [img.channels(), img.height(), img.width()]
}

/// Mean held-out PSNR of `model` (draw 0) and of plain bicubic upsampling.
pub(crate) fn holdout_psnr(
    model: &DenoiserModel,
    holdout: &[ImagePair],
    cfg: &RunConfig,
    schedule: &DiffusionSchedule,
) -> Result<(f64, f64), HarnessError> {
    let f = cfg.degradation.factor;
    let (mut ours, mut bic) = (0.0, 0.0);
    for (j, pair) in holdout.iter().enumerate() {
        let up = bicubic_upsample(&pair.lr, f)?;
        let eps = eval_noise(cfg.seed, j, 0, &hr_shape(&pair.hr));
        let r = restore_upsampled(model, &up.to_tensor(), cfg.naosd, schedule, &eps)?;
        ours += psnr(&r.sr, &pair.hr)?;
        bic += psnr(&up.clamped(), &pair.hr)?;
    }
    let n = holdout.len().max(1) as f64;
    Ok((ours / n, bic / n))
}

/// Random factor-aligned square crop position.
fn crop_origin(rng: &mut ChaCha8Rng, img: &Image, crop: usize, factor: usize) -> (usize, usize) {
    let ny = (img.height() - crop) / factor;
    let nx = (img.width() - crop) / factor;
    (rng.random_range(0..=ny) * factor, rng.random_range(0..=nx) * factor)
}

fn model_config_check(cfg: &RunConfig, ckpt: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    if ckpt.timesteps != cfg.timesteps || ckpt.variance != cfg.variance {
        return Err(HarnessError::Checkpoint(format!(
            "{} was trained on a {}-step {:?} schedule, config has {}-step {:?}",
            path.display(),
            ckpt.timesteps,
            ckpt.variance,
            cfg.timesteps,
            cfg.variance
        )));
    }
    Ok(())
}

pub(crate) fn load_model(cfg: &RunConfig, path: &Path) -> Result<DenoiserModel, HarnessError> {
    let ckpt = load_checkpoint_for(path, &cfg.arch)?;
    model_config_check(cfg, &ckpt, path)?;
    ckpt.model()
}

fn require_pairs(pairs: &[ImagePair], what: &str, data_dir: &Path) -> Result<(), HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::Io(format!("no {what} pairs under {}", data_dir.display())));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub model: DenoiserModel,
    pub log: MetricsTable,
    pub holdout_psnr: f64,
    pub bicubic_psnr: f64,
}

/// Trains a fresh denoiser through the one-step restoration and writes
/// `pretrain.ckpt` and `pretrain_log.csv` to the output directory.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PretrainOutcome, HarnessError> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let out = cfg.resolved_output_dir();
    create_dir(&out)?;
    let train = load_split(&cfg.data_dir, Split::Train)?;
    let holdout = load_split(&cfg.data_dir, Split::Holdout)?;
    require_pairs(&train, "training", &cfg.data_dir)?;
    let f = cfg.degradation.factor;
    let upsampled: Vec<Image> = train.iter().map(|p| bicubic_upsample(&p.lr, f)).collect::<Result<_, _>>()?;

    let mut model = DenoiserModel::init(cfg.arch.clone(), &mut seeded_rng(label_seed(cfg.seed, "init")))?
        .with_schedule(schedule.clone());
    model.set_passthrough_skip(cfg.naosd, &schedule)?;
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.pretrain.learning_rate, ..AdamWConfig::default() }, model.params());
    let mut batch_rng = seeded_rng(label_seed(cfg.seed, "pretrain/batches"));
    let mut noise_rng = seeded_rng(label_seed(cfg.seed, "pretrain/noise"));
    let digest = config_digest(&cfg.canonical());
    let ckpt_path = out.join("pretrain.ckpt");
    let log_path = out.join("pretrain_log.csv");

    let mut log = MetricsTable::new(&["step"], &["loss", "holdout_psnr", "bicubic_psnr"]);
    let (mut interval_loss, mut interval_n) = (0.0, 0usize);
    let crop = cfg.pretrain_crop;
    for it in 0..cfg.pretrain.iterations {
        let mut batch = Vec::with_capacity(cfg.pretrain.batch_size);
        for _ in 0..cfg.pretrain.batch_size {
            let k = batch_rng.random_range(0..train.len());
            let (y0, x0) = crop_origin(&mut batch_rng, &train[k].hr, crop, f);
            let z_lr = upsampled[k].crop(y0, x0, crop, crop)?.to_tensor();
            let hr = train[k].hr.crop(y0, x0, crop, crop)?.to_tensor();
            let eps = gaussian_tensor(z_lr.shape(), &mut noise_rng);
            batch.push(TrainSample { z_lr, hr, eps });
        }
        let loss = match pretrain_step(&mut model, &mut opt, &batch, &cfg.pretrain, cfg.naosd, &schedule) {
            Ok(l) => l,
            Err(DiffusionError::Diverged(message)) => {
                save_checkpoint(&Checkpoint::new(&model, Some(&opt), it as u64, &schedule, digest), &ckpt_path)?;
                write_rows(&log_path, &log)?;
                return Err(HarnessError::Diverged {
                    message: format!("{message} at step {}", it + 1),
                    last_good: Some(ckpt_path),
                });
            }
            Err(e) => return Err(e.into()),
        };
        interval_loss += loss;
        interval_n += 1;
        let step = it + 1;
        if step % cfg.log_interval == 0 || step == cfg.pretrain.iterations {
            let (hp, bp) = holdout_psnr(&model, &holdout, cfg, &schedule)?;
            info!(
                "pretrain step {step}: loss {:.5}, held-out PSNR {hp:.3} dB (bicubic {bp:.3})",
                interval_loss / interval_n as f64
            );
            log.push(vec![step.to_string()], vec![interval_loss / interval_n as f64, hp, bp])?;
            interval_loss = 0.0;
            interval_n = 0;
        }
    }
    let (holdout_psnr, bicubic_psnr) = holdout_psnr(&model, &holdout, cfg, &schedule)?;
    save_checkpoint(
        &Checkpoint::new(&model, Some(&opt), cfg.pretrain.iterations as u64, &schedule, digest),
        &ckpt_path,
    )?;
    write_rows(&log_path, &log)?;
    Ok(PretrainOutcome { checkpoint: ckpt_path, log_path, model, log, holdout_psnr, bicubic_psnr })
}

#[derive(Clone, Debug)]
pub struct GdpoOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub policy: DenoiserModel,
    pub log: MetricsTable,
}

/// Fine-tunes the checkpoint named by `cfg.checkpoint` with GDPO against a
/// frozen copy of itself, writing `gdpo.ckpt` and `gdpo_log.csv`.
pub fn run_gdpo(cfg: &RunConfig) -> Result<GdpoOutcome, HarnessError> {
    cfg.validate()?;
    let base_path = cfg.checkpoint.clone().ok_or_else(|| HarnessError::Config {
        line: None,
        key: "checkpoint".into(),
        message: "gdpo needs a base checkpoint".into(),
    })?;
    let schedule = cfg.schedule()?;
    let reference = load_model(cfg, &base_path)?;
    let mut policy = reference.clone();
    let out = cfg.resolved_output_dir();
    create_dir(&out)?;
    let train = load_split(&cfg.data_dir, Split::Train)?;
    require_pairs(&train, "training", &cfg.data_dir)?;
    let registry = cfg.registry();
    let f = cfg.degradation.factor;
    let crop = cfg.gdpo_crop;

    let mut opt = AdamW::new(AdamWConfig { lr: cfg.gdpo.learning_rate, ..AdamWConfig::default() }, policy.params());
    let mut batch_rng = seeded_rng(label_seed(cfg.seed, "gdpo/batches"));
    let group_base = label_seed(cfg.seed, "gdpo/groups");
    let mut step_rng = seeded_rng(label_seed(cfg.seed, "gdpo/timesteps"));
    let digest = config_digest(&cfg.canonical());
    let ckpt_path = out.join("gdpo.ckpt");
    let log_path = out.join("gdpo_log.csv");

    let mut log = MetricsTable::new(
        &["step"],
        &["loss", "mean_reward", "candidate_psnr", "mean_abs_advantage", "degenerate_fraction", "grad_norm"],
    );
    let mut acc = [0.0f64; 6];
    let mut acc_n = 0usize;
    for it in 0..cfg.gdpo.iterations {
        let mut batch = Vec::with_capacity(cfg.gdpo.batch_size);
        let (mut reward_sum, mut psnr_sum, mut abs_adv, mut degenerate, mut n_cand) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for b in 0..cfg.gdpo.batch_size {
            let k = batch_rng.random_range(0..train.len());
            let (y0, x0) = crop_origin(&mut batch_rng, &train[k].hr, crop, f);
            let hr = train[k].hr.crop(y0, x0, crop, crop)?;
            let lr = train[k].lr.crop(y0 / f, x0 / f, crop / f, crop / f)?;
            let seed = derive_seed(group_base, (it * cfg.gdpo.batch_size + b) as u64);
            let group = sample_group(
                &policy,
                &lr,
                &hr,
                cfg.naosd,
                &schedule,
                cfg.gdpo.group_size,
                seed,
                &format!("g{it}.{b}/"),
            )?;
            let region = partition_regions(&hr, cfg.entropy_tau, cfg.grid)?;
            let reward = arf_reward(&group, &region, &registry)?;
            let advantages = group_advantage(&reward.reward);
            reward_sum += reward.reward.iter().sum::<f64>();
            for c in &group.candidates {
                psnr_sum += psnr(c, &hr)?;
            }
            n_cand += group.len();
            abs_adv += advantages.values.iter().map(|a| a.abs()).sum::<f64>() / advantages.len() as f64;
            if advantages.is_degenerate() {
                degenerate += 1.0;
            }
            batch.push(ScoredGroup { group, advantages });
        }
        let report =
            match gdpo_train_step(&mut policy, &reference, &batch, &cfg.gdpo, &schedule, &mut opt, &mut step_rng) {
                Ok(r) => r,
                Err(GdpoError::Diverged(message)) => {
                    save_checkpoint(&Checkpoint::new(&policy, Some(&opt), it as u64, &schedule, digest), &ckpt_path)?;
                    write_rows(&log_path, &log)?;
                    return Err(HarnessError::Diverged {
                        message: format!("{message} at step {}", it + 1),
                        last_good: Some(ckpt_path),
                    });
                }
                Err(e) => return Err(e.into()),
            };
        let nb = batch.len() as f64;
        let row = [
            report.loss,
            reward_sum / n_cand as f64,
            psnr_sum / n_cand as f64,
            abs_adv / nb,
            degenerate / nb,
            report.grad_norm,
        ];
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
        acc_n += 1;
        let step = it + 1;
        if step % cfg.log_interval == 0 || step == cfg.gdpo.iterations {
            let means: Vec<f64> = acc.iter().map(|a| a / acc_n as f64).collect();
            info!("gdpo step {step}: loss {:.5}, candidate PSNR {:.3} dB", means[0], means[2]);
            log.push(vec![step.to_string()], means)?;
            acc = [0.0; 6];
            acc_n = 0;
        }
    }
    save_checkpoint(&Checkpoint::new(&policy, Some(&opt), cfg.gdpo.iterations as u64, &schedule, digest), &ckpt_path)?;
    write_rows(&log_path, &log)?;
    Ok(GdpoOutcome { checkpoint: ckpt_path, log_path, policy, log })
}
