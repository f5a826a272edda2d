use std::path::{Path, PathBuf};

use crate::diffusion::{
    residual_coefficients, restore_upsampled, sample_group, DenoiserModel, DiffusionSchedule, NAOSDConfig,
    NoisePredictor, PerfectPredictor,
};
use crate::gdpo::{arf_reward, group_advantage, reward_candidates, MetricRegistry};
use crate::imagecore::{
    bicubic_upsample, gradient_richness, laplacian_variance, load_image, partition_regions, psnr, save_image, ssim,
    Image, RegionLabel, RegionMap,
};
use crate::numcore::{derive_seed, gaussian_tensor, label_seed, seeded_rng};

use super::train::{eval_noise, hr_shape, load_model};
use super::{
    create_dir, load_external_scores, load_split, run_gdpo, write_rows, HarnessError, ImagePair, MetricsTable,
    RunConfig, Split,
};

const QUALITY_COLUMNS: [&str; 4] = ["psnr", "ssim", "sharpness", "richness"];

fn quality(sr: &Image, hr: &Image, cfg: &RunConfig) -> Result<[f64; 4], HarnessError> {
    Ok([psnr(sr, hr)?, ssim(sr, hr)?, laplacian_variance(sr), gradient_richness(sr, cfg.grid)?])
}

fn registry_with_scores(cfg: &RunConfig) -> Result<MetricRegistry, HarnessError> {
    let mut registry = cfg.registry();
    if let Some(path) = &cfg.external_scores {
        registry.external = load_external_scores(path)?;
    }
    Ok(registry)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Keys `image_id, model, draw`; one row per output plus `hr` and
    /// `bicubic` control rows.
    pub metrics: MetricsTable,
    /// Keys `image_id, model, draw`; rewards normalized jointly over every
    /// model's draws for the same input.
    pub rewards: MetricsTable,
    /// Keys `model, metric`; corpus means.
    pub summary: MetricsTable,
}

impl EvalReport {
    pub fn mean(&self, model: &str, metric: &str) -> Option<f64> {
        self.summary.get(&[model, metric], "mean")
    }
}

/// Evaluates each named model on the held-out pairs. Draw `d` of image `j`
/// uses the same noise for every model.
pub fn evaluate_models(
    cfg: &RunConfig,
    models: &[(&str, &DenoiserModel)],
    holdout: &[ImagePair],
    schedule: &DiffusionSchedule,
) -> Result<EvalReport, HarnessError> {
    let registry = registry_with_scores(cfg)?;
    let mut metrics = MetricsTable::new(&["image_id", "model", "draw"], &QUALITY_COLUMNS);
    let mut rewards = MetricsTable::new(&["image_id", "model", "draw"], &["reward", "fr_mean", "nr_mean", "advantage"]);
    let n_models = models.len();
    let mut sums = vec![[0.0f64; 5]; n_models];
    let (mut hr_sum, mut bic_sum) = ([0.0f64; 4], [0.0f64; 4]);
    for (j, pair) in holdout.iter().enumerate() {
        let up = bicubic_upsample(&pair.lr, cfg.degradation.factor)?;
        let z_lr = up.to_tensor();
        let mut outputs = Vec::new();
        let mut ids = Vec::new();
        for (name, model) in models {
            for d in 0..cfg.eval_draws {
                let eps = eval_noise(cfg.seed, j, d, &hr_shape(&pair.hr));
                let sr = restore_upsampled(*model, &z_lr, cfg.naosd, schedule, &eps)?.sr;
                outputs.push(sr);
                ids.push(format!("{}/{name}/{d}", pair.id));
            }
        }
        for (k, sr) in outputs.iter().enumerate() {
            let (m, d) = (k / cfg.eval_draws, k % cfg.eval_draws);
            let q = quality(sr, &pair.hr, cfg)?;
            for (s, v) in sums[m].iter_mut().zip(q) {
                *s += v;
            }
            metrics.push(vec![pair.id.clone(), models[m].0.into(), d.to_string()], q.to_vec())?;
        }
        for (name, img, acc) in [("hr", &pair.hr, &mut hr_sum), ("bicubic", &up.clamped(), &mut bic_sum)] {
            let q = quality(img, &pair.hr, cfg)?;
            for (s, v) in acc.iter_mut().zip(q) {
                *s += v;
            }
            metrics.push(vec![pair.id.clone(), name.into(), "0".into()], q.to_vec())?;
        }
        if outputs.len() >= 2 {
            let region = partition_regions(&pair.hr, cfg.entropy_tau, cfg.grid)?;
            let br = reward_candidates(&outputs, &ids, &pair.hr, &region, &registry)?;
            let adv = group_advantage(&br.reward);
            for k in 0..outputs.len() {
                let (m, d) = (k / cfg.eval_draws, k % cfg.eval_draws);
                sums[m][4] += br.reward[k];
                rewards.push(
                    vec![pair.id.clone(), models[m].0.into(), d.to_string()],
                    vec![br.reward[k], br.fr_mean[k], br.nr_mean[k], adv.values[k]],
                )?;
            }
        }
    }
    let mut summary = MetricsTable::new(&["model", "metric"], &["mean"]);
    let n_img = holdout.len().max(1) as f64;
    let per_model = n_img * cfg.eval_draws as f64;
    for (m, (name, _)) in models.iter().enumerate() {
        for (c, col) in QUALITY_COLUMNS.iter().enumerate() {
            summary.push(vec![name.to_string(), col.to_string()], vec![sums[m][c] / per_model])?;
        }
        if !rewards.rows.is_empty() {
            summary.push(vec![name.to_string(), "reward".into()], vec![sums[m][4] / per_model])?;
        }
    }
    for (name, acc) in [("hr", hr_sum), ("bicubic", bic_sum)] {
        for (c, col) in QUALITY_COLUMNS.iter().enumerate() {
            summary.push(vec![name.to_string(), col.to_string()], vec![acc[c] / n_img])?;
        }
    }
    Ok(EvalReport { metrics, rewards, summary })
}

fn write_eval(out: &Path, report: &EvalReport) -> Result<(), HarnessError> {
    create_dir(out)?;
    write_rows(&out.join("eval_metrics.csv"), &report.metrics)?;
    write_rows(&out.join("eval_rewards.csv"), &report.rewards)?;
    write_rows(&out.join("eval_summary.csv"), &report.summary)
}

/// Evaluates `cfg.checkpoint` (as `model`) and, when set,
/// `cfg.baseline_checkpoint` (as `baseline`) on the held-out split.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    cfg.check_paths()?;
    let schedule = cfg.schedule()?;
    let model = load_model(cfg, cfg.checkpoint.as_ref().expect("checked"))?;
    let baseline = cfg.baseline_checkpoint.as_ref().map(|p| load_model(cfg, p)).transpose()?;
    let holdout = load_split(&cfg.data_dir, Split::Holdout)?;
    let mut models: Vec<(&str, &DenoiserModel)> = vec![("model", &model)];
    if let Some(b) = &baseline {
        models.push(("baseline", b));
    }
    let report = evaluate_models(cfg, &models, &holdout, &schedule)?;
    write_eval(&cfg.resolved_output_dir(), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardComparison {
    pub base_reward: f64,
    pub policy_reward: f64,
    pub base_psnr: f64,
    pub policy_psnr: f64,
}

/// Jointly normalized held-out reward of `policy` against `base`.
pub fn compare_rewards(
    cfg: &RunConfig,
    base: &DenoiserModel,
    policy: &DenoiserModel,
    holdout: &[ImagePair],
) -> Result<RewardComparison, HarnessError> {
    let schedule = cfg.schedule()?;
    let r = evaluate_models(cfg, &[("base", base), ("policy", policy)], holdout, &schedule)?;
    let get = |m: &str, k: &str| r.mean(m, k).ok_or_else(|| HarnessError::Csv(format!("no {k} summary for {m}")));
    Ok(RewardComparison {
        base_reward: get("base", "reward")?,
        policy_reward: get("policy", "reward")?,
        base_psnr: get("base", "psnr")?,
        policy_psnr: get("policy", "psnr")?,
    })
}

#[derive(Clone, Debug)]
pub struct DiversityReport {
    /// Keys `image_id, t_add, t_diff, metric`; `image_id = mean` rows hold
    /// corpus averages.
    pub table: MetricsTable,
}

impl DiversityReport {
    pub fn mean_range(&self, t_add: usize, t_diff: usize, metric: &str) -> Option<f64> {
        self.table.get(&["mean", &t_add.to_string(), &t_diff.to_string(), metric], "range")
    }
}

/// Max − min of each quality metric across `diversity_draws` restorations
/// per held-out input, for every configured `(t_add, t_diff)` pair. All pairs
/// share the same noise draws. With `diversity_oracle` the predictor returns
/// the injected noise exactly.
pub fn run_diversity(cfg: &RunConfig) -> Result<DiversityReport, HarnessError> {
    cfg.validate()?;
    cfg.check_paths()?;
    let schedule = cfg.schedule()?;
    let model =
        if cfg.diversity_oracle { None } else { Some(load_model(cfg, cfg.checkpoint.as_ref().expect("checked"))?) };
    let predictor: &dyn NoisePredictor = match &model {
        Some(m) => m,
        None => &PerfectPredictor,
    };
    let holdout = load_split(&cfg.data_dir, Split::Holdout)?;
    let noise_base = label_seed(cfg.seed, "diversity/noise");
    let mut table =
        MetricsTable::new(&["image_id", "t_add", "t_diff", "metric"], &["min", "max", "range", "noise_gain"]);
    let mut means = vec![[[0.0f64; 3]; 4]; cfg.diversity_pairs.len()];
    for (j, pair) in holdout.iter().enumerate() {
        let z_lr = bicubic_upsample(&pair.lr, cfg.degradation.factor)?.to_tensor();
        let base = derive_seed(noise_base, j as u64);
        let draws: Vec<_> = (0..cfg.diversity_draws)
            .map(|d| gaussian_tensor(&hr_shape(&pair.hr), &mut seeded_rng(derive_seed(base, d as u64))))
            .collect();
        for (p, &(t_add, t_diff)) in cfg.diversity_pairs.iter().enumerate() {
            let naosd = NAOSDConfig { t_add, t_diff };
            let gain = residual_coefficients(naosd, &schedule)?.1;
            let mut lo = [f64::INFINITY; 4];
            let mut hi = [f64::NEG_INFINITY; 4];
            for eps in &draws {
                let sr = restore_upsampled(predictor, &z_lr, naosd, &schedule, eps)?.sr;
                for (c, v) in quality(&sr, &pair.hr, cfg)?.into_iter().enumerate() {
                    lo[c] = lo[c].min(v);
                    hi[c] = hi[c].max(v);
                }
            }
            for c in 0..4 {
                let vals = [lo[c], hi[c], hi[c] - lo[c]];
                for (m, v) in means[p][c].iter_mut().zip(vals) {
                    *m += v;
                }
                let keys = vec![pair.id.clone(), t_add.to_string(), t_diff.to_string(), QUALITY_COLUMNS[c].into()];
                table.push(keys, vec![vals[0], vals[1], vals[2], gain])?;
            }
        }
    }
    let n = holdout.len().max(1) as f64;
    for (p, &(t_add, t_diff)) in cfg.diversity_pairs.iter().enumerate() {
        let gain = residual_coefficients(NAOSDConfig { t_add, t_diff }, &schedule)?.1;
        for c in 0..4 {
            let keys = vec!["mean".into(), t_add.to_string(), t_diff.to_string(), QUALITY_COLUMNS[c].into()];
            let m = means[p][c];
            table.push(keys, vec![m[0] / n, m[1] / n, m[2] / n, gain])?;
        }
    }
    let out = cfg.resolved_output_dir();
    create_dir(&out)?;
    write_rows(&out.join("diversity.csv"), &table)?;
    Ok(DiversityReport { table })
}

fn config_path<'a>(cfg: &'a RunConfig, key: &str, p: &'a Option<PathBuf>) -> Result<&'a PathBuf, HarnessError> {
    p.as_ref().ok_or_else(|| HarnessError::Config {
        line: None,
        key: key.into(),
        message: format!("required by {}", cfg.mode.name()),
    })
}

/// Samples and scores one group. The input is `image` (LR) with `hr_image`
/// when both are set, otherwise the first held-out pair. Candidate ids are
/// `<stem>_<i>`; external score files must use the same ids. Writes
/// `score_group.csv` and every candidate image under `candidates/`.
pub fn run_score_group(cfg: &RunConfig) -> Result<MetricsTable, HarnessError> {
    cfg.validate()?;
    cfg.check_paths()?;
    let schedule = cfg.schedule()?;
    let model = load_model(cfg, cfg.checkpoint.as_ref().expect("checked"))?;
    let (stem, lr, hr) = match &cfg.image {
        Some(path) => {
            let hr_path = config_path(cfg, "hr_image", &cfg.hr_image)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            (stem, load_image(path)?, load_image(hr_path)?)
        }
        None => {
            let pair = load_split(&cfg.data_dir, Split::Holdout)?
                .into_iter()
                .next()
                .ok_or_else(|| HarnessError::Io(format!("no held-out pairs under {}", cfg.data_dir.display())))?;
            (pair.id, pair.lr, pair.hr)
        }
    };
    let registry = registry_with_scores(cfg)?;
    let seed = label_seed(cfg.seed, "score-group/noise");
    let group = sample_group(&model, &lr, &hr, cfg.naosd, &schedule, cfg.gdpo.group_size, seed, &format!("{stem}_"))?;
    let region = partition_regions(&hr, cfg.entropy_tau, cfg.grid)?;
    let br = arf_reward(&group, &region, &registry)?;
    let adv = group_advantage(&br.reward);

    let metric_cols: Vec<String> = br.fr.iter().chain(&br.nr).map(|c| c.metric.clone()).collect();
    let mut cols: Vec<&str> = metric_cols.iter().map(String::as_str).collect();
    cols.extend(["fr_mean", "nr_mean", "rho_s", "rho_d", "reward", "advantage"]);
    let mut table = MetricsTable::new(&["candidate_id", "seed"], &cols);
    let out = cfg.resolved_output_dir();
    create_dir(&out.join("candidates"))?;
    for i in 0..group.len() {
        let mut values: Vec<f64> = br.fr.iter().chain(&br.nr).map(|c| c.values[i]).collect();
        values.extend([br.fr_mean[i], br.nr_mean[i], br.rho_s, br.rho_d, br.reward[i], adv.values[i]]);
        table.push(vec![group.ids[i].clone(), group.seeds[i].to_string()], values)?;
        let ext = if hr.channels() == 3 { "ppm" } else { "pgm" };
        save_image(&group.candidates[i], out.join("candidates").join(format!("{}.{ext}", group.ids[i])))?;
    }
    write_rows(&out.join("score_group.csv"), &table)?;
    Ok(table)
}

/// Smooth/detailed partition of `cfg.image`; writes `regions.csv` (one row
/// per patch) and `regions_summary.csv`.
pub fn run_regions(cfg: &RunConfig) -> Result<RegionMap, HarnessError> {
    cfg.validate()?;
    cfg.check_paths()?;
    let path = config_path(cfg, "image", &cfg.image)?;
    let image = load_image(path)?;
    let map = partition_regions(&image, cfg.entropy_tau, cfg.grid)?;
    let mut patches = MetricsTable::new(&["row", "col", "label"], &["entropy", "pixels"]);
    for (k, ((e, l), n)) in map.entropy.iter().zip(&map.labels).zip(&map.patch_pixels).enumerate() {
        let label = match l {
            RegionLabel::Smooth => "smooth",
            RegionLabel::Detailed => "detailed",
        };
        let keys = vec![(k / map.grid.cols).to_string(), (k % map.grid.cols).to_string(), label.into()];
        patches.push(keys, vec![*e, *n as f64])?;
    }
    let mut summary = MetricsTable::new(&["image"], &["rho_s", "rho_d", "tau"]);
    summary.push(vec![path.display().to_string()], vec![map.rho_s, map.rho_d, map.tau])?;
    let out = cfg.resolved_output_dir();
    create_dir(&out)?;
    write_rows(&out.join("regions.csv"), &patches)?;
    write_rows(&out.join("regions_summary.csv"), &summary)?;
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub group_size: usize,
    pub checkpoint: PathBuf,
    pub reward: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub base_reward: f64,
    pub base_psnr: f64,
    pub rows: Vec<AblationRow>,
}

/// Runs GDPO from `cfg.checkpoint` once per group size (outputs under
/// `g<G>/`), then scores the base and every fine-tuned model jointly on the
/// held-out split. Writes `ablation.csv`.
pub fn run_group_size_ablation(cfg: &RunConfig, sizes: &[usize]) -> Result<AblationReport, HarnessError> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    let schedule = cfg.schedule()?;
    let base = load_model(cfg, config_path(cfg, "checkpoint", &cfg.checkpoint)?)?;
    let mut runs = Vec::new();
    for &g in sizes {
        let mut sub = cfg.clone();
        sub.gdpo.group_size = g;
        sub.output_dir = out.join(format!("g{g}"));
        let outcome = run_gdpo(&sub)?;
        runs.push((g, format!("g{g}"), outcome));
    }
    let holdout = load_split(&cfg.data_dir, Split::Holdout)?;
    let mut models: Vec<(&str, &DenoiserModel)> = vec![("base", &base)];
    models.extend(runs.iter().map(|(_, name, o)| (name.as_str(), &o.policy)));
    let report = evaluate_models(cfg, &models, &holdout, &schedule)?;
    let get = |m: &str, k: &str| report.mean(m, k).ok_or_else(|| HarnessError::Csv(format!("no {k} summary for {m}")));
    let mut table = MetricsTable::new(&["model"], &["group_size", "reward", "psnr"]);
    let (base_reward, base_psnr) = (get("base", "reward")?, get("base", "psnr")?);
    table.push(vec!["base".into()], vec![0.0, base_reward, base_psnr])?;
    let mut rows = Vec::new();
    for (g, name, o) in &runs {
        let row = AblationRow {
            group_size: *g,
            checkpoint: o.checkpoint.clone(),
            reward: get(name, "reward")?,
            psnr: get(name, "psnr")?,
        };
        table.push(vec![name.clone()], vec![*g as f64, row.reward, row.psnr])?;
        rows.push(row);
    }
    create_dir(&out)?;
    write_rows(&out.join("ablation.csv"), &table)?;
    Ok(AblationReport { base_reward, base_psnr, rows })
}
