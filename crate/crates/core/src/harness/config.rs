use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diffusion::{
    build_schedule, Architecture, DiffusionSchedule, NAOSDConfig, Prediction, PretrainConfig, VarianceSpec,
};
use crate::gdpo::{FrMetric, GdpoConfig, MetricRegistry, NrMetric, RewardMode};
use crate::imagecore::{DegradationConfig, PatchGrid};

use super::HarnessError;

pub const OUTPUT_ROOT_ENV: &str = "GDPO_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Synthesize,
    Pretrain,
    Gdpo,
    Eval,
    ScoreGroup,
    Regions,
    Diversity,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Synthesize => "synthesize",
            Mode::Pretrain => "pretrain",
            Mode::Gdpo => "gdpo",
            Mode::Eval => "eval",
            Mode::ScoreGroup => "score-group",
            Mode::Regions => "regions",
            Mode::Diversity => "diversity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::Synthesize, Mode::Pretrain, Mode::Gdpo, Mode::Eval, Mode::ScoreGroup, Mode::Regions, Mode::Diversity]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Everything a run needs. Built from defaults, then a `key = value` file,
/// then command-line overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_dir: PathBuf,
    pub source_dir: Option<PathBuf>,
    pub train_count: usize,
    pub holdout_count: usize,
    pub hr_size: usize,
    pub degradation: DegradationConfig,
    pub timesteps: usize,
    pub variance: VarianceSpec,
    pub naosd: NAOSDConfig,
    pub arch: Architecture,
    pub pretrain: PretrainConfig,
    pub pretrain_crop: usize,
    pub gdpo: GdpoConfig,
    pub gdpo_crop: usize,
    pub reward_mode: RewardMode,
    pub fr_metrics: Vec<FrMetric>,
    pub nr_metrics: Vec<NrMetric>,
    pub entropy_tau: f64,
    pub grid: PatchGrid,
    pub external_scores: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub log_interval: usize,
    pub eval_draws: usize,
    pub diversity_pairs: Vec<(usize, usize)>,
    pub diversity_draws: usize,
    pub diversity_oracle: bool,
    pub image: Option<PathBuf>,
    pub hr_image: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pretrain,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data"),
            source_dir: None,
            train_count: 100,
            holdout_count: 16,
            hr_size: 64,
            degradation: DegradationConfig::default(),
            timesteps: 1000,
            variance: VarianceSpec::default(),
            naosd: NAOSDConfig::default(),
            arch: Architecture::default(),
            pretrain: PretrainConfig::default(),
            pretrain_crop: 32,
            gdpo: GdpoConfig::default(),
            gdpo_crop: 32,
            reward_mode: RewardMode::Arf,
            fr_metrics: vec![FrMetric::Psnr],
            nr_metrics: vec![NrMetric::Sharpness, NrMetric::Richness],
            entropy_tau: 2.5,
            grid: PatchGrid::default(),
            external_scores: None,
            checkpoint: None,
            baseline_checkpoint: None,
            log_interval: 100,
            eval_draws: 6,
            diversity_pairs: vec![(100, 100), (250, 100), (250, 250), (500, 500)],
            diversity_draws: 50,
            diversity_oracle: false,
            image: None,
            hr_image: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, String> {
    value.trim().parse().map_err(|_| format!("expected {what}, got {value:?}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Applies one `key = value` assignment; `-` and `_` are interchangeable
    /// in keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "mode" => self.mode = Mode::parse(v).ok_or_else(|| format!("unknown mode {v:?}"))?,
            "seed" => self.seed = parse_num(v, "an unsigned integer")?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "data_dir" => self.data_dir = PathBuf::from(v),
            "source_dir" => self.source_dir = opt_path(v),
            "train_count" => self.train_count = parse_num(v, "a count")?,
            "holdout_count" => self.holdout_count = parse_num(v, "a count")?,
            "hr_size" => self.hr_size = parse_num(v, "a size")?,
            "blur_sigma" => self.degradation.blur_sigma = parse_num(v, "a real")?,
            "scale" => self.degradation.factor = parse_num(v, "an integer factor")?,
            "noise_sigma" => self.degradation.noise_sigma = parse_num(v, "a real")?,
            "quantization_levels" => {
                let levels: u32 = parse_num(v, "a level count (0 for none)")?;
                self.degradation.quantization_levels = (levels > 0).then_some(levels);
            }
            "timesteps" => self.timesteps = parse_num(v, "a timestep count")?,
            "beta_start" => {
                let VarianceSpec::Linear { end, .. } = self.variance;
                self.variance = VarianceSpec::Linear { start: parse_num(v, "a real")?, end };
            }
            "beta_end" => {
                let VarianceSpec::Linear { start, .. } = self.variance;
                self.variance = VarianceSpec::Linear { start, end: parse_num(v, "a real")? };
            }
            "t_add" => self.naosd.t_add = parse_num(v, "a timestep")?,
            "t_diff" => self.naosd.t_diff = parse_num(v, "a timestep")?,
            "channels" => self.arch.channels = parse_num(v, "1 or 3")?,
            "hidden" => self.arch.hidden = parse_list(v, |s| parse_num(s, "a layer width"))?,
            "kernel" => self.arch.kernel = parse_num(v, "an odd kernel size")?,
            "embed_dim" => self.arch.embed_dim = parse_num(v, "an even embedding size")?,
            "prediction" => {
                self.arch.prediction = Prediction::parse(v).ok_or_else(|| format!("unknown prediction target {v:?}"))?
            }
            "lambda1" => self.pretrain.lambda1 = parse_num(v, "a real")?,
            "lambda2" => self.pretrain.lambda2 = parse_num(v, "a real")?,
            "pretrain_iterations" => self.pretrain.iterations = parse_num(v, "a count")?,
            "pretrain_batch" => self.pretrain.batch_size = parse_num(v, "a count")?,
            "pretrain_lr" => self.pretrain.learning_rate = parse_num(v, "a real")?,
            "pretrain_crop" => self.pretrain_crop = parse_num(v, "a size")?,
            "omega" => self.gdpo.omega = parse_num(v, "a real")?,
            "group_size" => self.gdpo.group_size = parse_num(v, "a count")?,
            "t_lo" => self.gdpo.t_lo = parse_num(v, "a timestep")?,
            "t_hi" => self.gdpo.t_hi = parse_num(v, "a timestep")?,
            "gdpo_lr" => self.gdpo.learning_rate = parse_num(v, "a real")?,
            "gdpo_iterations" => self.gdpo.iterations = parse_num(v, "a count")?,
            "gdpo_batch" => self.gdpo.batch_size = parse_num(v, "a count")?,
            "gdpo_crop" => self.gdpo_crop = parse_num(v, "a size")?,
            "shared_noise" => self.gdpo.shared_noise = parse_bool(v)?,
            "reward_mode" => {
                self.reward_mode = RewardMode::parse(v).ok_or_else(|| format!("unknown reward mode {v:?}"))?
            }
            "fr_metrics" => {
                self.fr_metrics =
                    parse_list(v, |s| FrMetric::parse(s).ok_or_else(|| format!("unknown FR metric {s:?}")))?
            }
            "nr_metrics" => {
                self.nr_metrics =
                    parse_list(v, |s| NrMetric::parse(s).ok_or_else(|| format!("unknown NR metric {s:?}")))?
            }
            "entropy_tau" => self.entropy_tau = parse_num(v, "a real")?,
            "grid_rows" => self.grid.rows = parse_num(v, "a count")?,
            "grid_cols" => self.grid.cols = parse_num(v, "a count")?,
            "external_scores" => self.external_scores = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "baseline_checkpoint" => self.baseline_checkpoint = opt_path(v),
            "log_interval" => self.log_interval = parse_num(v, "a count")?,
            "eval_draws" => self.eval_draws = parse_num(v, "a count")?,
            "diversity_pairs" => {
                self.diversity_pairs = parse_list(v, |s| {
                    let (a, d) = s.split_once(':').ok_or_else(|| format!("expected t_add:t_diff, got {s:?}"))?;
                    Ok((parse_num(a, "a timestep")?, parse_num(d, "a timestep")?))
                })?
            }
            "diversity_draws" => self.diversity_draws = parse_num(v, "a count")?,
            "diversity_oracle" => self.diversity_oracle = parse_bool(v)?,
            "image" => self.image = opt_path(v),
            "hr_image" => self.hr_image = opt_path(v),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Canonical `key = value` dump; parsing it back yields the same config.
    pub fn canonical(&self) -> String {
        let VarianceSpec::Linear { start, end } = self.variance;
        let d = &self.degradation;
        let entries: Vec<(&str, String)> = vec![
            ("mode", self.mode.name().into()),
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("source_dir", path_str(&self.source_dir)),
            ("train_count", self.train_count.to_string()),
            ("holdout_count", self.holdout_count.to_string()),
            ("hr_size", self.hr_size.to_string()),
            ("blur_sigma", d.blur_sigma.to_string()),
            ("scale", d.factor.to_string()),
            ("noise_sigma", d.noise_sigma.to_string()),
            ("quantization_levels", d.quantization_levels.unwrap_or(0).to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("beta_start", start.to_string()),
            ("beta_end", end.to_string()),
            ("t_add", self.naosd.t_add.to_string()),
            ("t_diff", self.naosd.t_diff.to_string()),
            ("channels", self.arch.channels.to_string()),
            ("hidden", join(&self.arch.hidden, |w| w.to_string())),
            ("kernel", self.arch.kernel.to_string()),
            ("embed_dim", self.arch.embed_dim.to_string()),
            ("prediction", self.arch.prediction.name().to_string()),
            ("lambda1", self.pretrain.lambda1.to_string()),
            ("lambda2", self.pretrain.lambda2.to_string()),
            ("pretrain_iterations", self.pretrain.iterations.to_string()),
            ("pretrain_batch", self.pretrain.batch_size.to_string()),
            ("pretrain_lr", self.pretrain.learning_rate.to_string()),
            ("pretrain_crop", self.pretrain_crop.to_string()),
            ("omega", self.gdpo.omega.to_string()),
            ("group_size", self.gdpo.group_size.to_string()),
            ("t_lo", self.gdpo.t_lo.to_string()),
            ("t_hi", self.gdpo.t_hi.to_string()),
            ("gdpo_lr", self.gdpo.learning_rate.to_string()),
            ("gdpo_iterations", self.gdpo.iterations.to_string()),
            ("gdpo_batch", self.gdpo.batch_size.to_string()),
            ("gdpo_crop", self.gdpo_crop.to_string()),
            ("shared_noise", self.gdpo.shared_noise.to_string()),
            ("reward_mode", self.reward_mode.name().into()),
            ("fr_metrics", join(&self.fr_metrics, |m| m.name().into())),
            ("nr_metrics", join(&self.nr_metrics, |m| m.name())),
            ("entropy_tau", self.entropy_tau.to_string()),
            ("grid_rows", self.grid.rows.to_string()),
            ("grid_cols", self.grid.cols.to_string()),
            ("external_scores", path_str(&self.external_scores)),
            ("checkpoint", path_str(&self.checkpoint)),
            ("baseline_checkpoint", path_str(&self.baseline_checkpoint)),
            ("log_interval", self.log_interval.to_string()),
            ("eval_draws", self.eval_draws.to_string()),
            ("diversity_pairs", join(&self.diversity_pairs, |(a, d)| format!("{a}:{d}"))),
            ("diversity_draws", self.diversity_draws.to_string()),
            ("diversity_oracle", self.diversity_oracle.to_string()),
            ("image", path_str(&self.image)),
            ("hr_image", path_str(&self.hr_image)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule, HarnessError> {
        Ok(build_schedule(self.timesteps, self.variance)?)
    }

    pub fn registry(&self) -> MetricRegistry {
        MetricRegistry {
            fr: self.fr_metrics.clone(),
            nr: self.nr_metrics.clone(),
            mode: self.reward_mode,
            grid: self.grid,
            external: Default::default(),
        }
    }

    /// Checks every sub-config invariant.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &str, message: String| HarnessError::Config { line: None, key: key.into(), message };
        self.degradation.validate().map_err(|e| bad("scale", e.to_string()))?;
        let schedule = self.schedule().map_err(|e| bad("timesteps", e.to_string()))?;
        self.naosd.validate(&schedule).map_err(|e| bad("t_add", e.to_string()))?;
        self.arch.validate().map_err(|e| bad("hidden", e.to_string()))?;
        self.pretrain.validate().map_err(|e| bad("pretrain_lr", e.to_string()))?;
        if self.gdpo.group_size < 2 {
            return Err(bad("group_size", format!("must be at least 2, got {}", self.gdpo.group_size)));
        }
        self.gdpo.validate(&schedule).map_err(|e| bad("omega", e.to_string()))?;
        self.registry().validate().map_err(|e| bad("nr_metrics", e.to_string()))?;
        let f = self.degradation.factor;
        if self.hr_size == 0 || !self.hr_size.is_multiple_of(f) {
            return Err(bad("hr_size", format!("{} is not a positive multiple of scale {f}", self.hr_size)));
        }
        for (key, crop) in [("pretrain_crop", self.pretrain_crop), ("gdpo_crop", self.gdpo_crop)] {
            if crop == 0 || crop % f != 0 || crop > self.hr_size {
                return Err(bad(key, format!("{crop} must be a multiple of {f} no larger than hr_size")));
            }
        }
        if !(self.entropy_tau >= 0.0) {
            return Err(bad("entropy_tau", "must be non-negative".into()));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(bad("grid_rows", "patch grid must be non-empty".into()));
        }
        if self.log_interval == 0 {
            return Err(bad("log_interval", "must be positive".into()));
        }
        if self.eval_draws < 1 {
            return Err(bad("eval_draws", "must be at least 1".into()));
        }
        if self.diversity_draws < 2 {
            return Err(bad("diversity_draws", "must be at least 2".into()));
        }
        for &(t_add, t_diff) in &self.diversity_pairs {
            NAOSDConfig { t_add, t_diff }.validate(&schedule).map_err(|e| bad("diversity_pairs", e.to_string()))?;
        }
        if self.arch.channels != 1 && self.source_dir.is_none() {
            return Err(bad("channels", "the procedural generator produces grayscale images".into()));
        }
        Ok(())
    }

    /// Output directory, placed under `$GDPO_OUTPUT_ROOT` when that is set
    /// and the configured path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Paths the selected mode reads must exist.
    pub fn check_paths(&self) -> Result<(), HarnessError> {
        let need = |key: &str, p: &Option<PathBuf>| -> Result<(), HarnessError> {
            match p {
                Some(p) if p.exists() => Ok(()),
                Some(p) => Err(HarnessError::Config {
                    line: None,
                    key: key.into(),
                    message: format!("{} does not exist", p.display()),
                }),
                None => {
                    Err(HarnessError::Config { line: None, key: key.into(), message: "required by this mode".into() })
                }
            }
        };
        match self.mode {
            Mode::Synthesize => {
                if self.source_dir.is_some() {
                    need("source_dir", &self.source_dir)?;
                }
            }
            Mode::Pretrain => {}
            Mode::Gdpo | Mode::Eval | Mode::ScoreGroup => need("checkpoint", &self.checkpoint)?,
            Mode::Regions => need("image", &self.image)?,
            Mode::Diversity => {
                if !self.diversity_oracle {
                    need("checkpoint", &self.checkpoint)?;
                }
            }
        }
        if self.baseline_checkpoint.is_some() {
            need("baseline_checkpoint", &self.baseline_checkpoint)?;
        }
        if self.external_scores.is_some() {
            need("external_scores", &self.external_scores)?;
        }
        Ok(())
    }
}

/// Parses `key = value` lines (with `#` comments) on top of the defaults,
/// then applies `overrides` in order, then validates.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Config {
            line: Some(i + 1),
            key: line.into(),
            message: "expected `key = value`".into(),
        })?;
        cfg.set(key, value).map_err(|message| HarnessError::Config {
            line: Some(i + 1),
            key: key.trim().into(),
            message,
        })?;
    }
    for (key, value) in overrides {
        cfg.set(key, value).map_err(|message| HarnessError::Config { line: None, key: key.clone(), message })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, HarnessError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}
