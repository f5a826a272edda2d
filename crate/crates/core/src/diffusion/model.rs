use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numcore::{Tape, Tensor, Var};

use super::{DiffusionError, DiffusionSchedule, NAOSDConfig};

/// Layer layout of the convolutional noise predictor.
///
/// The input is the noisy image stacked with the upsampled LR conditioning
/// (`2·channels` planes). Each hidden layer is a `kernel × kernel` convolution
/// plus a timestep bias projected from a fixed sinusoidal embedding, followed
/// by a leaky rectifier. An output convolution maps back to `channels`, and a
/// learnable 1×1 linear skip from the input is added on top. With no hidden
/// layers only the skip remains.
///
/// Under [`Prediction::Sample`] that network output is read as a clean-image
/// estimate `D` and converted to `ε̂ = (x_t − √α_t·D)/√β_t` with the attached
/// schedule, so the noise scale at each timestep comes from the schedule
/// rather than from the weights.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub embed_dim: usize,
    pub prediction: Prediction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Prediction {
    /// The network output is `ε̂` directly.
    Noise,
    /// The network output is a clean-image estimate.
    #[default]
    Sample,
}

impl Prediction {
    pub fn name(self) -> &'static str {
        match self {
            Prediction::Noise => "noise",
            Prediction::Sample => "sample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "noise" | "eps" => Some(Prediction::Noise),
            "sample" | "x0" => Some(Prediction::Sample),
            _ => None,
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Default for Architecture {
    fn default() -> Self {
        Self { channels: 1, hidden: vec![32, 32, 32], kernel: 5, embed_dim: 16, prediction: Prediction::Sample }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.channels != 1 && self.channels != 3 {
            return Err(DiffusionError::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(DiffusionError::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.hidden.contains(&0) || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(DiffusionError::Config("hidden widths must be positive and embed_dim even".into()));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let spec = |name: String, shape: Vec<usize>| ParamSpec { name, shape };
        let k = self.kernel;
        let mut out = Vec::new();
        let mut in_ch = 2 * self.channels;
        for (l, &w) in self.hidden.iter().enumerate() {
            out.push(spec(format!("conv{l}.weight"), vec![w, in_ch, k, k]));
            out.push(spec(format!("conv{l}.bias"), vec![w]));
            out.push(spec(format!("time{l}.weight"), vec![w, self.embed_dim, 1, 1]));
            in_ch = w;
        }
        if !self.hidden.is_empty() {
            out.push(spec("out.weight".into(), vec![self.channels, in_ch, k, k]));
            out.push(spec("out.bias".into(), vec![self.channels]));
        }
        out.push(spec("skip.weight".into(), vec![self.channels, 2 * self.channels, 1, 1]));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Compact textual form, e.g. `c1-h32.32.32-k5-e16-x0`; noise prediction
    /// drops the last part.
    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let base = format!("c{}-h{}-k{}-e{}", self.channels, hidden.join("."), self.kernel, self.embed_dim);
        match self.prediction {
            Prediction::Noise => base,
            Prediction::Sample => base + "-x0",
        }
    }

    pub fn parse_descriptor(s: &str) -> Result<Self, DiffusionError> {
        let bad = || DiffusionError::Config(format!("malformed architecture descriptor {s:?}"));
        let parts: Vec<&str> = s.split('-').collect();
        let prediction = match parts.get(4) {
            None => Prediction::Noise,
            Some(&"x0") => Prediction::Sample,
            Some(_) => return Err(bad()),
        };
        if parts.len() > 5 || parts.len() < 4 {
            return Err(bad());
        }
        let num = |p: &str, prefix: char| -> Result<usize, DiffusionError> {
            p.strip_prefix(prefix).and_then(|v| v.parse().ok()).ok_or_else(bad)
        };
        let hidden_str = parts[1].strip_prefix('h').ok_or_else(bad)?;
        let hidden = if hidden_str.is_empty() {
            vec![]
        } else {
            hidden_str.split('.').map(|v| v.parse().map_err(|_| bad())).collect::<Result<_, _>>()?
        };
        let arch = Self {
            channels: num(parts[0], 'c')?,
            hidden,
            kernel: num(parts[2], 'k')?,
            embed_dim: num(parts[3], 'e')?,
            prediction,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Fixed sinusoidal embedding of a timestep, shape `[dim, 1, 1]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        data.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        data.push((t as f64 * freq).cos());
    }
    Tensor::new(vec![dim, 1, 1], data).expect("finite embedding")
}

/// Convolutional ε-predictor; used both as the trainable policy and as the
/// frozen reference. Sample-predicting architectures need a schedule
/// attached with [`DenoiserModel::with_schedule`] before the first forward
/// pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    arch: Architecture,
    params: Vec<Tensor>,
    schedule: Option<DiffusionSchedule>,
}

impl DenoiserModel {
    /// Normal hidden convolutions with variance `1/fan_in`, a down-scaled
    /// output layer, small timestep projections and a zero skip.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let params = arch
            .param_specs()
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let fan_in: usize = spec.shape[1..].iter().product::<usize>().max(1);
                let std = if spec.name.ends_with(".bias") || spec.name.starts_with("skip") {
                    0.0
                } else if spec.name.starts_with("time") {
                    0.1 / (fan_in as f64).sqrt()
                } else if spec.name.starts_with("out") {
                    0.1 * (1.0 / fan_in as f64).sqrt()
                } else {
                    (1.0 / fan_in as f64).sqrt()
                };
                let data = if std == 0.0 {
                    vec![0.0; n]
                } else {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(rng)).collect()
                };
                Tensor::new(spec.shape.clone(), data).expect("finite init")
            })
            .collect();
        Ok(Self { arch, params, schedule: None })
    }

    /// Attaches the schedule used to turn a sample estimate into `ε̂`.
    pub fn with_schedule(mut self, schedule: DiffusionSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn schedule(&self) -> Option<&DiffusionSchedule> {
        self.schedule.as_ref()
    }

    /// Sets the 1×1 skip so that, with the rest of the network silent, the
    /// one-step restoration at `cfg` returns the upsampled conditioning
    /// exactly. The hidden path then only has to learn a residual.
    pub fn set_passthrough_skip(
        &mut self,
        cfg: NAOSDConfig,
        schedule: &DiffusionSchedule,
    ) -> Result<(), DiffusionError> {
        cfg.validate(schedule)?;
        let (sa, sb) = (schedule.alpha(cfg.t_diff).sqrt(), schedule.beta(cfg.t_diff).sqrt());
        let (noisy, cond) = match self.arch.prediction {
            Prediction::Noise => (1.0 / sb, -sa / sb),
            Prediction::Sample => (0.0, 1.0),
        };
        let c = self.arch.channels;
        let skip = self.params.last_mut().expect("skip block");
        let data = skip.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        for ch in 0..c {
            data[ch * 2 * c + ch] = noisy;
            data[ch * 2 * c + c + ch] = cond;
        }
        Ok(())
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let specs = arch.param_specs();
        if specs.len() != params.len() || specs.iter().zip(&params).any(|(s, p)| s.shape != p.shape()) {
            return Err(DiffusionError::Config(format!(
                "parameter blocks do not match architecture {}",
                arch.descriptor()
            )));
        }
        Ok(Self { arch, params, schedule: None })
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self, DiffusionError> {
        arch.validate()?;
        if flat.len() != arch.num_params() {
            return Err(DiffusionError::Config(format!(
                "{} parameters supplied, architecture {} needs {}",
                flat.len(),
                arch.descriptor(),
                arch.num_params()
            )));
        }
        let mut offset = 0;
        let mut params = Vec::new();
        for spec in arch.param_specs() {
            let n: usize = spec.shape.iter().product();
            params.push(Tensor::new(spec.shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self { arch, params, schedule: None })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.arch.param_specs().into_iter().map(|s| s.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    /// Registers every parameter block as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Registers parameters as constants (no gradient).
    pub fn register_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Builds `ε̂ = model(input, t)` on `tape`; `input` is `[2C, H, W]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var, t: usize) -> Result<Var, DiffusionError> {
        let expected = 2 * self.arch.channels;
        let shape = tape.value(input)?.shape().to_vec();
        if shape.len() != 3 || shape[0] != expected {
            return Err(DiffusionError::Shape(format!("denoiser input {shape:?}, expected [{expected}, H, W]")));
        }
        let coeffs = match self.arch.prediction {
            Prediction::Noise => None,
            Prediction::Sample => {
                let schedule = self
                    .schedule
                    .as_ref()
                    .ok_or_else(|| DiffusionError::Config("sample-predicting model has no schedule attached".into()))?;
                schedule.check(t)?;
                Some((schedule.alpha(t).sqrt(), schedule.beta(t).sqrt()))
            }
        };
        let embed = tape.constant(timestep_embedding(t, self.arch.embed_dim));
        let mut p = params.iter().copied();
        let mut next = || p.next().ok_or_else(|| DiffusionError::Shape("missing parameter block".into()));
        let mut h = input;
        for _ in &self.arch.hidden {
            let (w, b, tw) = (next()?, next()?, next()?);
            h = tape.conv2d(h, w, Some(b))?;
            let tb = tape.conv2d(embed, tw, None)?;
            h = tape.channel_bias(h, tb)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let skip_w = if self.arch.hidden.is_empty() {
            next()?
        } else {
            let (w, b) = (next()?, next()?);
            h = tape.conv2d(h, w, Some(b))?;
            next()?
        };
        let skip = tape.conv2d(input, skip_w, None)?;
        let out = if self.arch.hidden.is_empty() { skip } else { tape.add(h, skip)? };
        let Some((sa, sb)) = coeffs else { return Ok(out) };
        let c = self.arch.channels;
        let mut select = Tensor::zeros(&[c, 2 * c, 1, 1]);
        for ch in 0..c {
            select.data_mut()[ch * 2 * c + ch] = 1.0;
        }
        let select = tape.constant(select);
        let x_t = tape.conv2d(input, select, None)?;
        let x_t = tape.scale(x_t, 1.0 / sb)?;
        let d = tape.scale(out, -sa / sb)?;
        Ok(tape.add(x_t, d)?)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: &Tensor, t: usize) -> Result<Tensor, DiffusionError> {
        let mut tape = Tape::new();
        let params = self.register_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &params, x, t)?;
        Ok(tape.value(out)?.clone())
    }
}
