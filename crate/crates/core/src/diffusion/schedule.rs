use super::DiffusionError;

/// Per-step variance ramp the cumulative schedule is built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarianceSpec {
    Linear { start: f64, end: f64 },
}

impl Default for VarianceSpec {
    fn default() -> Self {
        VarianceSpec::Linear { start: 1e-4, end: 0.02 }
    }
}

/// Cumulative signal (`alpha`) and noise (`beta = 1 - alpha`) coefficients,
/// indexed by timestep `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    spec: VarianceSpec,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

pub const DEFAULT_TIMESTEPS: usize = 1000;

pub fn build_schedule(timesteps: usize, spec: VarianceSpec) -> Result<DiffusionSchedule, DiffusionError> {
    if timesteps == 0 {
        return Err(DiffusionError::Config("schedule needs at least one timestep".into()));
    }
    let VarianceSpec::Linear { start, end } = spec;
    if !(start > 0.0 && end >= start && end < 1.0) {
        return Err(DiffusionError::Config(format!("invalid variance ramp {start} -> {end}")));
    }
    let mut alpha = Vec::with_capacity(timesteps);
    let mut prod = 1.0;
    for i in 0..timesteps {
        let step_var = if timesteps == 1 { start } else { start + (end - start) * i as f64 / (timesteps - 1) as f64 };
        prod *= 1.0 - step_var;
        alpha.push(prod);
    }
    let beta = alpha.iter().map(|a| 1.0 - a).collect();
    Ok(DiffusionSchedule { spec, alpha, beta })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_TIMESTEPS, VarianceSpec::default()).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn timesteps(&self) -> usize {
        self.alpha.len()
    }

    pub fn spec(&self) -> VarianceSpec {
        self.spec
    }

    pub fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.timesteps() {
            return Err(DiffusionError::Config(format!("timestep {t} outside 1..={}", self.timesteps())));
        }
        Ok(())
    }

    /// Cumulative signal coefficient at `t` (1-based). Panics out of range.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }
}
