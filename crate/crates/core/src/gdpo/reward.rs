use std::collections::BTreeMap;

use crate::imagecore::{gradient_richness, laplacian_variance, psnr, ssim, Image, Orientation, PatchGrid, RegionMap};

use super::{CandidateGroup, GdpoError};

/// `(s − min)/(max − min)` after flipping lower-is-better scores; an
/// all-equal input maps to 0.5 everywhere.
pub fn minmax_normalize(scores: &[f64], orientation: Orientation) -> Vec<f64> {
    let oriented: Vec<f64> = match orientation {
        Orientation::HigherIsBetter => scores.to_vec(),
        Orientation::LowerIsBetter => scores.iter().map(|s| -s).collect(),
    };
    let min = oriented.iter().copied().fold(f64::INFINITY, f64::min);
    let max = oriented.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.5; scores.len()];
    }
    oriented.iter().map(|s| (s - min) / range).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrMetric {
    Psnr,
    Ssim,
}

impl FrMetric {
    pub fn name(self) -> &'static str {
        match self {
            FrMetric::Psnr => "psnr",
            FrMetric::Ssim => "ssim",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "psnr" => Some(FrMetric::Psnr),
            "ssim" => Some(FrMetric::Ssim),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NrMetric {
    Sharpness,
    Richness,
    /// Looked up by candidate id in the registry's external score table.
    External(String),
}

impl NrMetric {
    pub fn name(&self) -> String {
        match self {
            NrMetric::Sharpness => "sharpness".into(),
            NrMetric::Richness => "richness".into(),
            NrMetric::External(id) => format!("ext:{id}"),
        }
    }

    /// `sharpness`, `richness`, or `ext:<metric id>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sharpness" => Some(NrMetric::Sharpness),
            "richness" => Some(NrMetric::Richness),
            _ => s.strip_prefix("ext:").filter(|m| !m.is_empty()).map(|m| NrMetric::External(m.to_string())),
        }
    }
}

/// Scores computed outside this crate, keyed by `(image id, metric id)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExternalScores {
    entries: BTreeMap<(String, String), (f64, Orientation)>,
}

impl ExternalScores {
    pub fn insert(
        &mut self,
        image_id: &str,
        metric_id: &str,
        value: f64,
        orientation: Orientation,
    ) -> Result<(), GdpoError> {
        if !value.is_finite() {
            return Err(GdpoError::Config(format!("non-finite score for ({image_id}, {metric_id})")));
        }
        let key = (image_id.to_string(), metric_id.to_string());
        if self.entries.contains_key(&key) {
            return Err(GdpoError::Config(format!("duplicate score for ({image_id}, {metric_id})")));
        }
        self.entries.insert(key, (value, orientation));
        Ok(())
    }

    pub fn get(&self, image_id: &str, metric_id: &str) -> Result<(f64, Orientation), GdpoError> {
        self.entries
            .get(&(image_id.to_string(), metric_id.to_string()))
            .copied()
            .ok_or_else(|| GdpoError::MissingScore { image_id: image_id.into(), metric_id: metric_id.into() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64, Orientation)> {
        self.entries.iter().map(|((i, m), (v, o))| (i.as_str(), m.as_str(), *v, *o))
    }
}

/// How the FR and NR means are mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RewardMode {
    /// Region-adaptive proportions from the HR reference.
    #[default]
    Arf,
    FrOnly,
    NrOnly,
    /// Fixed 0.5 / 0.5.
    NoAdaptiveWeighting,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Arf => "arf",
            RewardMode::FrOnly => "fr-only",
            RewardMode::NrOnly => "nr-only",
            RewardMode::NoAdaptiveWeighting => "no-aw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arf" => Some(RewardMode::Arf),
            "fr-only" => Some(RewardMode::FrOnly),
            "nr-only" => Some(RewardMode::NrOnly),
            "no-aw" => Some(RewardMode::NoAdaptiveWeighting),
            _ => None,
        }
    }

    fn weights(self, region: &RegionMap) -> (f64, f64) {
        match self {
            RewardMode::Arf => (region.rho_s, region.rho_d),
            RewardMode::FrOnly => (1.0, 0.0),
            RewardMode::NrOnly => (0.0, 1.0),
            RewardMode::NoAdaptiveWeighting => (0.5, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRegistry {
    pub fr: Vec<FrMetric>,
    pub nr: Vec<NrMetric>,
    pub mode: RewardMode,
    /// Patch grid for the richness proxy.
    pub grid: PatchGrid,
    pub external: ExternalScores,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self {
            fr: vec![FrMetric::Psnr],
            nr: vec![NrMetric::Sharpness, NrMetric::Richness],
            mode: RewardMode::Arf,
            grid: PatchGrid::default(),
            external: ExternalScores::default(),
        }
    }
}

/// Raw scores of one metric over a set of candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricColumn {
    pub metric: String,
    pub orientation: Orientation,
    pub values: Vec<f64>,
}

impl MetricColumn {
    pub fn normalized(&self) -> Vec<f64> {
        minmax_normalize(&self.values, self.orientation)
    }
}

impl MetricRegistry {
    pub fn validate(&self) -> Result<(), GdpoError> {
        if self.fr.is_empty() && self.mode != RewardMode::NrOnly {
            return Err(GdpoError::Config("reward registry has no full-reference metric".into()));
        }
        if self.nr.is_empty() && self.mode != RewardMode::FrOnly {
            return Err(GdpoError::Config("reward registry has no no-reference metric".into()));
        }
        Ok(())
    }

    pub fn score_fr(&self, candidates: &[Image], hr: &Image) -> Result<Vec<MetricColumn>, GdpoError> {
        self.fr
            .iter()
            .map(|&m| {
                let values = candidates
                    .iter()
                    .map(|c| match m {
                        FrMetric::Psnr => psnr(c, hr),
                        FrMetric::Ssim => ssim(c, hr),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(MetricColumn { metric: m.name().into(), orientation: Orientation::HigherIsBetter, values })
            })
            .collect()
    }

    pub fn score_nr(&self, candidates: &[Image], ids: &[String]) -> Result<Vec<MetricColumn>, GdpoError> {
        if ids.len() != candidates.len() {
            return Err(GdpoError::Config(format!("{} ids for {} candidates", ids.len(), candidates.len())));
        }
        self.nr
            .iter()
            .map(|m| {
                let mut orientation = Orientation::HigherIsBetter;
                let mut values = Vec::with_capacity(candidates.len());
                for (c, id) in candidates.iter().zip(ids) {
                    values.push(match m {
                        NrMetric::Sharpness => laplacian_variance(c),
                        NrMetric::Richness => gradient_richness(c, self.grid)?,
                        NrMetric::External(metric) => {
                            let (v, o) = self.external.get(id, metric)?;
                            if values.is_empty() {
                                orientation = o;
                            } else if o != orientation {
                                return Err(GdpoError::Config(format!("metric {metric} mixes orientations")));
                            }
                            v
                        }
                    });
                }
                Ok(MetricColumn { metric: m.name(), orientation, values })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub fr_mean: Vec<f64>,
    pub nr_mean: Vec<f64>,
    pub reward: Vec<f64>,
    pub rho_s: f64,
    pub rho_d: f64,
    pub fr: Vec<MetricColumn>,
    pub nr: Vec<MetricColumn>,
}

fn column_mean(columns: &[MetricColumn], n: usize) -> Vec<f64> {
    if columns.is_empty() {
        return vec![0.0; n];
    }
    let normalized: Vec<Vec<f64>> = columns.iter().map(MetricColumn::normalized).collect();
    (0..n).map(|i| normalized.iter().map(|c| c[i]).sum::<f64>() / columns.len() as f64).collect()
}

/// `R_i = ρ_s · mean_FR(normalized) + ρ_d · mean_NR(normalized)` from raw
/// score columns.
pub fn combine_rewards(fr: Vec<MetricColumn>, nr: Vec<MetricColumn>, rho_s: f64, rho_d: f64) -> RewardBreakdown {
    let n = fr.first().or(nr.first()).map_or(0, |c| c.values.len());
    let fr_mean = column_mean(&fr, n);
    let nr_mean = column_mean(&nr, n);
    let reward = fr_mean.iter().zip(&nr_mean).map(|(f, d)| rho_s * f + rho_d * d).collect();
    RewardBreakdown { fr_mean, nr_mean, reward, rho_s, rho_d, fr, nr }
}

/// Scores arbitrary candidates against `hr` with min–max normalization
/// across exactly this candidate set.
pub fn reward_candidates(
    candidates: &[Image],
    ids: &[String],
    hr: &Image,
    region: &RegionMap,
    registry: &MetricRegistry,
) -> Result<RewardBreakdown, GdpoError> {
    registry.validate()?;
    let (rho_s, rho_d) = registry.mode.weights(region);
    let fr = if registry.mode != RewardMode::NrOnly { registry.score_fr(candidates, hr)? } else { vec![] };
    let nr = if registry.mode != RewardMode::FrOnly { registry.score_nr(candidates, ids)? } else { vec![] };
    Ok(combine_rewards(fr, nr, rho_s, rho_d))
}

/// Attribute-aware reward of every candidate in `group`; `region` should
/// be computed on the group's HR reference.
pub fn arf_reward(
    group: &CandidateGroup,
    region: &RegionMap,
    registry: &MetricRegistry,
) -> Result<RewardBreakdown, GdpoError> {
    if group.len() < 2 {
        return Err(GdpoError::Config(format!("group of {} candidates, need at least 2", group.len())));
    }
    reward_candidates(&group.candidates, &group.ids, &group.hr, region, registry)
}
