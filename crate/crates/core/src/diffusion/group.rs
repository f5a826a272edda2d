use crate::imagecore::{bicubic_upsample, Image};
use crate::numcore::{derive_seed, gaussian_tensor, seeded_rng, Tensor};

use super::{infer_factor, restore_upsampled, DiffusionError, DiffusionSchedule, NAOSDConfig, NoisePredictor};

/// One LR input, its HR reference, and `G` restorations with the noise
/// draws (and their seeds) that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGroup {
    pub lr: Image,
    pub hr: Image,
    pub z_lr: Tensor,
    pub candidates: Vec<Image>,
    pub noises: Vec<Tensor>,
    pub seeds: Vec<u64>,
    /// Candidate identifiers, used to look up externally computed scores.
    pub ids: Vec<String>,
}

impl CandidateGroup {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Restores `lr` under `g` independent noise draws. Draw `i` is seeded with
/// `derive_seed(base_seed, i)`, so the first candidates do not depend on `g`.
#[allow(clippy::too_many_arguments)]
pub fn sample_group(
    model: &dyn NoisePredictor,
    lr: &Image,
    hr: &Image,
    cfg: NAOSDConfig,
    schedule: &DiffusionSchedule,
    g: usize,
    base_seed: u64,
    id_prefix: &str,
) -> Result<CandidateGroup, DiffusionError> {
    if g < 2 {
        return Err(DiffusionError::Config(format!("group size must be at least 2, got {g}")));
    }
    let hr_shape = [hr.channels(), hr.height(), hr.width()];
    let factor = infer_factor(lr, &hr_shape)?;
    let z_lr = bicubic_upsample(lr, factor)?.to_tensor();
    let mut candidates = Vec::with_capacity(g);
    let mut noises = Vec::with_capacity(g);
    let mut seeds = Vec::with_capacity(g);
    for i in 0..g {
        let seed = derive_seed(base_seed, i as u64);
        let eps = gaussian_tensor(&hr_shape, &mut seeded_rng(seed));
        let r = restore_upsampled(model, &z_lr, cfg, schedule, &eps)?;
        candidates.push(r.sr);
        noises.push(eps);
        seeds.push(seed);
    }
    let ids = (0..g).map(|i| format!("{id_prefix}{i}")).collect();
    Ok(CandidateGroup { lr: lr.clone(), hr: hr.clone(), z_lr, candidates, noises, seeds, ids })
}
