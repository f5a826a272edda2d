use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffusion::{build_schedule, Architecture, DenoiserModel, DiffusionSchedule, VarianceSpec};
use crate::numcore::{AdamW, AdamWConfig, Tensor};

use super::{io_err, HarnessError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDPO";
pub const CHECKPOINT_VERSION: u32 = 1;

const ARCH: &[u8; 4] = b"ARCH";
const PARAMS: &[u8; 4] = b"PARM";
const ADAM: &[u8; 4] = b"ADAM";
const STEP: &[u8; 4] = b"STEP";
const SCHEDULE: &[u8; 4] = b"SCHD";
const DIGEST: &[u8; 4] = b"DGST";

/// Model weights plus everything needed to resume or audit a run.
///
/// Layout (little-endian): magic, u32 version, then sections of
/// `[4-byte tag][u64 length][payload]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub optimizer: Option<AdamW>,
    pub step: u64,
    pub timesteps: usize,
    pub variance: VarianceSpec,
    pub config_digest: [u8; 32],
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend((xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend(x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        if self.buf.len() - self.pos < n {
            return Err(HarnessError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, HarnessError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, HarnessError> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(HarnessError::Checkpoint(format!("vector of {n} values overruns the section")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn split_blocks(arch: &Architecture, flat: &[f64]) -> Result<Vec<Tensor>, HarnessError> {
    let mut out = Vec::new();
    let mut off = 0;
    for spec in arch.param_specs() {
        let n: usize = spec.shape.iter().product();
        let data = flat
            .get(off..off + n)
            .ok_or_else(|| HarnessError::Checkpoint(format!("moment vector too short for {}", spec.name)))?;
        out.push(Tensor::new(spec.shape.clone(), data.to_vec())?);
        off += n;
    }
    if off != flat.len() {
        return Err(HarnessError::Checkpoint(format!("moment vector has {} values, expected {off}", flat.len())));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn new(
        model: &DenoiserModel,
        optimizer: Option<&AdamW>,
        step: u64,
        schedule: &DiffusionSchedule,
        config_digest: [u8; 32],
    ) -> Self {
        Self {
            arch: model.arch().clone(),
            params: model.flat(),
            optimizer: optimizer.cloned(),
            step,
            timesteps: schedule.timesteps(),
            variance: schedule.spec(),
            config_digest,
        }
    }

    pub fn model(&self) -> Result<DenoiserModel, HarnessError> {
        let schedule = build_schedule(self.timesteps, self.variance)?;
        Ok(DenoiserModel::from_flat(self.arch.clone(), &self.params)?.with_schedule(schedule))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let mut section = |tag: &[u8; 4], payload: Vec<u8>| {
            out.extend(tag);
            out.extend((payload.len() as u64).to_le_bytes());
            out.extend(payload);
        };
        section(ARCH, self.arch.descriptor().into_bytes());
        let mut p = Vec::new();
        put_f64s(&mut p, &self.params);
        section(PARAMS, p);
        if let Some(opt) = &self.optimizer {
            let mut p = Vec::new();
            let c = opt.config;
            for x in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                p.extend(x.to_le_bytes());
            }
            p.extend(opt.step.to_le_bytes());
            let flat = |ts: &[Tensor]| ts.iter().flat_map(|t| t.data().iter().copied()).collect::<Vec<_>>();
            put_f64s(&mut p, &flat(&opt.first_moment));
            put_f64s(&mut p, &flat(&opt.second_moment));
            section(ADAM, p);
        }
        section(STEP, self.step.to_le_bytes().to_vec());
        let VarianceSpec::Linear { start, end } = self.variance;
        let mut p = (self.timesteps as u64).to_le_bytes().to_vec();
        p.extend(start.to_le_bytes());
        p.extend(end.to_le_bytes());
        section(SCHEDULE, p);
        section(DIGEST, self.config_digest.to_vec());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(HarnessError::Checkpoint("missing GDPO magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let (mut arch, mut params, mut optimizer, mut step, mut schedule, mut digest) =
            (None, None, None, None, None, None);
        while !r.done() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            if len > bytes.len() - r.pos {
                return Err(HarnessError::Checkpoint(format!(
                    "section {} overruns the file",
                    String::from_utf8_lossy(&tag)
                )));
            }
            let mut s = Reader { buf: r.take(len)?, pos: 0 };
            match &tag {
                ARCH => {
                    let d = std::str::from_utf8(s.take(len)?)
                        .map_err(|_| HarnessError::Checkpoint("descriptor is not UTF-8".into()))?;
                    arch = Some(Architecture::parse_descriptor(d)?);
                }
                PARAMS => params = Some(s.f64s()?),
                ADAM => {
                    let config = AdamWConfig {
                        lr: s.f64()?,
                        beta1: s.f64()?,
                        beta2: s.f64()?,
                        eps: s.f64()?,
                        weight_decay: s.f64()?,
                    };
                    let opt_step = s.u64()?;
                    optimizer = Some((config, opt_step, s.f64s()?, s.f64s()?));
                }
                STEP => step = Some(s.u64()?),
                SCHEDULE => {
                    schedule = Some((s.u64()? as usize, VarianceSpec::Linear { start: s.f64()?, end: s.f64()? }))
                }
                DIGEST => digest = Some(<[u8; 32]>::try_from(s.take(32)?).expect("32 bytes")),
                other => {
                    return Err(HarnessError::Checkpoint(format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )));
                }
            }
            if !s.done() {
                return Err(HarnessError::Checkpoint(format!(
                    "trailing bytes in section {}",
                    String::from_utf8_lossy(&tag)
                )));
            }
        }
        let missing = |name: &str| HarnessError::Checkpoint(format!("missing {name} section"));
        let arch = arch.ok_or_else(|| missing("architecture"))?;
        let params = params.ok_or_else(|| missing("parameter"))?;
        if params.len() != arch.num_params() {
            return Err(HarnessError::Checkpoint(format!(
                "{} parameters stored for {} which has {}",
                params.len(),
                arch.descriptor(),
                arch.num_params()
            )));
        }
        let optimizer = match optimizer {
            Some((config, opt_step, m, v)) => Some(AdamW {
                config,
                step: opt_step,
                first_moment: split_blocks(&arch, &m)?,
                second_moment: split_blocks(&arch, &v)?,
            }),
            None => None,
        };
        let (timesteps, variance) = schedule.ok_or_else(|| missing("schedule"))?;
        Ok(Self {
            arch,
            params,
            optimizer,
            step: step.ok_or_else(|| missing("step"))?,
            timesteps,
            variance,
            config_digest: digest.ok_or_else(|| missing("digest"))?,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        HarnessError::Checkpoint(m) => HarnessError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and insists on a particular architecture.
pub fn load_checkpoint_for(path: &Path, expected: &Architecture) -> Result<Checkpoint, HarnessError> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.arch != expected {
        return Err(HarnessError::Checkpoint(format!(
            "{} holds architecture {}, expected {}",
            path.display(),
            ckpt.arch.descriptor(),
            expected.descriptor()
        )));
    }
    Ok(ckpt)
}
