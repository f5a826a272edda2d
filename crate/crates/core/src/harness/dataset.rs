use std::path::{Path, PathBuf};

use rand::Rng;

use crate::imagecore::{degrade, load_image, save_image, DegradationConfig, Image};
use crate::numcore::{derive_seed, label_seed, seeded_rng};

use super::{create_dir, io_err, HarnessError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub hr: Image,
    pub lr: Image,
}

/// Grayscale test image: a gentle gradient with a few flat shapes and one
/// textured window of sinusoids and/or noise. Values sit on 8-bit levels so
/// saving and reloading is lossless.
pub fn procedural_hr(size: usize, seed: u64) -> Image {
    let mut rng = seeded_rng(seed);
    let s = size as f64;
    let base = rng.random_range(0.25..0.65);
    let (gx, gy) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let mut px: Vec<f64> = (0..size * size)
        .map(|i| base + gx * ((i % size) as f64 / s - 0.5) + gy * ((i / size) as f64 / s - 0.5))
        .collect();

    for _ in 0..rng.random_range(1..=3) {
        let level = rng.random_range(0.05..0.95);
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let r = rng.random_range(s / 10.0..s / 4.0);
        let disc = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.7 };
                if inside {
                    px[y * size + x] = level;
                }
            }
        }
    }

    let (wh, ww) = (rng.random_range(size / 4..=size / 2), rng.random_range(size / 4..=size / 2));
    let (y0, x0) = (rng.random_range(0..=size - wh), rng.random_range(0..=size - ww));
    let kind = rng.random_range(0..3);
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(0.3..1.2);
            (freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..6.3), rng.random_range(0.06..0.15))
        })
        .collect();
    let noise_amp = rng.random_range(0.08..0.2);
    for y in y0..y0 + wh {
        for x in x0..x0 + ww {
            let mut v = 0.0;
            if kind != 1 {
                v += waves.iter().map(|(fy, fx, ph, a)| a * (fy * y as f64 + fx * x as f64 + ph).sin()).sum::<f64>();
            }
            if kind != 0 {
                v += noise_amp * rng.random_range(-1.0..1.0);
            }
            px[y * size + x] += v;
        }
    }

    let img = Image::new(size, size, 1, px).expect("square buffer");
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn split_dir(root: &Path, split: Split, kind: &str) -> PathBuf {
    root.join(split.dir_name()).join(kind)
}

fn write_pair(root: &Path, split: Split, index: usize, hr: &Image, lr: &Image) -> Result<(), HarnessError> {
    let name = format!("{index:04}.pgm");
    let name = if hr.channels() == 3 { name.replace(".pgm", ".ppm") } else { name };
    save_image(hr, split_dir(root, split, "hr").join(&name))?;
    save_image(lr, split_dir(root, split, "lr").join(&name))?;
    Ok(())
}

fn source_images(dir: &Path, channels: usize, factor: usize) -> Result<Vec<Image>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let img = load_image(p)?;
            let img = if channels == 1 { img.to_gray() } else { img };
            if img.channels() != channels {
                return Err(HarnessError::Config {
                    line: None,
                    key: "channels".into(),
                    message: format!("{} has {} channels", p.display(), img.channels()),
                });
            }
            let (h, w) = (img.height() / factor * factor, img.width() / factor * factor);
            if h == 0 || w == 0 {
                return Err(HarnessError::Io(format!("{} is smaller than the scale factor", p.display())));
            }
            Ok(img.crop(0, 0, h, w)?)
        })
        .collect()
}

/// Writes `train/{hr,lr}` and `holdout/{hr,lr}` under `cfg.data_dir`. HR
/// images come from `cfg.source_dir` when set (the last `holdout_count`
/// files are held out), otherwise from the procedural generator.
/// Returns the number of (train, holdout) pairs written.
pub fn synthesize_dataset(cfg: &RunConfig) -> Result<(usize, usize), HarnessError> {
    let root = &cfg.data_dir;
    for split in [Split::Train, Split::Holdout] {
        for kind in ["hr", "lr"] {
            create_dir(&split_dir(root, split, kind))?;
        }
    }
    let hrs: Vec<Image> = match &cfg.source_dir {
        Some(dir) => {
            let imgs = source_images(dir, cfg.arch.channels, cfg.degradation.factor)?;
            if imgs.len() <= cfg.holdout_count {
                return Err(HarnessError::Io(format!(
                    "{} holds {} images, need more than holdout_count = {}",
                    dir.display(),
                    imgs.len(),
                    cfg.holdout_count
                )));
            }
            imgs
        }
        None => {
            let data = label_seed(cfg.seed, "data");
            (0..cfg.train_count + cfg.holdout_count)
                .map(|i| procedural_hr(cfg.hr_size, derive_seed(data, i as u64)))
                .collect()
        }
    };
    let n_train = hrs.len() - cfg.holdout_count;
    let degrade_base = label_seed(cfg.seed, "degrade");
    for (i, hr) in hrs.iter().enumerate() {
        let dcfg = DegradationConfig { seed: derive_seed(degrade_base, i as u64), ..cfg.degradation };
        let lr = degrade(hr, &dcfg)?;
        let split = if i < n_train { Split::Train } else { Split::Holdout };
        write_pair(root, split, i, hr, &lr)?;
    }
    Ok((n_train, cfg.holdout_count))
}

/// Loads every HR/LR pair of one split, sorted by file name.
pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<ImagePair>, HarnessError> {
    let hr_dir = split_dir(data_dir, split, "hr");
    let mut names: Vec<String> = std::fs::read_dir(&hr_dir)
        .map_err(|e| io_err(&hr_dir, e))?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .filter(|n| n.ends_with(".pgm") || n.ends_with(".ppm"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let hr = load_image(hr_dir.join(&name))?;
            let lr = load_image(split_dir(data_dir, split, "lr").join(&name))?;
            let id = name.rsplit_once('.').map_or(name.clone(), |(stem, _)| stem.to_string());
            Ok(ImagePair { id, hr, lr })
        })
        .collect()
}
