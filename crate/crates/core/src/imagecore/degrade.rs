use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Image, ImageError};

/// Four-stage synthetic degradation: blur, box downsample, additive Gaussian
/// noise, optional quantization, then clamp to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationConfig {
    pub blur_sigma: f64,
    pub factor: usize,
    pub noise_sigma: f64,
    pub quantization_levels: Option<u32>,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self { blur_sigma: 1.2, factor: 4, noise_sigma: 0.01, quantization_levels: Some(256), seed: 0 }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<(), ImageError> {
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(ImageError::Config("sigmas must be non-negative".into()));
        }
        if self.factor == 0 {
            return Err(ImageError::Config("factor must be at least 1".into()));
        }
        if matches!(self.quantization_levels, Some(l) if l < 2) {
            return Err(ImageError::Config("quantization needs at least 2 levels".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, image: &Image) -> Result<(), ImageError> {
        self.validate()?;
        if !image.height().is_multiple_of(self.factor) || !image.width().is_multiple_of(self.factor) {
            return Err(ImageError::Dimensions(format!(
                "{}x{} not divisible by factor {}",
                image.height(),
                image.width(),
                self.factor
            )));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with border replication. `sigma == 0` is a copy.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = image.dims();
    let mut tmp = image.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * image.get_clamped(y as isize, x as isize + i as isize - r, ch))
                    .sum();
                tmp.pixels_mut()[(y * w + x) * c + ch] = s;
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp.get_clamped(y as isize + i as isize - r, x as isize, ch))
                    .sum();
                out.pixels_mut()[(y * w + x) * c + ch] = s;
            }
        }
    }
    out
}

/// Mean over non-overlapping `factor × factor` blocks.
pub fn box_downsample(image: &Image, factor: usize) -> Result<Image, ImageError> {
    let (h, w, c) = image.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(ImageError::Dimensions(format!("{h}x{w} not divisible by factor {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut pixels = vec![0.0; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                pixels[((y / factor) * ow + x / factor) * c + ch] += image.get(y, x, ch);
            }
        }
    }
    pixels.iter_mut().for_each(|v| *v /= norm);
    Image::new(oh, ow, c, pixels)
}

pub fn degrade(hr: &Image, cfg: &DegradationConfig) -> Result<Image, ImageError> {
    cfg.check_dims(hr)?;
    let blurred = gaussian_blur(hr, cfg.blur_sigma);
    let mut lr = box_downsample(&blurred, cfg.factor)?;
    if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in lr.pixels_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_sigma * n;
        }
    }
    if let Some(levels) = cfg.quantization_levels {
        let q = (levels - 1) as f64;
        for v in lr.pixels_mut() {
            *v = (v.clamp(0.0, 1.0) * q).round() / q;
        }
    }
    Ok(lr.clamped())
}

/// Keys cubic convolution weight, `a = -0.5`.
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per output coordinate: four source taps and their weights.
fn cubic_taps(out_len: usize, factor: usize) -> Vec<([isize; 4], [f64; 4])> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let idx = [base - 1, base, base + 1, base + 2];
            let wts =
                [cubic_weight(1.0 + frac), cubic_weight(frac), cubic_weight(1.0 - frac), cubic_weight(2.0 - frac)];
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic interpolation with pixel-center alignment and border
/// replication. Output values are not clamped.
pub fn bicubic_upsample(lr: &Image, factor: usize) -> Result<Image, ImageError> {
    if factor == 0 {
        return Err(ImageError::Config("factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(lr.clone());
    }
    let (h, w, c) = lr.dims();
    let (oh, ow) = (h * factor, w * factor);
    let tx = cubic_taps(ow, factor);
    let ty = cubic_taps(oh, factor);
    // horizontal pass: h × ow
    let mut tmp = vec![0.0; h * ow * c];
    for y in 0..h {
        for (x, (idx, wts)) in tx.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * ow + x) * c + ch] =
                    idx.iter().zip(wts).map(|(&i, wv)| wv * lr.get_clamped(y as isize, i, ch)).sum();
            }
        }
    }
    let mut out = vec![0.0; oh * ow * c];
    for (y, (idx, wts)) in ty.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                out[(y * ow + x) * c + ch] = idx
                    .iter()
                    .zip(wts)
                    .map(|(&i, wv)| wv * tmp[(i.clamp(0, h as isize - 1) as usize * ow + x) * c + ch])
                    .sum();
            }
        }
    }
    Image::new(oh, ow, c, out)
}
