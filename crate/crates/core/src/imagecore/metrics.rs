use super::regions::{patch_entropy, PatchGrid, ScalarField};
use super::{Image, ImageError};

pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

impl Orientation {
    pub fn token(self) -> &'static str {
        match self {
            Orientation::HigherIsBetter => "higher",
            Orientation::LowerIsBetter => "lower",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "higher" => Some(Orientation::HigherIsBetter),
            "lower" => Some(Orientation::LowerIsBetter),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricScore {
    pub metric: String,
    pub value: f64,
    pub orientation: Orientation,
}

fn check_same(a: &Image, b: &Image) -> Result<(), ImageError> {
    if !a.same_shape(b) {
        return Err(ImageError::Dimensions(format!("shape mismatch {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    check_same(a, b)?;
    let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.pixels().len() as f64)
}

/// Peak-1.0 PSNR in dB, capped at [`PSNR_CAP_DB`] for near-identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    let m = mse(a, b)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Mean structural similarity over all valid 11×11 Gaussian windows,
/// averaged across channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, ImageError> {
    check_same(a, b)?;
    let (h, w, c) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(ImageError::TooSmall { need: SSIM_WINDOW, height: h, width: w });
    }
    let win = ssim_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        let mut acc = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wv = win[ky * SSIM_WINDOW + kx];
                        let i = (y + ky) * w + x + kx;
                        let (va, vb) = (pa[i], pb[i]);
                        ma += wv * va;
                        mb += wv * vb;
                        saa += wv * va * va;
                        sbb += wv * vb * vb;
                        sab += wv * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

fn require_gray(image: &Image) -> Result<(), ImageError> {
    if image.channels() != 1 {
        return Err(ImageError::Channels { expected: "1", got: image.channels() });
    }
    Ok(())
}

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn correlate3(image: &Image, k: &[[f64; 3]; 3], y: usize, x: usize) -> f64 {
    let mut s = 0.0;
    for (dy, row) in k.iter().enumerate() {
        for (dx, kv) in row.iter().enumerate() {
            s += kv * image.get_clamped(y as isize + dy as isize - 1, x as isize + dx as isize - 1, 0);
        }
    }
    s
}

/// Sobel pair written as differences of weighted sums, so a flat
/// neighbourhood yields exactly zero.
fn sobel_at(image: &Image, y: usize, x: usize) -> (f64, f64) {
    let at = |dy: isize, dx: isize| image.get_clamped(y as isize + dy, x as isize + dx, 0);
    let gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
    let gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
    (gx, gy)
}

/// `sqrt(Gx² + Gy²)` of the 3×3 Sobel pair with border replication.
pub fn sobel_magnitude(gray: &Image) -> Result<ScalarField, ImageError> {
    require_gray(gray)?;
    let (h, w, _) = gray.dims();
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = sobel_at(gray, y, x);
            values.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(ScalarField::new(h, w, values))
}

const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// Population variance of the 4-neighbour Laplacian of the grayscale image.
pub fn laplacian_variance(image: &Image) -> f64 {
    let gray = image.to_gray();
    let (h, w, _) = gray.dims();
    let mut vals = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            vals.push(correlate3(&gray, &LAPLACIAN, y, x));
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

/// Mean per-patch Sobel-gradient entropy of the grayscale image, in bits.
pub fn gradient_richness(image: &Image, grid: PatchGrid) -> Result<f64, ImageError> {
    let field = sobel_magnitude(&image.to_gray())?;
    let ent = patch_entropy(&field, grid)?;
    Ok(ent.iter().sum::<f64>() / ent.len() as f64)
}

pub const SHARPNESS: &str = "sharpness";
pub const RICHNESS: &str = "richness";

/// The two analytic no-reference scores, both higher-is-better:
/// Laplacian variance and mean patch gradient entropy.
pub fn nr_proxy_scores(image: &Image, grid: PatchGrid) -> Result<Vec<MetricScore>, ImageError> {
    Ok(vec![
        MetricScore {
            metric: SHARPNESS.into(),
            value: laplacian_variance(image),
            orientation: Orientation::HigherIsBetter,
        },
        MetricScore {
            metric: RICHNESS.into(),
            value: gradient_richness(image, grid)?,
            orientation: Orientation::HigherIsBetter,
        },
    ])
}
