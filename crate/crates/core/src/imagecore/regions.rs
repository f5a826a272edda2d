use super::metrics::sobel_magnitude;
use super::{Image, ImageError};

pub const ENTROPY_BINS: usize = 32;

/// Single-channel field of reals (e.g. gradient magnitudes), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width);
        Self { height, width, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Grid of `rows × cols` patches. Patch `r` spans rows
/// `r·H/rows .. (r+1)·H/rows` (integer division), likewise for columns, so any
/// grid no larger than the image partitions it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self { rows: 10, cols: 10 }
    }
}

impl PatchGrid {
    pub fn bounds(len: usize, parts: usize, i: usize) -> (usize, usize) {
        (i * len / parts, (i + 1) * len / parts)
    }

    fn check(&self, height: usize, width: usize) -> Result<(), ImageError> {
        if self.rows == 0 || self.cols == 0 || self.rows > height || self.cols > width {
            return Err(ImageError::EmptyPatch { rows: self.rows, cols: self.cols, height, width });
        }
        Ok(())
    }

    /// Row-major `(y0, y1, x0, x1)` patch rectangles.
    pub fn patches(&self, height: usize, width: usize) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            let (y0, y1) = Self::bounds(height, self.rows, r);
            for c in 0..self.cols {
                let (x0, x1) = Self::bounds(width, self.cols, c);
                out.push((y0, y1, x0, x1));
            }
        }
        out
    }
}

/// Shannon entropy in bits of a histogram of counts; `0·log 0 = 0`.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single full bin sums to -0.0
    h + 0.0
}

/// Per-patch entropy of a 32-bin histogram spanning `[0, max(field)]`.
pub fn patch_entropy(field: &ScalarField, grid: PatchGrid) -> Result<Vec<f64>, ImageError> {
    grid.check(field.height, field.width)?;
    let max = field.max();
    let bin = |v: f64| -> usize {
        if max <= 0.0 {
            0
        } else {
            ((v / max * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1)
        }
    };
    Ok(grid
        .patches(field.height, field.width)
        .into_iter()
        .map(|(y0, y1, x0, x1)| {
            let mut counts = [0usize; ENTROPY_BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    counts[bin(field.values[y * field.width + x])] += 1;
                }
            }
            entropy_bits(&counts)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionLabel {
    Smooth,
    Detailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMap {
    pub grid: PatchGrid,
    pub tau: f64,
    pub entropy: Vec<f64>,
    pub labels: Vec<RegionLabel>,
    pub patch_pixels: Vec<usize>,
    pub rho_s: f64,
    pub rho_d: f64,
}

impl RegionMap {
    /// Fixed proportions, for the "no adaptive weighting" reward ablation.
    pub fn fixed(rho_s: f64) -> Self {
        let rho_s = rho_s.clamp(0.0, 1.0);
        Self {
            grid: PatchGrid { rows: 1, cols: 1 },
            tau: f64::NAN,
            entropy: vec![],
            labels: vec![],
            patch_pixels: vec![],
            rho_s,
            rho_d: 1.0 - rho_s,
        }
    }

    pub fn smooth_pixels(&self) -> usize {
        self.labels.iter().zip(&self.patch_pixels).filter(|(l, _)| **l == RegionLabel::Smooth).map(|(_, n)| n).sum()
    }
}

/// Grayscale, Sobel magnitude, per-patch entropy, then label each patch
/// smooth iff its entropy is below `tau`.
pub fn partition_regions(image: &Image, tau: f64, grid: PatchGrid) -> Result<RegionMap, ImageError> {
    if !(tau >= 0.0) {
        return Err(ImageError::Config(format!("entropy threshold {tau} must be non-negative")));
    }
    let field = sobel_magnitude(&image.to_gray())?;
    let entropy = patch_entropy(&field, grid)?;
    let rects = grid.patches(field.height, field.width);
    let patch_pixels: Vec<usize> = rects.iter().map(|&(y0, y1, x0, x1)| (y1 - y0) * (x1 - x0)).collect();
    let labels: Vec<RegionLabel> =
        entropy.iter().map(|&e| if e < tau { RegionLabel::Smooth } else { RegionLabel::Detailed }).collect();
    let total = (field.height * field.width) as f64;
    let smooth: usize =
        labels.iter().zip(&patch_pixels).filter(|(l, _)| **l == RegionLabel::Smooth).map(|(_, n)| n).sum();
    let rho_s = smooth as f64 / total;
    Ok(RegionMap { grid, tau, entropy, labels, patch_pixels, rho_s, rho_d: 1.0 - rho_s })
}
