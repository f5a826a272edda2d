use crate::numcore::Tensor;

use super::ImageError;

/// Interleaved `H × W × C` raster of reals, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Dimensions(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels { expected: "1 or 3", got: channels });
        }
        if pixels.len() != height * width * channels {
            return Err(ImageError::Dimensions(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("valid dimensions")
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, 1, pixels).expect("valid dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Value at `(y, x)` with out-of-range coordinates clamped to the border.
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.get(yy, xx, c)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { pixels: self.pixels.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect();
        Self { height: self.height, width: self.width, channels: 1, pixels }
    }

    /// Planar `[C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = self.dims();
        let mut data = vec![0.0; h * w * c];
        for (i, px) in self.pixels.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + i] = v;
            }
        }
        Tensor::new(vec![c, h, w], data).expect("finite pixels")
    }

    /// Inverse of [`Image::to_tensor`]; values are not clamped.
    pub fn from_tensor(t: &Tensor) -> Result<Self, ImageError> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(ImageError::Dimensions(format!("tensor shape {s:?} is not [C, H, W]")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut pixels = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                pixels[i * c + ch] = t.data()[ch * h * w + i];
            }
        }
        Self::new(h, w, c, pixels)
    }

    /// Copy of the `size_y × size_x` window starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size_y: usize, size_x: usize) -> Result<Self, ImageError> {
        if y0 + size_y > self.height || x0 + size_x > self.width {
            return Err(ImageError::Dimensions(format!(
                "crop {size_y}x{size_x}@({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(size_y * size_x * c);
        for y in y0..y0 + size_y {
            let start = (y * self.width + x0) * c;
            pixels.extend_from_slice(&self.pixels[start..start + size_x * c]);
        }
        Self::new(size_y, size_x, c, pixels)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(self.channels).copied().collect()
    }
}
