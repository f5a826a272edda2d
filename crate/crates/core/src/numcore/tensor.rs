use super::NumError;

/// Dense row-major tensor of `f64` values.
///
/// Construction through [`Tensor::new`] checks that the shape matches the
/// buffer length and that every element is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.contains(&0) {
            return Err(NumError::Shape { op: "tensor", detail: format!("zero extent in shape {shape:?}") });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "tensor", detail: format!("element {pos} is {}", data[pos]) });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by checked primitives.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumError::Shape { op: "reshape", detail: format!("{:?} -> {shape:?}", self.shape) });
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self, NumError> {
        if self.shape != other.shape {
            return Err(NumError::Shape { op: "zip_map", detail: format!("{:?} vs {:?}", self.shape, other.shape) });
        }
        Ok(Self::from_parts(self.shape.clone(), self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Stacks `[C_a, H, W]` and `[C_b, H, W]` into `[C_a + C_b, H, W]`.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Self, NumError> {
        if self.shape.len() != 3 || other.shape.len() != 3 || self.shape[1..] != other.shape[1..] {
            return Err(NumError::Shape {
                op: "concat_channels",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self::from_parts(vec![self.shape[0] + other.shape[0], self.shape[1], self.shape[2]], data))
    }
}
