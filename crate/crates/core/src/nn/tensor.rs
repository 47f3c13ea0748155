use super::{NnError, Real};

/// Dense NCHW tensor. Two-dimensional activations use `H = W = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self, NnError> {
        if shape.contains(&0) {
            return Err(NnError::Shape(format!("zero dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(NnError::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per (item, channel) plane.
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape[1] * self.plane_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape[1] * self.plane_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let off = (n * self.shape[1] + c) * p;
        &self.data[off..off + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self, NnError> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!(
                "add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// Stacks items of identical shape along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, NnError> {
        let first = items
            .first()
            .ok_or_else(|| NnError::Shape("stack of nothing".into()))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(NnError::Shape(format!(
                    "stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        shape[0] = items.iter().map(|t| t.shape[0]).sum();
        Ok(Self { shape, data })
    }
}
