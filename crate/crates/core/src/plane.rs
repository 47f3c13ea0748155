//! Dense single-channel real image plane.

use serde::{Deserialize, Serialize};

/// Row-major `height x width` matrix of `f64` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Wraps row-major data. Panics if the length does not match.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "plane data length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Mirror left/right.
    pub fn flip_horizontal(&self) -> Plane {
        Plane::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Rotate by 90 degrees counter-clockwise.
    pub fn rot90(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |y, x| self.get(x, self.width - 1 - y))
    }
}
