use serde::{Deserialize, Serialize};

use super::EngineError;

/// Dense `height x width` grid of reals, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarField {
    /// 3x3 mean with reflected borders.
    pub fn box3(&self) -> ScalarField {
        super::ops::box3(self)
    }

    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, EngineError> {
        if height < 2 || width < 2 {
            return Err(EngineError::Contract(format!(
                "field must be at least 2x2, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(EngineError::Contract(format!(
                "field {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Panics when the dimensions are below 2x2.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("valid field dimensions")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self::new(height, width, values).expect("valid field dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Panics on mismatched dimensions.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dims(), other.dims(), "zip_map on mismatched fields");
        Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Three equally-sized scalar fields, one per 3D component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField3 {
    pub x: ScalarField,
    pub y: ScalarField,
    pub z: ScalarField,
}

impl VectorField3 {
    pub fn new(x: ScalarField, y: ScalarField, z: ScalarField) -> Result<Self, EngineError> {
        if x.dims() != y.dims() || x.dims() != z.dims() {
            return Err(EngineError::Contract(format!(
                "vector field components disagree: {:?} {:?} {:?}",
                x.dims(),
                y.dims(),
                z.dims()
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, [0.0; 3])
    }

    pub fn constant(height: usize, width: usize, v: [f64; 3]) -> Self {
        Self {
            x: ScalarField::filled(height, width, v[0]),
            y: ScalarField::filled(height, width, v[1]),
            z: ScalarField::filled(height, width, v[2]),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.x.dims()
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.x.get(row, col),
            self.y.get(row, col),
            self.z.get(row, col),
        ]
    }

    pub fn set(&mut self, row: usize, col: usize, v: [f64; 3]) {
        self.x.set(row, col, v[0]);
        self.y.set(row, col, v[1]);
        self.z.set(row, col, v[2]);
    }

    pub fn components(&self) -> [&ScalarField; 3] {
        [&self.x, &self.y, &self.z]
    }

    /// Per-pixel Euclidean norm.
    pub fn norm(&self) -> ScalarField {
        let (h, w) = self.dims();
        ScalarField::from_fn(h, w, |r, c| {
            let v = self.get(r, c);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
    }
}
