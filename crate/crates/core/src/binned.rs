use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::quadrature::Rule;

/// Real values on a 2D grid, row-major with `y` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMap {
    pub x: FrequencyGrid,
    pub y: FrequencyGrid,
    pub values: Vec<f64>,
}

impl BinnedMap {
    pub fn new(x: FrequencyGrid, y: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != x.len() * y.len() {
            return Err(Error::AxisMismatch(format!(
                "{} values for a {}x{} map",
                values.len(),
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, y, values })
    }

    pub fn zeros(x: FrequencyGrid, y: FrequencyGrid) -> Self {
        let n = x.len() * y.len();
        Self {
            x,
            y,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y.len() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.y.len();
        self.values[i * n + j] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// ∫∫ by the given rule on the map's grids.
    pub fn integrate(&self, rule: Rule) -> f64 {
        let wx = self.x.weights(rule);
        let wy = self.y.weights(rule);
        let ny = self.y.len();
        wx.iter()
            .enumerate()
            .map(|(i, a)| a * self.values[i * ny..(i + 1) * ny].iter().zip(&wy).map(|(v, b)| v * b).sum::<f64>())
            .sum()
    }

    /// Map with the two axes exchanged.
    pub fn transposed(&self) -> Self {
        let (nx, ny) = self.shape();
        let mut v = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                v[j * nx + i] = self.values[i * ny + j];
            }
        }
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            values: v,
        }
    }

    pub fn same_axes(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y
    }

    /// Relative L2 distance ‖self − other‖ / ‖other‖ over the grid values.
    pub fn relative_l2(&self, other: &Self) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::AxisMismatch("maps differ in size".into()));
        }
        let num: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = other.values.iter().map(|b| b * b).sum();
        Ok((num / den).sqrt())
    }
}
