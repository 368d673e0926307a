use crate::error::{invalid, Result};
use crate::quadrature::{self, Rule};

/// Uniform grid of angular detunings, symmetric about zero, around an absolute
/// center frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    center: f64,
    spacing: f64,
    count: usize,
}

impl FrequencyGrid {
    /// Grid of `count` points spanning `[-half_extent, half_extent]` (rad/ps).
    pub fn symmetric(center: f64, half_extent: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(invalid("count", format!("need at least 2 points, got {count}")));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(invalid("half_extent", format!("must be positive, got {half_extent}")));
        }
        if !center.is_finite() {
            return Err(invalid("center", "must be finite"));
        }
        Ok(Self {
            center,
            spacing: 2.0 * half_extent / (count - 1) as f64,
            count,
        })
    }

    /// Grid with a prescribed spacing and point count.
    pub fn with_spacing(center: f64, spacing: f64, count: usize) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(invalid("spacing", format!("must be positive, got {spacing}")));
        }
        Self::symmetric(center, 0.5 * spacing * (count.max(2) - 1) as f64, count)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.spacing * (self.count - 1) as f64
    }

    /// Detuning of point `i` from the center.
    #[inline]
    pub fn detuning(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.count - 1) as f64) * self.spacing
    }

    pub fn detunings(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.detuning(i)).collect()
    }

    pub fn contains(&self, detuning: f64) -> bool {
        detuning.abs() <= self.half_extent() * (1.0 + 1e-12)
    }

    /// Quadrature weights (including the spacing) for this grid.
    pub fn weights(&self, rule: Rule) -> Vec<f64> {
        quadrature::weights(self.count, self.spacing, rule)
    }

    /// Same span with the spacing halved; every original node is kept.
    pub fn refined(&self) -> Self {
        Self {
            center: self.center,
            spacing: 0.5 * self.spacing,
            count: 2 * self.count - 1,
        }
    }

    /// Fractional index of `detuning`, clamped to the grid.
    pub fn fractional_index(&self, detuning: f64) -> f64 {
        let f = detuning / self.spacing + 0.5 * (self.count - 1) as f64;
        f.clamp(0.0, (self.count - 1) as f64)
    }
}
