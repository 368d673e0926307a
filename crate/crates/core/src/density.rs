//! Single-photon reduced density matrices ρ(x, x′).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::jsa::{GaussianParams, JointSpectralAmplitude};
use crate::quadrature::Rule;

/// Which photon of the pair is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Signal,
    Idler,
}

/// Trace deviation above which a grid is considered too coarse.
pub const UNDERSAMPLING_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDensityMatrix {
    grid: FrequencyGrid,
    kernel: DMatrix<Complex64>,
    weights: Vec<f64>,
}

impl ReducedDensityMatrix {
    /// Wrap a kernel sampled on `grid`.
    pub fn from_kernel(grid: FrequencyGrid, kernel: DMatrix<Complex64>) -> Result<Self> {
        if kernel.nrows() != grid.len() || kernel.ncols() != grid.len() {
            return Err(Error::AxisMismatch(format!(
                "{}x{} kernel on a {}-point grid",
                kernel.nrows(),
                kernel.ncols(),
                grid.len()
            )));
        }
        let weights = grid.weights(Rule::Simpson);
        Ok(Self { grid, kernel, weights })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<Complex64> {
        &self.kernel
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.kernel[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.weights[i] * self.kernel[(i, i)].re).sum()
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        let n = self.grid.len();
        let mut s = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.weights[j] * self.kernel[(i, j)].norm_sqr();
            }
            s += self.weights[i] * row;
        }
        s
    }

    /// Largest |ρ(x,x′) − ρ(x′,x)*|.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.grid.len();
        let mut e: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                e = e.max((self.kernel[(i, j)] - self.kernel[(j, i)].conj()).norm());
            }
        }
        e
    }

    /// Eigenvalues of the integral operator, sorted in decreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let sq: Vec<f64> = self.weights.iter().map(|w| w.max(0.0).sqrt()).collect();
        let n = self.grid.len();
        let m = DMatrix::from_fn(n, n, |i, j| self.kernel[(i, j)] * (sq[i] * sq[j]));
        let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

/// ρ by quadrature over the traced photon.
pub fn reduced_density(jsa: &JointSpectralAmplitude, party: Party) -> Result<ReducedDensityMatrix> {
    let samples = jsa.sample();
    let (sg, ig) = (jsa.signal_grid(), jsa.idler_grid());
    let (ns, ni) = (sg.len(), ig.len());
    let a = DMatrix::from_row_slice(ns, ni, &samples);
    let (kernel, grid) = match party {
        Party::Signal => {
            let w = ig.weights(Rule::Simpson);
            let mut aw = a.clone();
            for (j, wj) in w.iter().enumerate() {
                aw.column_mut(j).scale_mut(*wj);
            }
            (aw * a.adjoint(), sg.clone())
        }
        Party::Idler => {
            let w = sg.weights(Rule::Simpson);
            let mut aw = a.clone();
            for (i, wi) in w.iter().enumerate() {
                aw.row_mut(i).scale_mut(*wi);
            }
            (aw.transpose() * a.conjugate(), ig.clone())
        }
    };
    let rho = ReducedDensityMatrix::from_kernel(grid, kernel)?;
    let dev = (rho.trace() - 1.0).abs();
    if dev > UNDERSAMPLING_TOLERANCE {
        return Err(Error::Undersampled(dev));
    }
    Ok(rho)
}

/// Closed-form Gaussian kernel ρ(x, x′) for an untranslated source.
pub fn gaussian_density(p: &GaussianParams, party: Party, x: f64, xp: f64) -> f64 {
    let (own, other) = match party {
        Party::Signal => (p.sigma_s, p.sigma_i),
        Party::Idler => (p.sigma_i, p.sigma_s),
    };
    let c2 = p.norm_constant().powi(2);
    let s = x + xp;
    c2 * (2.0 * std::f64::consts::PI).sqrt()
        * other
        * (-(x * x + xp * xp) / (4.0 * own * own) + 0.5 * p.alpha * p.alpha * other * other * s * s).exp()
}

/// Closed-form kernel of a (possibly translated) Gaussian source.
pub fn gaussian_density_of(jsa: &JointSpectralAmplitude, party: Party, x: f64, xp: f64) -> Option<f64> {
    let p = jsa.gaussian_params()?;
    let d = match party {
        Party::Signal => jsa.shift()[0],
        Party::Idler => jsa.shift()[1],
    };
    Some(gaussian_density(p, party, x - d, xp - d))
}

/// Closed-form kernel sampled on the matching grid of `jsa`.
pub fn gaussian_reduced_density(jsa: &JointSpectralAmplitude, party: Party) -> Option<ReducedDensityMatrix> {
    let grid = match party {
        Party::Signal => jsa.signal_grid().clone(),
        Party::Idler => jsa.idler_grid().clone(),
    };
    let n = grid.len();
    let d = grid.detunings();
    jsa.gaussian_params()?;
    let k = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(gaussian_density_of(jsa, party, d[i], d[j]).unwrap_or(0.0), 0.0)
    });
    ReducedDensityMatrix::from_kernel(grid, k).ok()
}
