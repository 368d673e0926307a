//! Joint spectral amplitudes f(ω_S, ω_I) of a pair source.
//!
//! Coordinates passed to [`JointSpectralAmplitude::amplitude`] are detunings
//! (rad/ps) from the common center frequency.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::grid::FrequencyGrid;
use crate::quadrature::Rule;

/// Default number of grid points per axis.
pub const DEFAULT_GRID_POINTS: usize = 512;
/// Default grid half-extent in units of the marginal standard deviation.
pub const DEFAULT_GRID_EXTENT: f64 = 6.0;
/// Minimal support (marginal standard deviations) a grid must contain.
pub const REQUIRED_SUPPORT: f64 = 5.0;

/// sin(z)/z = 1/√2 at this z, so sinc² falls to half its peak.
pub const SINC_HALF_POWER_POINT: f64 = 1.391_557_378_251_51;

/// Gaussian source: f ∝ exp[−x²/4σ_S² − y²/4σ_I² − αxy].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub sigma_s: f64,
    pub sigma_i: f64,
    pub alpha: f64,
}

impl GaussianParams {
    pub fn new(sigma_s: f64, sigma_i: f64, alpha: f64) -> Result<Self> {
        if !(sigma_s.is_finite() && sigma_s > 0.0) {
            return Err(invalid("sigma_s", format!("must be positive, got {sigma_s}")));
        }
        if !(sigma_i.is_finite() && sigma_i > 0.0) {
            return Err(invalid("sigma_i", format!("must be positive, got {sigma_i}")));
        }
        if !alpha.is_finite() {
            return Err(invalid("alpha", "must be finite"));
        }
        // Hessian of the exponent: [[-1/2σ_S², -α], [-α, -1/2σ_I²]].
        let det = 1.0 / (4.0 * sigma_s * sigma_s * sigma_i * sigma_i) - alpha * alpha;
        if det <= 0.0 {
            return Err(Error::NotIntegrable(format!(
                "exponent Hessian is not negative definite (determinant {det:.3e})"
            )));
        }
        Ok(Self { sigma_s, sigma_i, alpha })
    }

    /// Parameters reaching the requested Schmidt number with the given widths.
    /// The sign of α follows `anticorrelated` (true gives α > 0).
    pub fn from_schmidt_number(sigma_s: f64, sigma_i: f64, k: f64, anticorrelated: bool) -> Result<Self> {
        if !(k >= 1.0) {
            return Err(invalid("schmidt_number", format!("must be at least 1, got {k}")));
        }
        let mu = 1.0 / k;
        let a = (1.0 - mu * mu).sqrt() / (2.0 * sigma_s * sigma_i);
        Self::new(sigma_s, sigma_i, if anticorrelated { a } else { -a })
    }

    /// √(1 − 4α²σ_S²σ_I²); equals the purity of either reduced state.
    pub fn purity(&self) -> f64 {
        let c = 2.0 * self.alpha * self.sigma_s * self.sigma_i;
        (1.0 - c * c).sqrt()
    }

    pub fn schmidt_number(&self) -> f64 {
        1.0 / self.purity()
    }

    /// Normalization constant C of the amplitude.
    pub fn norm_constant(&self) -> f64 {
        (self.purity() / (2.0 * std::f64::consts::PI * self.sigma_s * self.sigma_i)).sqrt()
    }

    /// Standard deviation of the signal marginal |f|² distribution.
    pub fn marginal_std_signal(&self) -> f64 {
        self.sigma_s / self.purity()
    }

    pub fn marginal_std_idler(&self) -> f64 {
        self.sigma_i / self.purity()
    }

    /// Center of the signal mode heralded by an idler at detuning `omega_idler`.
    pub fn herald_center(&self, omega_idler: f64) -> f64 {
        -2.0 * self.alpha * self.sigma_s * self.sigma_s * omega_idler
    }

    /// Precision matrix of |f|² over (x, y).
    pub fn intensity_precision(&self) -> [[f64; 2]; 2] {
        [
            [1.0 / (self.sigma_s * self.sigma_s), 2.0 * self.alpha],
            [2.0 * self.alpha, 1.0 / (self.sigma_i * self.sigma_i)],
        ]
    }

    #[inline]
    fn raw(&self, x: f64, y: f64) -> f64 {
        (-x * x / (4.0 * self.sigma_s * self.sigma_s) - y * y / (4.0 * self.sigma_i * self.sigma_i) - self.alpha * x * y).exp()
    }
}

/// Pump envelope times a sinc phase-matching function.
///
/// f ∝ exp[−(x+y)²/4σ_p²] · sinc[(κ_S x + κ_I y) L / 2] where κ are the
/// inverse group-velocity mismatches (ps/mm) and L the crystal length (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SincPmParams {
    pub pump_sigma: f64,
    pub kappa_s: f64,
    pub kappa_i: f64,
    pub length: f64,
}

impl SincPmParams {
    pub fn new(pump_sigma: f64, kappa_s: f64, kappa_i: f64, length: f64) -> Result<Self> {
        if !(pump_sigma.is_finite() && pump_sigma > 0.0) {
            return Err(invalid("pump_sigma", format!("must be positive, got {pump_sigma}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(invalid("length", format!("must be positive, got {length}")));
        }
        if !(kappa_s.is_finite() && kappa_i.is_finite()) {
            return Err(invalid("kappa", "must be finite"));
        }
        let p = Self {
            pump_sigma,
            kappa_s,
            kappa_i,
            length,
        };
        // Both factors together must confine the plane.
        if (kappa_s - kappa_i).abs() < 1e-12 * (kappa_s.abs() + kappa_i.abs()).max(1e-300) {
            return Err(Error::NotIntegrable("phase matching is parallel to the pump envelope".into()));
        }
        Ok(p)
    }

    #[inline]
    fn raw(&self, x: f64, y: f64) -> f64 {
        let s = x + y;
        let z = 0.5 * self.length * (self.kappa_s * x + self.kappa_i * y);
        (-s * s / (4.0 * self.pump_sigma * self.pump_sigma)).exp() * sinc(z)
    }

    /// Gaussian with the same intensity FWHM along the phase-matching direction.
    pub fn matched_gaussian(&self) -> Result<GaussianParams> {
        let gamma = std::f64::consts::LN_2 / (2.0 * SINC_HALF_POWER_POINT * SINC_HALF_POWER_POINT);
        let q = gamma * 0.25 * self.length * self.length;
        let inv_p = 1.0 / (4.0 * self.pump_sigma * self.pump_sigma);
        let a_s = inv_p + q * self.kappa_s * self.kappa_s;
        let a_i = inv_p + q * self.kappa_i * self.kappa_i;
        let cross = 2.0 * inv_p + 2.0 * q * self.kappa_s * self.kappa_i;
        GaussianParams::new(0.5 / a_s.sqrt(), 0.5 / a_i.sqrt(), cross)
    }
}

pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Complex amplitudes sampled on a signal × idler grid (row-major, idler fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedAmplitude {
    pub values: Vec<Complex64>,
    pub signal: FrequencyGrid,
    pub idler: FrequencyGrid,
}

impl GriddedAmplitude {
    fn interpolate(&self, x: f64, y: f64) -> Complex64 {
        if !self.signal.contains(x) || !self.idler.contains(y) {
            return Complex64::default();
        }
        let fx = self.signal.fractional_index(x);
        let fy = self.idler.fractional_index(y);
        let (nx, ny) = (self.signal.len(), self.idler.len());
        let i0 = (fx.floor() as usize).min(nx - 2);
        let j0 = (fy.floor() as usize).min(ny - 2);
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let v = |i: usize, j: usize| self.values[i * ny + j];
        v(i0, j0) * ((1.0 - tx) * (1.0 - ty))
            + v(i0 + 1, j0) * (tx * (1.0 - ty))
            + v(i0, j0 + 1) * ((1.0 - tx) * ty)
            + v(i0 + 1, j0 + 1) * (tx * ty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralModel {
    Gaussian(GaussianParams),
    SincPm(SincPmParams),
    Gridded(GriddedAmplitude),
}

/// A normalized joint spectral amplitude together with its simulation grids.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpectralAmplitude {
    model: SpectralModel,
    center: f64,
    signal: FrequencyGrid,
    idler: FrequencyGrid,
    norm: f64,
    shift: [f64; 2],
}

impl JointSpectralAmplitude {
    /// Gaussian source on default grids.
    pub fn gaussian(params: GaussianParams, center: f64) -> Result<Self> {
        Self::gaussian_with_points(params, center, DEFAULT_GRID_POINTS)
    }

    pub fn gaussian_with_points(params: GaussianParams, center: f64, points: usize) -> Result<Self> {
        let signal = FrequencyGrid::symmetric(center, DEFAULT_GRID_EXTENT * params.marginal_std_signal(), points)?;
        let idler = FrequencyGrid::symmetric(center, DEFAULT_GRID_EXTENT * params.marginal_std_idler(), points)?;
        Self::build(SpectralModel::Gaussian(params), center, signal, idler, [0.0; 2])
    }

    /// Sinc phase-matched source; grids are sized from the matched Gaussian and
    /// widened to cover the slower sinc tails.
    pub fn sinc_pm(params: SincPmParams, center: f64, points: usize) -> Result<Self> {
        let g = params.matched_gaussian()?;
        let signal = FrequencyGrid::symmetric(center, 2.0 * DEFAULT_GRID_EXTENT * g.marginal_std_signal(), points)?;
        let idler = FrequencyGrid::symmetric(center, 2.0 * DEFAULT_GRID_EXTENT * g.marginal_std_idler(), points)?;
        Self::build(SpectralModel::SincPm(params), center, signal, idler, [0.0; 2])
    }

    /// Amplitude given by samples on a grid pair; normalized on construction.
    pub fn gridded(center: f64, signal: FrequencyGrid, idler: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != signal.len() * idler.len() {
            return Err(Error::AxisMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                signal.len(),
                idler.len()
            )));
        }
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let g = GriddedAmplitude {
            values,
            signal: signal.clone(),
            idler: idler.clone(),
        };
        Self::build(SpectralModel::Gridded(g), center, signal, idler, [0.0; 2])
    }

    /// Same source evaluated on other grids.
    pub fn with_grids(&self, signal: FrequencyGrid, idler: FrequencyGrid) -> Result<Self> {
        Self::build(self.model.clone(), self.center, signal, idler, self.shift)
    }

    /// Same grids with `points` samples per axis.
    pub fn with_points(&self, points: usize) -> Result<Self> {
        let s = FrequencyGrid::symmetric(self.center, self.signal.half_extent(), points)?;
        let i = FrequencyGrid::symmetric(self.center, self.idler.half_extent(), points)?;
        self.with_grids(s, i)
    }

    /// The source translated by `(d_s, d_i)` in detuning space: f'(x, y) = f(x − d_s, y − d_i).
    pub fn translated(&self, d_s: f64, d_i: f64) -> Result<Self> {
        Self::build(
            self.model.clone(),
            self.center,
            self.signal.clone(),
            self.idler.clone(),
            [self.shift[0] + d_s, self.shift[1] + d_i],
        )
    }

    /// Same source re-sampled onto its own grids as a gridded amplitude.
    pub fn to_gridded(&self) -> Result<Self> {
        Self::gridded(self.center, self.signal.clone(), self.idler.clone(), self.sample())
    }

    fn build(model: SpectralModel, center: f64, signal: FrequencyGrid, idler: FrequencyGrid, shift: [f64; 2]) -> Result<Self> {
        if !center.is_finite() || center <= 0.0 {
            return Err(invalid("center", format!("must be a positive frequency, got {center}")));
        }
        let support = match &model {
            SpectralModel::Gaussian(p) => Some((p.marginal_std_signal(), p.marginal_std_idler())),
            SpectralModel::SincPm(p) => {
                let g = p.matched_gaussian()?;
                Some((g.marginal_std_signal(), g.marginal_std_idler()))
            }
            SpectralModel::Gridded(_) => None,
        };
        if let Some((ss, si)) = support {
            check_support("signal", &signal, REQUIRED_SUPPORT * ss + shift[0].abs())?;
            check_support("idler", &idler, REQUIRED_SUPPORT * si + shift[1].abs())?;
        }
        let mut jsa = Self {
            model,
            center,
            signal,
            idler,
            norm: 1.0,
            shift,
        };
        jsa.norm = match &jsa.model {
            SpectralModel::Gaussian(p) => p.norm_constant(),
            _ => {
                let n2 = jsa.grid_norm_squared(Rule::Simpson);
                if !(n2 > 0.0) {
                    return Err(Error::Empty("joint spectral amplitude vanishes on the grid"));
                }
                1.0 / n2.sqrt()
            }
        };
        Ok(jsa)
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn gaussian_params(&self) -> Option<&GaussianParams> {
        match &self.model {
            SpectralModel::Gaussian(p) => Some(p),
            _ => None,
        }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn signal_grid(&self) -> &FrequencyGrid {
        &self.signal
    }

    pub fn idler_grid(&self) -> &FrequencyGrid {
        &self.idler
    }

    pub fn norm_constant(&self) -> f64 {
        self.norm
    }

    /// Translation applied to the underlying model, (signal, idler).
    pub fn shift(&self) -> [f64; 2] {
        self.shift
    }

    /// Normalized amplitude at detunings (x, y).
    #[inline]
    pub fn amplitude(&self, x: f64, y: f64) -> Complex64 {
        let (u, v) = (x - self.shift[0], y - self.shift[1]);
        match &self.model {
            SpectralModel::Gaussian(p) => Complex64::new(self.norm * p.raw(u, v), 0.0),
            SpectralModel::SincPm(p) => Complex64::new(self.norm * p.raw(u, v), 0.0),
            SpectralModel::Gridded(g) => g.interpolate(u, v) * self.norm,
        }
    }

    /// Amplitudes on the signal × idler grid, row-major with idler fastest.
    pub fn sample(&self) -> Vec<Complex64> {
        let ni = self.idler.len();
        let mut out = Vec::with_capacity(self.signal.len() * ni);
        for i in 0..self.signal.len() {
            let x = self.signal.detuning(i);
            for j in 0..ni {
                out.push(self.amplitude(x, self.idler.detuning(j)));
            }
        }
        out
    }

    fn grid_norm_squared(&self, rule: Rule) -> f64 {
        let ws = self.signal.weights(rule);
        let wi = self.idler.weights(rule);
        let mut total = 0.0;
        for (a, x) in ws.iter().zip(self.signal.detunings()) {
            let mut row = 0.0;
            for (b, y) in wi.iter().zip(self.idler.detunings()) {
                row += b * self.amplitude(x, y).norm_sqr();
            }
            total += a * row;
        }
        total
    }

    /// ∫∫|f|² on the simulation grids.
    pub fn norm_squared(&self) -> f64 {
        self.grid_norm_squared(Rule::Simpson)
    }

    /// Standard deviations of the signal and idler intensity marginals.
    pub fn marginal_stds(&self) -> (f64, f64) {
        match &self.model {
            SpectralModel::Gaussian(p) => (p.marginal_std_signal(), p.marginal_std_idler()),
            _ => {
                let samples = self.sample();
                let ni = self.idler.len();
                let ws = self.signal.weights(Rule::Simpson);
                let wi = self.idler.weights(Rule::Simpson);
                let (mut m0, mut sx, mut sxx, mut sy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..self.signal.len() {
                    let x = self.signal.detuning(i);
                    for j in 0..ni {
                        let y = self.idler.detuning(j);
                        let w = ws[i] * wi[j] * samples[i * ni + j].norm_sqr();
                        m0 += w;
                        sx += w * x;
                        sxx += w * x * x;
                        sy += w * y;
                        syy += w * y * y;
                    }
                }
                let (mx, my) = (sx / m0, sy / m0);
                ((sxx / m0 - mx * mx).sqrt(), (syy / m0 - my * my).sqrt())
            }
        }
    }
}

fn check_support(axis: &'static str, grid: &FrequencyGrid, required: f64) -> Result<()> {
    if grid.half_extent() < required {
        return Err(Error::GridTooSmall {
            axis,
            required,
            available: grid.half_extent(),
        });
    }
    Ok(())
}
