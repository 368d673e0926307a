//! Frequency-resolved Bell-state measurement on the idlers and the heralded
//! two-signal states it prepares.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::binned::BinnedMap;
use crate::density::{gaussian_density_of, reduced_density, Party};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::jsa::{JointSpectralAmplitude, SpectralModel};
use crate::quadrature::Rule;

/// Heralding frequencies below this fraction of the idler marginal peak are refused.
pub const VANISHING_SUPPORT: f64 = 1e-12;
/// Norms below this mark a measure-zero herald.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Idler detection frequencies at the two BSM outputs and the idler delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldSetting {
    pub omega_j: f64,
    pub omega_k: f64,
    pub tau_i: f64,
}

impl HeraldSetting {
    pub fn new(omega_j: f64, omega_k: f64, tau_i: f64) -> Self {
        Self { omega_j, omega_k, tau_i }
    }

    /// θ_jk = (Ω_j − Ω_k) τ_I.
    pub fn theta(&self) -> f64 {
        (self.omega_j - self.omega_k) * self.tau_i
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.omega_k, self.omega_j, self.tau_i)
    }
}

/// Normalized signal mode conditioned on an idler detected at `herald`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedMode {
    grid: FrequencyGrid,
    amplitude: Vec<Complex64>,
    weights: Vec<f64>,
    herald: f64,
    center: f64,
    idler_density: f64,
    source: usize,
}

impl HeraldedMode {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn amplitude(&self) -> &[Complex64] {
        &self.amplitude
    }

    pub fn herald(&self) -> f64 {
        self.herald
    }

    /// First moment of |φ|² (detuning, rad/ps).
    pub fn center(&self) -> f64 {
        self.center
    }

    /// ρ_I(Ω, Ω) of the source at the heralding frequency.
    pub fn idler_density(&self) -> f64 {
        self.idler_density
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitude.iter().zip(&self.weights).map(|(a, w)| w * a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn overlap(&self, other: &HeraldedMode) -> Complex64 {
        self.amplitude
            .iter()
            .zip(&other.amplitude)
            .zip(&self.weights)
            .map(|((a, b), w)| a.conj() * b * *w)
            .sum()
    }

    /// ∫ φ_self* φ_other e^{iωτ} dω.
    pub fn correlation(&self, other: &HeraldedMode, tau: f64) -> Complex64 {
        self.correlation_with(other, &transform_phases(&self.grid, tau))
    }

    /// Correlation against precomputed [`transform_phases`].
    #[inline]
    pub fn correlation_with(&self, other: &HeraldedMode, phases: &[Complex64]) -> Complex64 {
        self.amplitude
            .iter()
            .zip(&other.amplitude)
            .zip(phases)
            .map(|((a, b), p)| a.conj() * b * p)
            .sum()
    }

    /// Standard deviation of |φ|².
    pub fn intensity_std(&self) -> f64 {
        let m2: f64 = self
            .amplitude
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (a, w))| w * a.norm_sqr() * self.grid.detuning(i).powi(2))
            .sum();
        (m2 - self.center * self.center).max(0.0).sqrt()
    }
}

/// Trapezoid weights times e^{iωτ} on `grid`.
///
/// Simpson's alternating weights alias Fourier-type integrals at half the
/// Nyquist delay; the trapezoid rule is spectrally accurate for smooth,
/// decaying integrands.
pub fn transform_phases(grid: &FrequencyGrid, tau: f64) -> Vec<Complex64> {
    let n = grid.len();
    let h = grid.spacing();
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            Complex64::from_polar(w, grid.detuning(i) * tau)
        })
        .collect()
}

/// Peak of the idler marginal ρ_I(Ω, Ω) over the idler grid.
pub fn idler_marginal_peak(jsa: &JointSpectralAmplitude) -> f64 {
    if let Some(v) = gaussian_density_of(jsa, Party::Idler, jsa.shift()[1], jsa.shift()[1]) {
        return v;
    }
    let ig = jsa.idler_grid();
    (0..ig.len()).map(|j| idler_density_at(jsa, ig.detuning(j))).fold(0.0, f64::max)
}

/// ρ_I(Ω, Ω) by quadrature over the signal grid.
pub fn idler_density_at(jsa: &JointSpectralAmplitude, omega: f64) -> f64 {
    let sg = jsa.signal_grid();
    let w = sg.weights(Rule::Simpson);
    (0..sg.len()).map(|i| w[i] * jsa.amplitude(sg.detuning(i), omega).norm_sqr()).sum()
}

/// φ(ω) = f(ω, Ω)/√ρ_I(Ω, Ω) on the signal grid of `jsa`.
pub fn heralded_mode(jsa: &JointSpectralAmplitude, omega: f64) -> Result<HeraldedMode> {
    heralded_mode_from(jsa, omega, 1, idler_marginal_peak(jsa))
}

pub(crate) fn heralded_mode_from(jsa: &JointSpectralAmplitude, omega: f64, source: usize, peak: f64) -> Result<HeraldedMode> {
    let grid = jsa.signal_grid().clone();
    let weights = grid.weights(Rule::Simpson);
    let raw: Vec<Complex64> = (0..grid.len()).map(|i| jsa.amplitude(grid.detuning(i), omega)).collect();
    let n: f64 = raw.iter().zip(&weights).map(|(a, w)| w * a.norm_sqr()).sum();
    if !jsa.idler_grid().contains(omega) || !(n > VANISHING_SUPPORT * peak) {
        return Err(Error::VanishingSupport { omega });
    }
    let s = 1.0 / n.sqrt();
    let amplitude: Vec<Complex64> = raw.iter().map(|a| a * s).collect();
    let center = amplitude
        .iter()
        .zip(&weights)
        .enumerate()
        .map(|(i, (a, w))| w * a.norm_sqr() * grid.detuning(i))
        .sum();
    Ok(HeraldedMode {
        grid,
        amplitude,
        weights,
        herald: omega,
        center,
        idler_density: n,
        source,
    })
}

/// Heralded signal state
/// Ψ(ω₁, ω₂) ∝ w_a a(ω₁) b(ω₂) − e^{iθ} w_c c(ω₁) d(ω₂),
/// with a = φ_j¹, b = φ_k², c = φ_k¹, d = φ_j² and w the √ρ_I weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedBellState {
    pub setting: HeraldSetting,
    pub a: HeraldedMode,
    pub b: HeraldedMode,
    pub c: HeraldedMode,
    pub d: HeraldedMode,
    /// w_c / w_a; equal to one for identical sources.
    pub beta: f64,
    pub theta: f64,
    /// 1 − Re(e^{iθ}⟨a|c⟩⟨b|d⟩) scaled to the general weights; 1 − |⟨φ_j|φ_k⟩|² cos θ for identical sources.
    pub norm: f64,
    pub pjk: f64,
    pub degenerate: bool,
    kappa: (Complex64, Complex64),
}

impl HeraldedBellState {
    /// Squared norm of the unnormalized state with unit weight on the first term.
    pub fn norm_squared(&self) -> f64 {
        self.norm * (1.0 + self.beta * self.beta)
    }

    /// ⟨φ_j|φ_k⟩ of the first source.
    pub fn mode_overlap(&self) -> Complex64 {
        self.a.overlap(&self.c)
    }

    /// Coefficients (κ_ab, κ_cd) with Ψ = κ_ab a b + κ_cd c d, normalized.
    pub fn coefficients(&self) -> (Complex64, Complex64) {
        self.kappa
    }

    /// Normalized two-photon amplitude at signal grid indices (i₁, i₂).
    pub fn amplitude(&self, i1: usize, i2: usize) -> Complex64 {
        let (k1, k2) = self.coefficients();
        k1 * self.a.amplitude[i1] * self.b.amplitude[i2] + k2 * self.c.amplitude[i1] * self.d.amplitude[i2]
    }
}

/// Modes heralded at each of `omegas`, all from one source.
pub fn heralded_modes(jsa: &JointSpectralAmplitude, omegas: &[f64]) -> Result<Vec<HeraldedMode>> {
    let peak = idler_marginal_peak(jsa);
    omegas.iter().map(|&o| heralded_mode_from(jsa, o, 1, peak)).collect()
}

/// Heralded state of two identical sources.
pub fn herald(jsa: &JointSpectralAmplitude, setting: HeraldSetting) -> Result<HeraldedBellState> {
    herald_pair(jsa, jsa, setting)
}

/// Heralded state of two possibly different sources sharing a signal grid.
pub fn herald_pair(
    source1: &JointSpectralAmplitude,
    source2: &JointSpectralAmplitude,
    setting: HeraldSetting,
) -> Result<HeraldedBellState> {
    if source1.signal_grid() != source2.signal_grid() {
        return Err(Error::AxisMismatch("sources use different signal grids".into()));
    }
    let p1 = idler_marginal_peak(source1);
    let p2 = if std::ptr::eq(source1, source2) {
        p1
    } else {
        idler_marginal_peak(source2)
    };
    let a = heralded_mode_from(source1, setting.omega_j, 1, p1)?;
    let c = heralded_mode_from(source1, setting.omega_k, 1, p1)?;
    let (b, d) = if std::ptr::eq(source1, source2) {
        let mut b = c.clone();
        let mut d = a.clone();
        b.source = 2;
        d.source = 2;
        (b, d)
    } else {
        (
            heralded_mode_from(source2, setting.omega_k, 2, p2)?,
            heralded_mode_from(source2, setting.omega_j, 2, p2)?,
        )
    };
    let bell = bell_parameters(&a, &b, &c, &d, setting.theta());
    Ok(HeraldedBellState {
        setting,
        a,
        b,
        c,
        d,
        beta: bell.beta,
        theta: setting.theta(),
        norm: bell.norm,
        pjk: bell.pjk,
        degenerate: bell.degenerate,
        kappa: bell.kappa,
    })
}

/// Scalars of the heralded state built from modes a, b, c, d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellParameters {
    pub beta: f64,
    pub norm: f64,
    pub pjk: f64,
    pub degenerate: bool,
    /// Normalized coefficients of a·b and c·d.
    pub kappa: (Complex64, Complex64),
}

pub fn bell_parameters(a: &HeraldedMode, b: &HeraldedMode, c: &HeraldedMode, d: &HeraldedMode, theta: f64) -> BellParameters {
    let wa2 = a.idler_density * b.idler_density;
    let wc2 = c.idler_density * d.idler_density;
    let beta = (wc2 / wa2).sqrt();
    let cross = Complex64::from_polar(1.0, theta) * a.overlap(c) * b.overlap(d);
    let norm_sq = (1.0 + beta * beta - 2.0 * beta * cross.re).max(0.0);
    let norm = norm_sq / (1.0 + beta * beta);
    let degenerate = norm <= DEGENERATE_NORM;
    let kappa = if degenerate {
        (Complex64::default(), Complex64::default())
    } else {
        let s = 1.0 / norm_sq.sqrt();
        (Complex64::new(s, 0.0), -Complex64::from_polar(beta * s, theta))
    };
    BellParameters {
        beta,
        norm,
        pjk: 0.25 * wa2 * norm_sq,
        degenerate,
        kappa,
    }
}

/// p_jk = ½[ρ_I(Ω_j,Ω_j)ρ_I(Ω_k,Ω_k) − |ρ_I(Ω_j,Ω_k)|² cos θ] for a Gaussian source.
pub fn gaussian_pjk(jsa: &JointSpectralAmplitude, setting: HeraldSetting) -> Option<f64> {
    let (j, k) = (setting.omega_j, setting.omega_k);
    let nj = gaussian_density_of(jsa, Party::Idler, j, j)?;
    let nk = gaussian_density_of(jsa, Party::Idler, k, k)?;
    let r = gaussian_density_of(jsa, Party::Idler, j, k)?;
    Some((0.5 * (nj * nk - r * r * setting.theta().cos())).max(0.0))
}

/// |⟨φ_j|φ_k⟩| for a Gaussian source.
pub fn gaussian_mode_overlap(jsa: &JointSpectralAmplitude, omega_j: f64, omega_k: f64) -> Option<f64> {
    let p = jsa.gaussian_params()?;
    let d = p.herald_center(omega_j) - p.herald_center(omega_k);
    Some((-d * d / (8.0 * p.sigma_s * p.sigma_s)).exp())
}

/// p_jk over the idler grid × grid.
///
/// Gaussian sources use the closed form anywhere; other models use the
/// quadrature ρ_I and require `grid` to be the source's own idler grid.
pub fn pjk_map(jsa: &JointSpectralAmplitude, tau_i: f64, grid: &FrequencyGrid) -> Result<BinnedMap> {
    let n = grid.len();
    let d = grid.detunings();
    let values: Vec<f64> = match jsa.model() {
        SpectralModel::Gaussian(_) => (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let d = &d;
                (0..n).map(move |j| gaussian_pjk(jsa, HeraldSetting::new(d[i], d[j], tau_i)).unwrap_or(0.0))
            })
            .collect(),
        _ => {
            if grid != jsa.idler_grid() {
                return Err(Error::AxisMismatch("pjk map must use the idler grid of a sampled source".into()));
            }
            let rho = reduced_density(jsa, Party::Idler)?;
            (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let (rho, d) = (&rho, &d);
                    (0..n).map(move |j| {
                        let th = (d[i] - d[j]) * tau_i;
                        let v = rho.get(i, i).re * rho.get(j, j).re - rho.get(i, j).norm_sqr() * th.cos();
                        (0.5 * v).max(0.0)
                    })
                })
                .collect()
        }
    };
    BinnedMap::new(grid.clone(), grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::gaussian_density;
    use crate::jsa::GaussianParams;
    use crate::units::angular_frequency;
    use proptest::prelude::*;

    fn params() -> GaussianParams {
        GaussianParams::new(2.369, 3.333, 0.062).unwrap()
    }

    fn jsa_with(p: GaussianParams, n: usize) -> JointSpectralAmplitude {
        JointSpectralAmplitude::gaussian_with_points(p, angular_frequency(830.0), n).unwrap()
    }

    #[test]
    fn centered_herald_gives_centered_mode() {
        let j = jsa_with(params(), 256);
        let m = heralded_mode(&j, 0.0).unwrap();
        assert!(m.center().abs() < 1e-10);
        assert!((m.norm_squared() - 1.0).abs() < 1e-12);
        assert!((m.intensity_std() - params().sigma_s).abs() < 1e-6);
    }

    #[test]
    fn separable_mode_ignores_herald() {
        let j = jsa_with(GaussianParams::new(2.0, 3.0, 0.0).unwrap(), 256);
        let a = heralded_mode(&j, -4.0).unwrap();
        let b = heralded_mode(&j, 5.0).unwrap();
        assert!((a.overlap(&b).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn vanishing_support_is_refused() {
        let j = jsa_with(params(), 256);
        assert!(matches!(heralded_mode(&j, 200.0), Err(Error::VanishingSupport { .. })));
    }

    #[test]
    fn degenerate_herald_is_flagged() {
        let j = jsa_with(params(), 256);
        let s = herald(&j, HeraldSetting::new(3.0, 3.0, 0.0)).unwrap();
        assert!(s.degenerate);
        assert!(s.pjk.abs() < 1e-12);
        assert_eq!(s.coefficients().0, Complex64::default());
    }

    #[test]
    fn separable_idlers_always_bunch() {
        let j = jsa_with(GaussianParams::new(2.0, 3.0, 0.0).unwrap(), 128);
        let map = pjk_map(&j, 0.0, j.idler_grid()).unwrap();
        assert!(map.max() < 1e-15);
    }

    #[test]
    fn far_bins_are_nearly_orthogonal() {
        let j = jsa_with(params(), 256);
        let s = herald(&j, HeraldSetting::new(15.708, -15.708, 0.0)).unwrap();
        assert!((s.norm - 1.0).abs() < 1e-3, "{}", s.norm);
    }

    #[test]
    fn appendix_identity_and_gaussian_overlap() {
        let j = jsa_with(params(), 512);
        let p = params();
        for (oj, ok) in [(0.0, 2.0), (3.0, -4.0), (-7.0, 6.5), (1.0, 12.0)] {
            let a = heralded_mode(&j, oj).unwrap();
            let b = heralded_mode(&j, ok).unwrap();
            let ov = a.overlap(&b);
            let nj = gaussian_density(&p, Party::Idler, oj, oj);
            let nk = gaussian_density(&p, Party::Idler, ok, ok);
            let r = gaussian_density(&p, Party::Idler, oj, ok);
            assert!((ov - Complex64::new(r / (nj * nk).sqrt(), 0.0)).norm() < 1e-6);
            let g = gaussian_mode_overlap(&j, oj, ok).unwrap();
            assert!((ov.norm_sqr() - g * g).abs() < 1e-6);
            assert!((a.center() - p.herald_center(oj)).abs() < 1e-6);
            assert!((a.idler_density() - nj).abs() < 1e-6 * nj);
        }
    }

    #[test]
    fn quadrature_herald_matches_closed_forms() {
        let j = jsa_with(params(), 512);
        for (oj, ok, t) in [(2.0, -1.0, 0.0), (4.0, -6.0, 0.13), (-3.0, 9.0, -0.4)] {
            let set = HeraldSetting::new(oj, ok, t);
            let s = herald(&j, set).unwrap();
            let g = gaussian_mode_overlap(&j, oj, ok).unwrap();
            let c = 1.0 - g * g * set.theta().cos();
            assert!((s.norm - c).abs() < 1e-8, "{} vs {c}", s.norm);
            let pg = gaussian_pjk(&j, set).unwrap();
            assert!((s.pjk - pg).abs() < 1e-6 * pg.max(1e-12), "{} vs {pg}", s.pjk);
        }
    }

    #[test]
    fn pjk_map_structure() {
        let j = jsa_with(params(), 128);
        let g = j.idler_grid().clone();
        let m = pjk_map(&j, 0.0, &g).unwrap();
        for i in 0..g.len() {
            assert_eq!(m.get(i, i), 0.0);
            for k in 0..g.len() {
                assert!((m.get(i, k) - m.get(k, i)).abs() <= 1e-15);
            }
        }
        let total = m.integrate(Rule::Simpson);
        let purity = j.gaussian_params().unwrap().purity();
        assert!((total - 0.5 * (1.0 - purity)).abs() < 1e-6, "{total}");
    }

    #[test]
    fn sampled_source_map_matches_closed_form() {
        let j = jsa_with(params(), 128);
        let g = j.to_gridded().unwrap();
        let a = pjk_map(&j, 0.2, j.idler_grid()).unwrap();
        let b = pjk_map(&g, 0.2, g.idler_grid()).unwrap();
        let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6 * a.max());
    }

    #[test]
    fn delay_periodicity() {
        let j = jsa_with(params(), 128);
        let (oj, ok) = (4.0, -3.0);
        let p0 = gaussian_pjk(&j, HeraldSetting::new(oj, ok, 0.0)).unwrap();
        let t = 2.0 * std::f64::consts::PI / (oj - ok);
        let p1 = gaussian_pjk(&j, HeraldSetting::new(oj, ok, t)).unwrap();
        assert!((p0 - p1).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pjk_nonnegative_and_exchange_symmetric(
            oj in -15.0f64..15.0, ok in -15.0f64..15.0, t in -2.0f64..2.0,
        ) {
            let j = jsa_with(params(), 64);
            let p = gaussian_pjk(&j, HeraldSetting::new(oj, ok, t)).unwrap();
            let q = gaussian_pjk(&j, HeraldSetting::new(ok, oj, -t)).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert_eq!(p, q);
        }
    }
}
