//! Finite spectral resolution on the idler detection: intensity filter banks
//! and the band-averaged mixed heralded states they produce.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::binned::BinnedMap;
use crate::error::{invalid, Result};
use crate::grid::FrequencyGrid;
use crate::heralding::{
    bell_parameters, heralded_mode_from, idler_marginal_peak, transform_phases, BellParameters, HeraldSetting, HeraldedMode,
};
use crate::jsa::JointSpectralAmplitude;
use crate::observables::{fringe_from_modes, FringeTrace};
use crate::quadrature::gauss_legendre_on;

pub const DEFAULT_BAND_NODES: usize = 16;

/// Transmission profile |t(Ω)|² of the filters in a bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterShape {
    /// Top-hat bins one pitch wide.
    Rect,
    /// exp(−(Ω − Ω_l)²/2σ²), normalized by the bank sum.
    Gaussian { sigma: f64 },
    /// A top-hat bin convolved with a Gaussian response of standard deviation σ,
    /// normalized by the bank sum.
    Smoothed { sigma: f64 },
}

impl FilterShape {
    pub fn label(&self) -> &'static str {
        match self {
            FilterShape::Rect => "rect",
            FilterShape::Gaussian { .. } => "gaussian",
            FilterShape::Smoothed { .. } => "smoothed",
        }
    }

    fn raw(&self, d: f64, pitch: f64) -> f64 {
        let rect = |d: f64| if d >= -0.5 * pitch && d < 0.5 * pitch { 1.0 } else { 0.0 };
        match *self {
            FilterShape::Rect => rect(d),
            FilterShape::Gaussian { sigma } => (-d * d / (2.0 * sigma * sigma)).exp(),
            FilterShape::Smoothed { sigma: 0.0 } => rect(d),
            FilterShape::Smoothed { sigma } => {
                let s = std::f64::consts::SQRT_2 * sigma;
                0.5 * (libm::erf((d + 0.5 * pitch) / s) - libm::erf((d - 0.5 * pitch) / s))
            }
        }
    }

    /// Distance from a filter center beyond which its transmission is negligible.
    fn reach(&self, pitch: f64) -> f64 {
        match *self {
            FilterShape::Rect => 0.5 * pitch,
            FilterShape::Gaussian { sigma } => 0.5 * pitch + 8.0 * sigma * (sigma / pitch).max(1.0),
            FilterShape::Smoothed { sigma } => 0.5 * pitch + 8.0 * sigma,
        }
    }
}

/// Uniform bank of idler filters centered at Ω_l = first + l·pitch (detunings, rad/ps).
///
/// Transmissions vanish outside the covered band [first − pitch/2, last + pitch/2)
/// and sum to one inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBank {
    shape: FilterShape,
    first: f64,
    pitch: f64,
    count: usize,
}

impl FilterBank {
    pub fn new(shape: FilterShape, first: f64, pitch: f64, count: usize) -> Result<Self> {
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(invalid("pitch", format!("must be positive, got {pitch}")));
        }
        if count == 0 {
            return Err(invalid("count", "a bank needs at least one filter"));
        }
        if !first.is_finite() {
            return Err(invalid("first", "must be finite"));
        }
        match shape {
            FilterShape::Gaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                return Err(invalid("sigma", format!("must be positive, got {sigma}")))
            }
            FilterShape::Smoothed { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                return Err(invalid("sigma", format!("must be nonnegative, got {sigma}")))
            }
            _ => {}
        }
        Ok(Self {
            shape,
            first,
            pitch,
            count,
        })
    }

    /// Contiguous bins of width `pitch` tiling `[lo, hi]`, extended up to one pitch at `hi`.
    pub fn covering(shape: FilterShape, lo: f64, hi: f64, pitch: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid("band", format!("empty interval [{lo}, {hi}]")));
        }
        let count = ((hi - lo) / pitch - 1e-9).ceil().max(1.0) as usize;
        Self::new(shape, lo + 0.5 * pitch, pitch, count)
    }

    /// One top-hat bin over the whole of `grid`.
    pub fn full_band(grid: &FrequencyGrid) -> Self {
        let h = grid.half_extent();
        Self {
            shape: FilterShape::Rect,
            first: 0.0,
            pitch: 2.0 * h * (1.0 + 1e-12),
            count: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> FilterShape {
        self.shape
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center(&self, l: usize) -> f64 {
        self.first + l as f64 * self.pitch
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|l| self.center(l)).collect()
    }

    pub fn covered(&self) -> (f64, f64) {
        (self.first - 0.5 * self.pitch, self.center(self.count - 1) + 0.5 * self.pitch)
    }

    pub fn filter(&self, l: usize) -> SpectralFilter {
        assert!(l < self.count, "filter {l} of a {}-filter bank", self.count);
        SpectralFilter { index: l, bank: *self }
    }

    pub fn filters(&self) -> Vec<SpectralFilter> {
        (0..self.count).map(|l| self.filter(l)).collect()
    }

    /// Σ_l |t_l(Ω)|².
    pub fn transmission_sum(&self, omega: f64) -> f64 {
        (0..self.count).map(|l| self.filter(l).transmission(omega)).sum()
    }

    /// max |Σ_lm |t_l(Ω_j)|²|t_m(Ω_k)|² − 1| over all pairs drawn from `omegas`.
    pub fn partition_error(&self, omegas: &[f64]) -> f64 {
        let s: Vec<f64> = omegas.iter().map(|&o| self.transmission_sum(o)).collect();
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        (lo * lo - 1.0).abs().max((hi * hi - 1.0).abs()).max((lo * hi - 1.0).abs())
    }
}

/// Filter `index` of a bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFilter {
    pub index: usize,
    bank: FilterBank,
}

impl SpectralFilter {
    /// A filter forming a bank of its own.
    pub fn single(shape: FilterShape, center: f64, width: f64) -> Result<Self> {
        Ok(FilterBank::new(shape, center, width, 1)?.filter(0))
    }

    pub fn center(&self) -> f64 {
        self.bank.center(self.index)
    }

    pub fn width(&self) -> f64 {
        self.bank.pitch
    }

    pub fn shape(&self) -> FilterShape {
        self.bank.shape
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// |t(Ω)|².
    pub fn transmission(&self, omega: f64) -> f64 {
        let (lo, hi) = self.bank.covered();
        if omega < lo || omega >= hi {
            return 0.0;
        }
        let b = &self.bank;
        let own = b.shape.raw(omega - self.center(), b.pitch);
        if b.shape == FilterShape::Rect {
            return own;
        }
        let total: f64 = (0..b.count).map(|n| b.shape.raw(omega - b.center(n), b.pitch)).sum();
        if total > 0.0 {
            own / total
        } else {
            0.0
        }
    }

    /// Interval outside which the transmission is negligible.
    pub fn support(&self) -> (f64, f64) {
        let r = self.bank.shape.reach(self.bank.pitch);
        let (lo, hi) = self.bank.covered();
        ((self.center() - r).max(lo), (self.center() + r).min(hi))
    }
}

/// Gauss–Legendre rule used for band integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandQuadrature {
    /// Nodes per panel.
    pub nodes: usize,
    /// Widest panel (rad/ps); defaults to a quarter of the idler marginal width.
    pub max_panel: Option<f64>,
}

impl Default for BandQuadrature {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_BAND_NODES,
            max_panel: None,
        }
    }
}

impl BandQuadrature {
    pub fn doubled(self) -> Self {
        Self {
            nodes: 2 * self.nodes,
            ..self
        }
    }

    fn panel_limit(&self, jsa: &JointSpectralAmplitude) -> f64 {
        self.max_panel.unwrap_or_else(|| 0.25 * jsa.marginal_stds().1)
    }

    /// Nodes Ω and weights g·|t(Ω)|² covering the filter support.
    fn nodes_for(&self, f: &SpectralFilter, limit: f64) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = f.support();
        let (mut x, mut w) = (Vec::new(), Vec::new());
        if !(hi > lo) {
            return (x, w);
        }
        let panels = ((hi - lo) / limit).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * h;
            let (xs, ws) = gauss_legendre_on(self.nodes, a, a + h);
            for (xi, wi) in xs.into_iter().zip(ws) {
                let t = f.transmission(xi);
                if t > 0.0 {
                    x.push(xi);
                    w.push(wi * t);
                }
            }
        }
        (x, w)
    }
}

/// Quadrature nodes of one band with their heralded modes; nodes without idler support carry no mode.
#[derive(Debug, Clone)]
struct Band {
    omegas: Vec<f64>,
    weights: Vec<f64>,
    modes: Vec<Option<HeraldedMode>>,
}

fn band(jsa: &JointSpectralAmplitude, f: &SpectralFilter, q: &BandQuadrature, limit: f64, peak: f64) -> Band {
    let (omegas, weights) = q.nodes_for(f, limit);
    let modes = omegas.par_iter().map(|&o| heralded_mode_from(jsa, o, 1, peak).ok()).collect();
    Band { omegas, weights, modes }
}

fn pair_pjk(bl: &Band, bm: &Band, tau_i: f64) -> f64 {
    let mut acc = 0.0;
    for (j, a) in bl.modes.iter().enumerate() {
        let Some(a) = a else { continue };
        for (k, c) in bm.modes.iter().enumerate() {
            let Some(c) = c else { continue };
            let theta = HeraldSetting::new(bl.omegas[j], bm.omegas[k], tau_i).theta();
            acc += bl.weights[j] * bm.weights[k] * bell_parameters(a, c, c, a, theta).pjk;
        }
    }
    acc
}

/// p_lm = ∬ |t_l(Ω_j)|²|t_m(Ω_k)|² p_jk dΩ_j dΩ_k.
pub fn plm(jsa: &JointSpectralAmplitude, l: &SpectralFilter, m: &SpectralFilter, tau_i: f64, q: &BandQuadrature) -> f64 {
    let limit = q.panel_limit(jsa);
    let peak = idler_marginal_peak(jsa);
    let bl = band(jsa, l, q, limit, peak);
    if l == m {
        return pair_pjk(&bl, &bl, tau_i);
    }
    pair_pjk(&bl, &band(jsa, m, q, limit, peak), tau_i)
}

/// p_lm for every band pair of `bank`, row-major in (l, m).
pub fn plm_matrix(jsa: &JointSpectralAmplitude, bank: &FilterBank, tau_i: f64, q: &BandQuadrature) -> Vec<f64> {
    let limit = q.panel_limit(jsa);
    let peak = idler_marginal_peak(jsa);
    let bands: Vec<Band> = bank.filters().iter().map(|f| band(jsa, f, q, limit, peak)).collect();
    let n = bands.len();
    (0..n * n)
        .into_par_iter()
        .map(|i| pair_pjk(&bands[i / n], &bands[i % n], tau_i))
        .collect()
}

/// One pure heralded state of a band ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleMember {
    pub omega_j: f64,
    pub omega_k: f64,
    /// g_j g_k |t_l|²|t_m|² p_jk / p_lm.
    pub weight: f64,
    pub theta: f64,
    pub bell: BellParameters,
    j: usize,
    k: usize,
}

/// ρ_lm as a weighted ensemble of pure heralded states over band quadrature nodes.
#[derive(Debug, Clone)]
pub struct MixedHeraldedState {
    pub l: SpectralFilter,
    pub m: SpectralFilter,
    pub tau_i: f64,
    pub plm: f64,
    pub members: Vec<EnsembleMember>,
    modes: Vec<HeraldedMode>,
    coherence: Matrix2<Complex64>,
}

/// Builds ρ_lm. A band pair without herald probability gives an empty state.
pub fn mixed_heralded_state(
    jsa: &JointSpectralAmplitude,
    l: &SpectralFilter,
    m: &SpectralFilter,
    tau_i: f64,
    q: &BandQuadrature,
) -> Result<MixedHeraldedState> {
    if !tau_i.is_finite() {
        return Err(invalid("tau_i", "must be finite"));
    }
    let limit = q.panel_limit(jsa);
    let peak = idler_marginal_peak(jsa);
    let bl = band(jsa, l, q, limit, peak);
    let bm = if l == m { bl.clone() } else { band(jsa, m, q, limit, peak) };

    let mut modes = Vec::new();
    let index = |b: &Band, modes: &mut Vec<HeraldedMode>| -> Vec<Option<usize>> {
        b.modes
            .iter()
            .map(|md| {
                md.as_ref().map(|md| {
                    modes.push(md.clone());
                    modes.len() - 1
                })
            })
            .collect()
    };
    let il = index(&bl, &mut modes);
    let im = index(&bm, &mut modes);

    let mut members = Vec::new();
    for (j, ij) in il.iter().enumerate() {
        let Some(ij) = *ij else { continue };
        for (k, ik) in im.iter().enumerate() {
            let Some(ik) = *ik else { continue };
            let theta = HeraldSetting::new(bl.omegas[j], bm.omegas[k], tau_i).theta();
            let (a, c) = (&modes[ij], &modes[ik]);
            let bell = bell_parameters(a, c, c, a, theta);
            let weight = bl.weights[j] * bm.weights[k] * bell.pjk;
            if bell.degenerate || !(weight > 0.0) {
                continue;
            }
            members.push(EnsembleMember {
                omega_j: bl.omegas[j],
                omega_k: bm.omegas[k],
                weight,
                theta,
                bell,
                j: ij,
                k: ik,
            });
        }
    }
    let plm: f64 = members.iter().map(|x| x.weight).sum();
    let mut coherence = Matrix2::zeros();
    if plm > 0.0 {
        for x in &mut members {
            x.weight /= plm;
            let s = x.weight / (2.0 * x.bell.norm);
            let e = Complex64::from_polar(1.0, x.theta);
            coherence[(0, 0)] += Complex64::new(s, 0.0);
            coherence[(1, 1)] += Complex64::new(s, 0.0);
            coherence[(0, 1)] -= e.conj() * s;
            coherence[(1, 0)] -= e * s;
        }
    } else {
        members.clear();
    }
    Ok(MixedHeraldedState {
        l: *l,
        m: *m,
        tau_i,
        plm,
        members,
        modes,
        coherence,
    })
}

impl MixedHeraldedState {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.members.iter().map(|x| x.weight).sum()
    }

    /// Band average of (p_jk/2C_jk)[[1, −e^{−iθ}], [−e^{iθ}, 1]] / p_lm, in the
    /// (φ_j φ_k, φ_k φ_j) product basis.
    pub fn coherence_matrix(&self) -> Matrix2<Complex64> {
        self.coherence
    }

    /// Signal grid of the ensemble modes.
    pub fn signal_grid(&self) -> Option<&FrequencyGrid> {
        self.modes.first().map(|m| m.grid())
    }

    fn terms(x: &EnsembleMember) -> [(Complex64, usize, usize); 2] {
        let (k1, k2) = x.bell.kappa;
        [(k1, x.j, x.k), (k2, x.k, x.j)]
    }

    /// Tr ρ² = Σ_ab w_a w_b |⟨Ψ_a|Ψ_b⟩|²; zero for an empty state.
    pub fn purity(&self) -> f64 {
        let n = self.modes.len();
        let gram: Vec<Complex64> = (0..n * n)
            .into_par_iter()
            .map(|i| self.modes[i / n].overlap(&self.modes[i % n]))
            .collect();
        let terms: Vec<_> = self.members.iter().map(Self::terms).collect();
        (0..self.members.len())
            .into_par_iter()
            .map(|a| {
                let wa = self.members[a].weight;
                let mut acc = 0.0;
                for (b, tb) in terms.iter().enumerate() {
                    let mut z = Complex64::default();
                    for &(ca, xa, ya) in &terms[a] {
                        for &(cb, xb, yb) in tb {
                            z += ca.conj() * cb * gram[xa * n + xb] * gram[ya * n + yb];
                        }
                    }
                    acc += self.members[b].weight * z.norm_sqr();
                }
                wa * acc
            })
            .sum()
    }

    /// F_lm(ω₁, ω₂) on the signal grid.
    pub fn jsi(&self) -> Option<BinnedMap> {
        let g = self.signal_grid()?.clone();
        let n = g.len();
        let chunk = self.members.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
        let parts: Vec<Vec<f64>> = self
            .members
            .par_chunks(chunk)
            .map(|xs| {
                let mut acc = vec![0.0; n * n];
                for x in xs {
                    let (a, b) = (self.modes[x.j].amplitude(), self.modes[x.k].amplitude());
                    let (k1, k2) = x.bell.kappa;
                    for i1 in 0..n {
                        let (u, v) = (k1 * a[i1], k2 * b[i1]);
                        let row = &mut acc[i1 * n..(i1 + 1) * n];
                        for i2 in 0..n {
                            row[i2] += x.weight * (u * b[i2] + v * a[i2]).norm_sqr();
                        }
                    }
                }
                acc
            })
            .collect();
        let mut values = vec![0.0; n * n];
        for p in parts {
            for (v, x) in values.iter_mut().zip(p) {
                *v += x;
            }
        }
        Some(BinnedMap {
            x: g.clone(),
            y: g,
            values,
        })
    }

    /// P_lm(τ_S) at the state's idler delay.
    pub fn fringes(&self, taus: &[f64]) -> Option<FringeTrace> {
        let g = self.signal_grid()?;
        let values = taus
            .par_iter()
            .map(|&t| {
                let ph = transform_phases(g, t);
                self.members
                    .iter()
                    .map(|x| {
                        let (a, c) = (&self.modes[x.j], &self.modes[x.k]);
                        x.weight * fringe_from_modes(a, c, c, a, &x.bell, x.theta, &ph)
                    })
                    .sum()
            })
            .collect();
        Some(self.annotate(FringeTrace::new(taus.to_vec(), values)))
    }

    fn annotate(&self, t: FringeTrace) -> FringeTrace {
        t.with_meta("filter_shape", self.l.shape().label())
            .with_meta("filter_width", self.l.width())
            .with_meta("band_l", self.l.center())
            .with_meta("band_m", self.m.center())
            .with_meta("tau_i", self.tau_i)
            .with_meta("plm", self.plm)
    }
}

/// Which band-averaged observable [`mixed_observables`] computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixedObservable<'a> {
    Jsi,
    Fringes(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixedOutput {
    Jsi(BinnedMap),
    Fringes(FringeTrace),
}

/// F_lm or P_lm of a nonempty state.
pub fn mixed_observables(state: &MixedHeraldedState, which: MixedObservable<'_>) -> Result<MixedOutput> {
    if state.is_empty() {
        return Err(crate::error::Error::Empty("mixed heralded state"));
    }
    Ok(match which {
        MixedObservable::Jsi => MixedOutput::Jsi(state.jsi().expect("nonempty")),
        MixedObservable::Fringes(taus) => MixedOutput::Fringes(state.fringes(taus).expect("nonempty")),
    })
}

/// Tr(ρ̂_j ρ̂_k) for the signal states heralded by idlers filtered by `fj` and `fk`,
/// with ρ̂ ∝ ∫ |t(Ω)|² f(ω, Ω) f*(ω′, Ω) dΩ normalized to unit trace.
pub fn hom_purity_bound(jsa: &JointSpectralAmplitude, fj: &SpectralFilter, fk: &SpectralFilter, q: &BandQuadrature) -> f64 {
    let limit = q.panel_limit(jsa);
    let peak = idler_marginal_peak(jsa);
    let weighted = |b: Band| -> Vec<(f64, HeraldedMode)> {
        b.modes
            .into_iter()
            .zip(b.weights)
            .filter_map(|(m, w)| m.map(|m| (w * m.idler_density(), m)))
            .collect()
    };
    let bj = weighted(band(jsa, fj, q, limit, peak));
    let bk = if fj == fk {
        bj.clone()
    } else {
        weighted(band(jsa, fk, q, limit, peak))
    };
    let (tj, tk) = (bj.iter().map(|x| x.0).sum::<f64>(), bk.iter().map(|x| x.0).sum::<f64>());
    if !(tj > 0.0 && tk > 0.0) {
        return 0.0;
    }
    let s: f64 = bj
        .par_iter()
        .map(|(wa, a)| wa * bk.iter().map(|(wb, b)| wb * a.overlap(b).norm_sqr()).sum::<f64>())
        .sum();
    s / (tj * tk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heralding::herald;
    use crate::jsa::GaussianParams;
    use crate::observables::{gaussian_peak, gaussian_pjk_fringe, gaussian_summed_jsi, heralded_jsi};
    use crate::units::angular_frequency;

    fn params() -> GaussianParams {
        GaussianParams::new(2.369, 3.333, 0.06204).unwrap()
    }

    fn jsa(points: usize) -> JointSpectralAmplitude {
        JointSpectralAmplitude::gaussian_with_points(params(), angular_frequency(830.0), points).unwrap()
    }

    // Independent closed forms for the oracle.
    fn rho_i(p: &GaussianParams, x: f64, y: f64) -> f64 {
        let c2 = p.purity() / (2.0 * std::f64::consts::PI * p.sigma_s * p.sigma_i);
        let (a, s, i) = (p.alpha, p.sigma_s, p.sigma_i);
        c2 * (2.0 * std::f64::consts::PI).sqrt() * s * (-(x * x + y * y) / (4.0 * i * i) + 0.5 * a * a * s * s * (x + y).powi(2)).exp()
    }

    fn pjk(p: &GaussianParams, x: f64, y: f64, tau_i: f64) -> f64 {
        let r = rho_i(p, x, y);
        0.5 * (rho_i(p, x, x) * rho_i(p, y, y) - r * r * ((x - y) * tau_i).cos())
    }

    /// Midpoint average of g(x, y) p_jk over two square bands.
    fn band_average(cl: f64, cm: f64, w: f64, n: usize, mut g: impl FnMut(f64, f64) -> f64, tau_i: f64) -> (f64, f64) {
        let p = params();
        let h = w / n as f64;
        let (mut s, mut t) = (0.0, 0.0);
        for a in 0..n {
            let x = cl - 0.5 * w + (a as f64 + 0.5) * h;
            for b in 0..n {
                let y = cm - 0.5 * w + (b as f64 + 0.5) * h;
                let q = pjk(&p, x, y, tau_i) * h * h;
                s += q;
                t += q * g(x, y);
            }
        }
        (s, t / s)
    }

    fn rect(c: f64, w: f64) -> SpectralFilter {
        SpectralFilter::single(FilterShape::Rect, c, w).unwrap()
    }

    fn visibility(t: &FringeTrace) -> f64 {
        (t.max() - t.min()) / (t.max() + t.min())
    }

    #[test]
    fn banks_partition_unity() {
        let omegas: Vec<f64> = (0..401).map(|i| -20.0 + 0.1 * i as f64 - 0.013).collect();
        for shape in [
            FilterShape::Rect,
            FilterShape::Gaussian { sigma: 0.7 },
            FilterShape::Smoothed { sigma: 0.3 },
            FilterShape::Smoothed { sigma: 0.0 },
        ] {
            let bank = FilterBank::covering(shape, -25.0, 25.0, 1.0).unwrap();
            assert!(bank.partition_error(&omegas) < 1e-6, "{shape:?}");
            for f in bank.filters() {
                let (lo, hi) = f.support();
                assert!(f.transmission(lo - 1e-9) < 1e-12 && f.transmission(hi + 1e-9) < 1e-12);
            }
        }
        assert_eq!(FilterBank::full_band(jsa(64).idler_grid()).transmission_sum(0.0), 1.0);
        assert!(FilterBank::new(FilterShape::Rect, 0.0, 0.0, 3).is_err());
    }

    #[test]
    fn plm_delta_limit() {
        let j = jsa(256);
        let p = params();
        let w = 1e-3;
        let v = plm(&j, &rect(3.0, w), &rect(-4.0, w), 0.4, &BandQuadrature::default());
        let e = pjk(&p, 3.0, -4.0, 0.4) * w * w;
        assert!((v / e - 1.0).abs() < 1e-4, "{v} vs {e}");
    }

    #[test]
    fn diagonal_band_scales_as_fourth_power() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let wide = plm(&j, &rect(1.0, 0.4), &rect(1.0, 0.4), 0.0, &q);
        let narrow = plm(&j, &rect(1.0, 0.2), &rect(1.0, 0.2), 0.0, &q);
        assert!((wide / narrow / 16.0 - 1.0).abs() < 0.01, "{}", wide / narrow);
        let (oracle, _) = band_average(1.0, 1.0, 0.4, 200, |_, _| 1.0, 0.0);
        assert!((wide / oracle - 1.0).abs() < 1e-3, "{wide} vs {oracle}");
    }

    #[test]
    fn complete_bank_recovers_total() {
        let j = jsa(256);
        let p = params();
        let h = j.idler_grid().half_extent();
        let bank = FilterBank::covering(FilterShape::Rect, -h, h, 4.0).unwrap();
        for tau in [0.0, 0.3] {
            let total: f64 = plm_matrix(&j, &bank, tau, &BandQuadrature::default()).iter().sum();
            let expected = 0.5 * (1.0 - p.purity() * (-(p.sigma_i * tau).powi(2)).exp());
            assert!((total - expected).abs() < 1e-6, "{tau}: {total} vs {expected}");
        }
    }

    #[test]
    fn ensemble_is_normalized_and_coherent_at_zero_delay() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let s = mixed_heralded_state(&j, &rect(1.0, 0.5), &rect(3.0, 0.5), 0.0, &q).unwrap();
        assert!((s.weight_sum() - 1.0).abs() < 1e-6);
        assert!((s.plm - plm(&j, &s.l, &s.m, 0.0, &q)).abs() < 1e-15);
        let c = s.coherence_matrix();
        assert!((c - c.adjoint()).norm() < 1e-14);
        assert!((c[(0, 1)].norm() - c[(0, 0)].re).abs() < 1e-9 * c[(0, 0)].re);
        let d = mixed_heralded_state(&j, &rect(1.0, 0.5), &rect(3.0, 0.5), 6.0, &q).unwrap();
        let c = d.coherence_matrix();
        assert!(c[(0, 1)].norm() <= (c[(0, 0)].re * c[(1, 1)].re).sqrt());
        assert!(c[(0, 1)].norm() < 0.9 * c[(0, 0)].re);
    }

    #[test]
    fn out_of_band_state_is_empty() {
        let j = jsa(128);
        let s = mixed_heralded_state(&j, &rect(500.0, 1.0), &rect(0.0, 1.0), 0.0, &BandQuadrature::default()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.plm, 0.0);
        assert!(mixed_observables(&s, MixedObservable::Jsi).is_err());
    }

    #[test]
    fn purity_rises_to_one_as_bands_narrow() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let mut last = 0.0;
        let mut w = 4.0;
        for _ in 0..8 {
            let s = mixed_heralded_state(&j, &rect(2.0, w), &rect(-2.0, w), 0.0, &q).unwrap();
            let pur = s.purity();
            assert!(pur <= 1.0 + 1e-9 && pur > 0.0);
            assert!(pur >= last - 1e-6, "width {w}: {pur} < {last}");
            last = pur;
            w /= 2.0;
        }
        assert!(last > 0.999, "{last}");
    }

    #[test]
    fn coherence_decays_with_idler_delay() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let w = 1.0;
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let tau = 0.1 * i as f64 / w;
            let s = mixed_heralded_state(&j, &rect(-12.0, w), &rect(12.0, w), tau, &q).unwrap();
            let off = s.coherence_matrix()[(0, 1)].norm();
            assert!(off < last + 1e-12, "{tau}");
            last = off;
            // Oracle: p_jk/2C = ρ_I(j,j)ρ_I(k,k)/4 for identical sources.
            let p = params();
            let q4 = |x: f64, y: f64| rho_i(&p, x, x) * rho_i(&p, y, y) / (4.0 * pjk(&p, x, y, tau));
            let (_, c) = band_average(-12.0, 12.0, w, 120, |x, y| q4(x, y) * ((x - y) * tau).cos(), tau);
            let (_, sn) = band_average(-12.0, 12.0, w, 120, |x, y| q4(x, y) * ((x - y) * tau).sin(), tau);
            let oracle = c.hypot(sn);
            assert!((off / oracle - 1.0).abs() < 1e-4, "{tau}: {off} vs {oracle}");
        }
    }

    #[test]
    fn narrow_bands_reproduce_pure_observables() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let (oj, ok, tau_i) = (2.0, -3.0, 0.3);
        let s = mixed_heralded_state(&j, &rect(oj, 1e-3), &rect(ok, 1e-3), tau_i, &q).unwrap();
        let taus: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let tr = s.fringes(&taus).unwrap();
        let setting = HeraldSetting::new(oj, ok, tau_i);
        for (t, v) in taus.iter().zip(&tr.values) {
            assert!((v - gaussian_pjk_fringe(&params(), setting, *t)).abs() < 1e-4, "{t}");
        }
        let pure = heralded_jsi(&herald(&j, setting).unwrap());
        let mixed = s.jsi().unwrap();
        assert!(mixed.relative_l2(&pure).unwrap() < 1e-3);
    }

    #[test]
    fn diagonal_band_jsi_stays_antisymmetric() {
        // Every member is antisymmetric at τ_I = 0, so the mixture keeps a dark diagonal;
        // an idler delay mixes in symmetric parts.
        let j = jsa(128);
        let q = BandQuadrature::default();
        let f = rect(0.0, 3.0);
        let diag = |m: &BinnedMap| (0..m.x.len()).map(|i| m.get(i, i)).fold(0.0, f64::max) / m.max();
        let s = mixed_heralded_state(&j, &f, &f, 0.0, &q).unwrap();
        assert!(diag(&s.jsi().unwrap()) < 1e-12);
        let s = mixed_heralded_state(&j, &f, &f, 0.5, &q).unwrap();
        assert!(diag(&s.jsi().unwrap()) > 1e-2);
    }

    #[test]
    fn band_averaged_fringes_match_oracle() {
        let j = jsa(256);
        let w = 1.0;
        let tau_i = 1.0 / (2.0 * w);
        let (cl, cm) = (-4.0, 4.0);
        let s = mixed_heralded_state(&j, &rect(cl, w), &rect(cm, w), tau_i, &BandQuadrature::default()).unwrap();
        let taus: Vec<f64> = (0..61).map(|i| -1.5 + 0.05 * i as f64).collect();
        let tr = s.fringes(&taus).unwrap();
        for (t, v) in taus.iter().zip(&tr.values) {
            let (_, o) = band_average(
                cl,
                cm,
                w,
                100,
                |x, y| gaussian_pjk_fringe(&params(), HeraldSetting::new(x, y, tau_i), *t),
                tau_i,
            );
            assert!((v - o).abs() < 1e-4, "{t}: {v} vs {o}");
        }
        let pure: Vec<f64> = taus
            .iter()
            .map(|&t| gaussian_pjk_fringe(&params(), HeraldSetting::new(cl, cm, tau_i), t))
            .collect();
        let vp = visibility(&FringeTrace::new(taus.clone(), pure));
        assert!(visibility(&tr) < vp);
    }

    #[test]
    fn band_sum_reconstructs_summed_observables() {
        let j = jsa(128);
        let p = params();
        let h = j.idler_grid().half_extent();
        let bank = FilterBank::covering(FilterShape::Rect, -h, h, 8.0).unwrap();
        let q = BandQuadrature {
            nodes: 8,
            max_panel: Some(8.0),
        };
        let taus = [0.0, 0.3, 1.0];
        let mut peak = [0.0; 3];
        let mut jsi = BinnedMap::zeros(j.signal_grid().clone(), j.signal_grid().clone());
        let filters = bank.filters();
        for l in &filters {
            for m in &filters {
                let s = mixed_heralded_state(&j, l, m, 0.0, &q).unwrap();
                if s.is_empty() || s.plm < 1e-14 {
                    continue;
                }
                for (a, v) in peak.iter_mut().zip(&s.fringes(&taus).unwrap().values) {
                    *a += s.plm * v;
                }
                for (a, v) in jsi.values.iter_mut().zip(&s.jsi().unwrap().values) {
                    *a += s.plm * v;
                }
            }
        }
        for (t, v) in taus.iter().zip(peak) {
            assert!((v - gaussian_peak(&p, *t, 0.0)).abs() < 1e-5, "{t}: {v}");
        }
        let f = gaussian_summed_jsi(&j, 0.0).unwrap();
        assert!(jsi.relative_l2(&f).unwrap() < 1e-5, "{}", jsi.relative_l2(&f).unwrap());
    }

    #[test]
    fn band_averaging_kills_idler_delay_fringes() {
        let j = jsa(256);
        let p = params();
        let q = BandQuadrature::default();
        let taus: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
        let vis = |tau_i: f64| {
            let s = mixed_heralded_state(&j, &rect(-10.0, 20.0), &rect(10.0, 20.0), tau_i, &q).unwrap();
            visibility(&s.fringes(&taus).unwrap())
        };
        let (v0, v3) = (vis(0.0), vis(3.0 / p.sigma_i));
        assert!(v3 < 0.1 * v0, "{v3} vs {v0}");
    }

    #[test]
    fn hom_bound_limits() {
        let j = jsa(256);
        let q = BandQuadrature::default();
        let f = rect(1.5, 1e-4);
        assert!(hom_purity_bound(&j, &f, &f, &q) > 1.0 - 1e-6);
        let full = FilterBank::full_band(j.idler_grid()).filter(0);
        let v = hom_purity_bound(&j, &full, &full, &q);
        assert!((v - params().purity()).abs() < 1e-4, "{v}");
        let g = rect(-4.0, 1e-4);
        let cross = hom_purity_bound(&j, &f, &g, &q);
        let ov = gaussian_mode_overlap_sq(1.5, -4.0);
        assert!((cross - ov).abs() < 1e-5, "{cross} vs {ov}");
    }

    fn gaussian_mode_overlap_sq(x: f64, y: f64) -> f64 {
        let p = params();
        let d = 2.0 * p.alpha * p.sigma_s * p.sigma_s * (x - y);
        (-d * d / (4.0 * p.sigma_s * p.sigma_s)).exp()
    }
}
