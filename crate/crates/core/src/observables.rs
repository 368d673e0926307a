//! Pure-state observables: heralded JSIs, verification fringes and the summed peak.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::binned::BinnedMap;
use crate::density::{reduced_density, Party, ReducedDensityMatrix};
use crate::error::{invalid, Error, Result};
use crate::grid::FrequencyGrid;
use crate::heralding::{bell_parameters, heralded_modes, transform_phases, BellParameters, HeraldSetting, HeraldedBellState, HeraldedMode};
use crate::jsa::{GaussianParams, JointSpectralAmplitude};
use crate::quadrature::Rule;

/// Probability (or count) samples against a delay axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FringeTrace {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    /// One-sigma uncertainties, empty for noiseless traces.
    pub errors: Vec<f64>,
    pub meta: Vec<(String, String)>,
}

impl FringeTrace {
    pub fn new(tau: Vec<f64>, values: Vec<f64>) -> Self {
        Self {
            tau,
            values,
            errors: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// P(τ_S, τ_I) on a rectangular delay grid, row-major with τ_I fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Peak2D {
    pub tau_s: Vec<f64>,
    pub tau_i: Vec<f64>,
    pub values: Vec<f64>,
}

impl Peak2D {
    #[inline]
    pub fn get(&self, is: usize, ii: usize) -> f64 {
        self.values[is * self.tau_i.len() + ii]
    }
}

/// Evenly spaced delays covering `[start, stop]`.
pub fn delay_axis(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points)
        .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
        .collect()
}

/// F_jk(ω₁, ω₂) = |Ψ(ω₁, ω₂)|² on the signal grid; zero for a degenerate herald.
pub fn heralded_jsi(state: &HeraldedBellState) -> BinnedMap {
    let g = state.a.grid().clone();
    let n = g.len();
    if state.degenerate {
        return BinnedMap::zeros(g.clone(), g);
    }
    let values = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (0..n).map(move |j| state.amplitude(i, j).norm_sqr()))
        .collect();
    BinnedMap {
        x: g.clone(),
        y: g,
        values,
    }
}

/// Two mirror-image spots ½(|a(ω₁)b(ω₂)|² + |c(ω₁)d(ω₂)|²), valid for distant bins.
pub fn heralded_jsi_far_bin(state: &HeraldedBellState) -> BinnedMap {
    let g = state.a.grid().clone();
    let n = g.len();
    let (a, b, c, d) = (state.a.amplitude(), state.b.amplitude(), state.c.amplitude(), state.d.amplitude());
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = 0.5 * ((a[i] * b[j]).norm_sqr() + (c[i] * d[j]).norm_sqr());
        }
    }
    BinnedMap {
        x: g.clone(),
        y: g,
        values,
    }
}

fn amplitude_matrix(jsa: &JointSpectralAmplitude) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(jsa.signal_grid().len(), jsa.idler_grid().len(), &jsa.sample())
}

/// F(ω₁, ω₂) = ½[ρ_S(ω₁,ω₁)ρ_S(ω₂,ω₂) − Γ(ω₁,ω₂;τ_I)] by quadrature over the idler,
/// with Γ = |∫ f(ω₁,Ω) f*(ω₂,Ω) e^{iΩτ_I} dΩ|².
pub fn summed_jsi(jsa: &JointSpectralAmplitude, tau_i: f64) -> Result<BinnedMap> {
    let sg = jsa.signal_grid().clone();
    let ig = jsa.idler_grid();
    let a = amplitude_matrix(jsa);
    let w = ig.weights(Rule::Simpson);
    let mut aw = a.clone();
    for (j, wj) in w.iter().enumerate() {
        let ph = Complex64::from_polar(*wj, ig.detuning(j) * tau_i);
        for v in aw.column_mut(j).iter_mut() {
            *v *= ph;
        }
    }
    let gamma = aw * a.adjoint();
    let rho = reduced_density(jsa, Party::Signal)?;
    let n = sg.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            values[i * n + k] = 0.5 * (rho.get(i, i).re * rho.get(k, k).re - gamma[(i, k)].norm_sqr());
        }
    }
    Ok(BinnedMap {
        x: sg.clone(),
        y: sg,
        values,
    })
}

/// Gaussian closed form of the summed JSI, Γ = |ρ_S(ω₁,ω₂)|² e^{−σ_I²τ_I²}.
pub fn gaussian_summed_jsi(jsa: &JointSpectralAmplitude, tau_i: f64) -> Option<BinnedMap> {
    let p = *jsa.gaussian_params()?;
    let sg = jsa.signal_grid().clone();
    let d = sg.detunings();
    let ds = jsa.shift()[0];
    let damp = (-p.sigma_i * p.sigma_i * tau_i * tau_i).exp();
    let rho = |x: f64, y: f64| crate::density::gaussian_density(&p, Party::Signal, x - ds, y - ds);
    let n = d.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let r = rho(d[i], d[k]);
            values[i * n + k] = 0.5 * (rho(d[i], d[i]) * rho(d[k], d[k]) - r * r * damp);
        }
    }
    Some(BinnedMap {
        x: sg.clone(),
        y: sg,
        values,
    })
}

/// Σ_jk p_jk F_jk ΔΩ_j ΔΩ_k over the herald grid, built from individual heralded states.
pub fn summed_jsi_weighted(jsa: &JointSpectralAmplitude, tau_i: f64, heralds: &FrequencyGrid) -> Result<BinnedMap> {
    let sg = jsa.signal_grid().clone();
    let n = sg.len();
    let h = heralds.detunings();
    let w = heralds.weights(Rule::Simpson);
    let modes = heralded_modes(jsa, &h)?;
    let rows: Vec<Vec<f64>> = (0..h.len())
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![0.0; n * n];
            let a = modes[j].amplitude();
            for k in 0..h.len() {
                let theta = HeraldSetting::new(h[j], h[k], tau_i).theta();
                let bell = bell_parameters(&modes[j], &modes[k], &modes[k], &modes[j], theta);
                if bell.degenerate {
                    continue;
                }
                let b = modes[k].amplitude();
                let scale = bell.pjk * w[j] * w[k];
                let (k1, k2) = bell.kappa;
                for i1 in 0..n {
                    let (x, y) = (k1 * a[i1], k2 * b[i1]);
                    let row = &mut acc[i1 * n..(i1 + 1) * n];
                    for i2 in 0..n {
                        row[i2] += scale * (x * b[i2] + y * a[i2]).norm_sqr();
                    }
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for r in rows {
        for (v, x) in values.iter_mut().zip(r) {
            *v += x;
        }
    }
    Ok(BinnedMap {
        x: sg.clone(),
        y: sg,
        values,
    })
}

/// Exact verification probability P_jk(τ_S) of a heralded state.
///
/// The second signal is delayed by τ_S before the signal beamsplitter.
pub fn pjk_fringe(state: &HeraldedBellState, tau_s: f64) -> f64 {
    if state.degenerate {
        return 0.0;
    }
    let ph = transform_phases(state.a.grid(), tau_s);
    let bell = bell_parameters(&state.a, &state.b, &state.c, &state.d, state.theta);
    fringe_from_modes(&state.a, &state.b, &state.c, &state.d, &bell, state.theta, &ph)
}

/// P = ½[1 − I/𝒩²] with, using G_xy(−τ) = G_yx(τ)*,
/// I = |G_ab|² + β²|G_cd|² − 2β Re(e^{iθ} G_ad G_cb*).
pub(crate) fn fringe_from_modes(
    a: &HeraldedMode,
    b: &HeraldedMode,
    c: &HeraldedMode,
    d: &HeraldedMode,
    bell: &BellParameters,
    theta: f64,
    ph: &[Complex64],
) -> f64 {
    let beta = bell.beta;
    let g_ab = a.correlation_with(b, ph);
    let g_cd = c.correlation_with(d, ph);
    let g_ad = a.correlation_with(d, ph);
    let g_cb = c.correlation_with(b, ph);
    let cross = Complex64::from_polar(1.0, theta) * g_ad * g_cb.conj();
    let i = g_ab.norm_sqr() + beta * beta * g_cd.norm_sqr() - 2.0 * beta * cross.re;
    let n2 = bell.norm * (1.0 + beta * beta);
    (0.5 * (1.0 - i / n2)).clamp(0.0, 1.0)
}

/// Fringe with the O(|⟨φ_j|φ_k⟩|²) terms dropped.
pub fn pjk_fringe_approx(state: &HeraldedBellState, tau_s: f64) -> f64 {
    if state.degenerate {
        return 0.0;
    }
    let ph = transform_phases(state.a.grid(), tau_s);
    let beta = state.beta;
    let x =
        Complex64::from_polar(1.0, state.theta) * state.a.correlation_with(&state.d, &ph) * state.c.correlation_with(&state.b, &ph).conj();
    0.5 * (1.0 + 2.0 * beta * x.re / (1.0 + beta * beta))
}

/// Which evaluation path [`fringes_pjk`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FringeModel {
    /// Quadrature over the heralded modes, all terms.
    #[default]
    Exact,
    /// Quadrature without the small-overlap terms.
    Approx,
    /// Gaussian closed form (identical Gaussian sources only).
    Gaussian,
}

pub fn fringes_pjk(jsa: &JointSpectralAmplitude, state: &HeraldedBellState, taus: &[f64], model: FringeModel) -> Result<FringeTrace> {
    let values: Vec<f64> = match model {
        FringeModel::Exact => taus.par_iter().map(|&t| pjk_fringe(state, t)).collect(),
        FringeModel::Approx => taus.par_iter().map(|&t| pjk_fringe_approx(state, t)).collect(),
        FringeModel::Gaussian => {
            let p = jsa
                .gaussian_params()
                .ok_or_else(|| invalid("model", "closed-form fringes need a Gaussian source"))?;
            if state.degenerate {
                vec![0.0; taus.len()]
            } else {
                taus.iter().map(|&t| gaussian_pjk_fringe(p, state.setting, t)).collect()
            }
        }
    };
    Ok(FringeTrace::new(taus.to_vec(), values)
        .with_meta("omega_j", state.setting.omega_j)
        .with_meta("omega_k", state.setting.omega_k)
        .with_meta("tau_i", state.setting.tau_i)
        .with_meta("model", format!("{model:?}").to_lowercase()))
}

/// Gaussian closed form of P_jk(τ_S, τ_I) for identical sources:
/// [1 + E cos(Δω τ_S + θ) − |⟨φ_j|φ_k⟩|²(E + cos θ)] / 2(1 − |⟨φ_j|φ_k⟩|² cos θ),
/// with E = e^{−σ_S²τ_S²} and Δω = ω_j − ω_k.
pub fn gaussian_pjk_fringe(p: &GaussianParams, setting: HeraldSetting, tau_s: f64) -> f64 {
    let dw = p.herald_center(setting.omega_j) - p.herald_center(setting.omega_k);
    let ov2 = (-dw * dw / (4.0 * p.sigma_s * p.sigma_s)).exp();
    let th = setting.theta();
    let e = (-p.sigma_s * p.sigma_s * tau_s * tau_s).exp();
    let num = 1.0 + e * (dw * tau_s + th).cos() - ov2 * (e + th.cos());
    let den = 2.0 * (1.0 - ov2 * th.cos());
    if den <= 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Distant-bin limit ½[1 + e^{−σ_S²τ_S²} cos(Δω (τ_S − τ_I′))], τ_I′ = τ_I / 2ασ_S².
pub fn far_bin_fringe(p: &GaussianParams, delta_omega: f64, tau_s: f64, tau_i: f64) -> f64 {
    let tip = effective_idler_delay(p, tau_i);
    0.5 * (1.0 + (-p.sigma_s * p.sigma_s * tau_s * tau_s).exp() * (delta_omega * (tau_s - tip)).cos())
}

/// τ_I′ = τ_I / 2ασ_S².
pub fn effective_idler_delay(p: &GaussianParams, tau_i: f64) -> f64 {
    tau_i / (2.0 * p.alpha * p.sigma_s * p.sigma_s)
}

/// Denominator used by the near-degenerate limit at nonzero idler delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateForm {
    /// 1 + 2σ_S²τ_I′², the limit of the closed-form fringe.
    #[default]
    Derived,
    /// 1 + 4(σ_S τ_I′)², with τ_I′ measured in units of 1/σ_S.
    Printed,
}

/// Limit of P_jk as Ω_j → Ω_k:
/// ½ − ½ (2σ_S²(τ_S − τ_I′)² − 1)/D · e^{−σ_S²τ_S²}.
pub fn degenerate_limit(p: &GaussianParams, tau_s: f64, tau_i: f64, form: DegenerateForm) -> f64 {
    let s2 = p.sigma_s * p.sigma_s;
    let tip = if tau_i == 0.0 { 0.0 } else { effective_idler_delay(p, tau_i) };
    let den = match form {
        DegenerateForm::Derived => 1.0 + 2.0 * s2 * tip * tip,
        DegenerateForm::Printed => 1.0 + 4.0 * s2 * tip * tip,
    };
    0.5 - 0.5 * (2.0 * s2 * (tau_s - tip).powi(2) - 1.0) / den * (-s2 * tau_s * tau_s).exp()
}

pub fn fringes_degenerate_limit(jsa: &JointSpectralAmplitude, taus: &[f64], tau_i: f64, form: DegenerateForm) -> Result<FringeTrace> {
    let p = jsa
        .gaussian_params()
        .ok_or_else(|| invalid("model", "the degenerate limit needs a Gaussian source"))?;
    let values = taus.iter().map(|&t| degenerate_limit(p, t, tau_i, form)).collect();
    Ok(FringeTrace::new(taus.to_vec(), values)
        .with_meta("tau_i", tau_i)
        .with_meta("model", format!("degenerate-{form:?}").to_lowercase()))
}

/// ∫∫ |ρ(x,x′)|² e^{i(x−x′)τ} for each τ.
fn density_overlap(rho: &ReducedDensityMatrix, taus: &[f64]) -> Vec<f64> {
    let g = rho.grid();
    let w = g.weights(Rule::Trapezoid);
    let n = g.len();
    let k: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            w[i] * w[j] * rho.get(i, j).norm_sqr()
        })
        .collect();
    taus.par_iter()
        .map(|&t| {
            let ph: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(1.0, g.detuning(i) * t)).collect();
            let mut acc = Complex64::default();
            for i in 0..n {
                let mut row = Complex64::default();
                for j in 0..n {
                    row += ph[j].conj() * k[i * n + j];
                }
                acc += ph[i] * row;
            }
            acc.re
        })
        .collect()
}

/// Summed verification signal
/// P(τ_S, τ_I) = ¼[1 + |∫∫|f|² e^{i(ωτ_S+Ωτ_I)}|² − ∫∫|ρ_I|² e^{i(Ω−Ω′)τ_I} − ∫∫|ρ_S|² e^{i(ω−ω′)τ_S}]
/// evaluated by quadrature on the source grids.
pub fn peak2d(jsa: &JointSpectralAmplitude, tau_s: &[f64], tau_i: &[f64]) -> Result<Peak2D> {
    if tau_s.is_empty() || tau_i.is_empty() {
        return Err(Error::Empty("delay axis"));
    }
    let (sg, ig) = (jsa.signal_grid(), jsa.idler_grid());
    let (ns, ni) = (sg.len(), ig.len());
    // Trapezoid weights for the oscillatory transforms.
    let ws = sg.weights(Rule::Trapezoid);
    let wi = ig.weights(Rule::Trapezoid);
    let samples = jsa.sample();
    let jsi: Vec<f64> = samples.iter().map(|z| z.norm_sqr()).collect();
    // h(Ω, τ_S) = Σ_ω w |f|² e^{iωτ_S}
    let h: Vec<Vec<Complex64>> = tau_s
        .par_iter()
        .map(|&t| {
            let ph: Vec<Complex64> = (0..ns).map(|i| Complex64::from_polar(ws[i], sg.detuning(i) * t)).collect();
            (0..ni).map(|j| (0..ns).map(|i| ph[i] * jsi[i * ni + j]).sum()).collect()
        })
        .collect();
    let phi: Vec<Vec<Complex64>> = tau_i
        .iter()
        .map(|&t| (0..ni).map(|j| Complex64::from_polar(wi[j], ig.detuning(j) * t)).collect())
        .collect();
    let t3 = density_overlap(&reduced_density(jsa, Party::Idler)?, tau_i);
    let t4 = density_overlap(&reduced_density(jsa, Party::Signal)?, tau_s);
    let values: Vec<f64> = (0..tau_s.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let (h, phi, t3, t4) = (&h, &phi, &t3, &t4);
            (0..tau_i.len()).map(move |b| {
                let t2: Complex64 = h[a].iter().zip(&phi[b]).map(|(x, y)| x * y).sum();
                0.25 * (1.0 + t2.norm_sqr() - t3[b] - t4[a])
            })
        })
        .collect();
    Ok(Peak2D {
        tau_s: tau_s.to_vec(),
        tau_i: tau_i.to_vec(),
        values,
    })
}

/// Gaussian closed form ¼[1 + e^{−vᵀΣv} − μ e^{−σ_I²τ_I²} − μ e^{−σ_S²τ_S²}],
/// with Σ the covariance of |f|² and μ the purity.
pub fn gaussian_peak(p: &GaussianParams, tau_s: f64, tau_i: f64) -> f64 {
    let m = p.intensity_precision();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let (sxx, syy, sxy) = (m[1][1] / det, m[0][0] / det, -m[0][1] / det);
    let q = sxx * tau_s * tau_s + 2.0 * sxy * tau_s * tau_i + syy * tau_i * tau_i;
    let mu = p.purity();
    0.25 * (1.0 + (-q).exp() - mu * (-p.sigma_i * p.sigma_i * tau_i * tau_i).exp() - mu * (-p.sigma_s * p.sigma_s * tau_s * tau_s).exp())
}

pub fn gaussian_peak2d(p: &GaussianParams, tau_s: &[f64], tau_i: &[f64]) -> Peak2D {
    let values = tau_s
        .iter()
        .flat_map(|&s| tau_i.iter().map(move |&i| gaussian_peak(p, s, i)))
        .collect();
    Peak2D {
        tau_s: tau_s.to_vec(),
        tau_i: tau_i.to_vec(),
        values,
    }
}

/// Σ_jk p_jk P_jk(τ_S, τ_I) ΔΩ_j ΔΩ_k from individual heralded states.
pub fn peak_weighted(jsa: &JointSpectralAmplitude, heralds: &FrequencyGrid, tau_s: &[f64], tau_i: f64) -> Result<Vec<f64>> {
    let h = heralds.detunings();
    let w = heralds.weights(Rule::Simpson);
    let modes = heralded_modes(jsa, &h)?;
    let phases: Vec<Vec<Complex64>> = tau_s.iter().map(|&t| transform_phases(jsa.signal_grid(), t)).collect();
    let rows: Vec<Vec<f64>> = (0..h.len())
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![0.0; tau_s.len()];
            for k in 0..h.len() {
                let theta = HeraldSetting::new(h[j], h[k], tau_i).theta();
                let (a, c) = (&modes[j], &modes[k]);
                let bell = bell_parameters(a, c, c, a, theta);
                if bell.degenerate {
                    continue;
                }
                let scale = bell.pjk * w[j] * w[k];
                for (acc, ph) in acc.iter_mut().zip(&phases) {
                    *acc += scale * fringe_from_modes(a, c, c, a, &bell, theta, ph);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; tau_s.len()];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    Ok(out)
}
