//! Two sources that differ by a spectral translation: overlap, per-bin fringe
//! visibility and pump-phase interference.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::heralding::{heralded_mode_from, idler_marginal_peak};
use crate::jsa::{GaussianParams, JointSpectralAmplitude};
use crate::observables::FringeTrace;
use crate::quadrature::Rule;

/// Two sources on a common grid. Source 2 carries the relative pump phase in
/// the phase-scan observables.
#[derive(Debug, Clone)]
pub struct SourcePair {
    pub source1: JointSpectralAmplitude,
    pub source2: JointSpectralAmplitude,
}

impl SourcePair {
    pub fn new(source1: JointSpectralAmplitude, source2: JointSpectralAmplitude) -> Result<Self> {
        if source1.signal_grid() != source2.signal_grid() || source1.idler_grid() != source2.idler_grid() {
            return Err(Error::AxisMismatch("sources must share signal and idler grids".into()));
        }
        Ok(Self { source1, source2 })
    }

    pub fn identical(jsa: &JointSpectralAmplitude) -> Self {
        Self {
            source1: jsa.clone(),
            source2: jsa.clone(),
        }
    }

    /// Source 2 is source 1 translated by `(d_s, d_i)` rad/ps.
    pub fn translated(jsa: &JointSpectralAmplitude, d_s: f64, d_i: f64) -> Result<Self> {
        Self::new(jsa.clone(), jsa.translated(d_s, d_i)?)
    }

    /// Translation of source 2 along `direction` chosen so that |∫∫ f₁* f₂| = `target`.
    pub fn with_overlap(jsa: &JointSpectralAmplitude, target: f64, direction: [f64; 2]) -> Result<Self> {
        if !(target > 0.0 && target <= 1.0) {
            return Err(invalid("overlap", format!("must lie in (0, 1], got {target}")));
        }
        let norm = direction[0].hypot(direction[1]);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("direction", "must be a nonzero vector"));
        }
        let u = [direction[0] / norm, direction[1] / norm];
        let at = |t: f64| -> Result<f64> { Ok(overlap(&Self::translated(jsa, t * u[0], t * u[1])?)?.norm()) };
        let (ms, mi) = jsa.marginal_stds();
        let (mut lo, mut hi) = (0.0, 0.25 * ms.min(mi));
        while at(hi)? > target {
            hi *= 2.0;
            if hi > jsa.signal_grid().half_extent().max(jsa.idler_grid().half_extent()) {
                return Err(invalid("overlap", format!("{target} is not reachable on the grid")));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        Self::translated(jsa, t * u[0], t * u[1])
    }

    /// Translation of source 2 relative to source 1, (signal, idler).
    pub fn offsets(&self) -> [f64; 2] {
        let (a, b) = (self.source1.shift(), self.source2.shift());
        [b[0] - a[0], b[1] - a[1]]
    }
}

/// Weighted sample matrix √w_s f √w_i, signal rows.
fn weighted(jsa: &JointSpectralAmplitude) -> DMatrix<Complex64> {
    let (sg, ig) = (jsa.signal_grid(), jsa.idler_grid());
    let ws: Vec<f64> = sg.weights(Rule::Trapezoid).iter().map(|w| w.max(0.0).sqrt()).collect();
    let wi: Vec<f64> = ig.weights(Rule::Trapezoid).iter().map(|w| w.max(0.0).sqrt()).collect();
    let s = jsa.sample();
    let ni = ig.len();
    DMatrix::from_fn(sg.len(), ni, |i, j| s[i * ni + j] * (ws[i] * wi[j]))
}

/// ∫∫ f₁* f₂.
pub fn overlap(pair: &SourcePair) -> Result<Complex64> {
    let (sg, ig) = (pair.source1.signal_grid(), pair.source1.idler_grid());
    let ws = sg.weights(Rule::Simpson);
    let wi = ig.weights(Rule::Simpson);
    let (a, b) = (pair.source1.sample(), pair.source2.sample());
    let ni = ig.len();
    let mut acc = Complex64::default();
    for (i, x) in ws.iter().enumerate() {
        let row: Complex64 = (0..ni).map(|j| a[i * ni + j].conj() * b[i * ni + j] * wi[j]).sum();
        acc += row * x;
    }
    if !(acc.re.is_finite() && acc.im.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    Ok(acc)
}

/// exp(−dᵀ M d / 8) for a Gaussian source translated by d = (d_s, d_i), M the intensity precision.
pub fn gaussian_overlap(p: &GaussianParams, d_s: f64, d_i: f64) -> f64 {
    let m = p.intensity_precision();
    (-(m[0][0] * d_s * d_s + 2.0 * m[0][1] * d_s * d_i + m[1][1] * d_i * d_i) / 8.0).exp()
}

/// |⟨φ_j¹|φ_j²⟩| for a translated Gaussian source; the same at every herald frequency.
pub fn gaussian_bin_factor(p: &GaussianParams, d_s: f64, d_i: f64) -> f64 {
    let shift = d_s + 2.0 * p.alpha * p.sigma_s * p.sigma_s * d_i;
    (-shift * shift / (8.0 * p.sigma_s * p.sigma_s)).exp()
}

/// The two factors ⟨φ_j¹|φ_j²⟩ and ⟨φ_k¹|φ_k²⟩.
pub fn vjk_factors(pair: &SourcePair, omega_j: f64, omega_k: f64) -> Result<(Complex64, Complex64)> {
    let p1 = idler_marginal_peak(&pair.source1);
    let p2 = idler_marginal_peak(&pair.source2);
    let f = |o: f64| -> Result<Complex64> {
        let a = heralded_mode_from(&pair.source1, o, 1, p1)?;
        let b = heralded_mode_from(&pair.source2, o, 2, p2)?;
        Ok(a.overlap(&b))
    };
    Ok((f(omega_j)?, f(omega_k)?))
}

/// V_jk = |⟨φ_j¹|φ_j²⟩|·|⟨φ_k¹|φ_k²⟩|. Factor phases shift the fringe rather than
/// reduce its contrast.
pub fn vjk(pair: &SourcePair, omega_j: f64, omega_k: f64) -> Result<f64> {
    let (a, b) = vjk_factors(pair, omega_j, omega_k)?;
    Ok((a.norm() * b.norm()).min(1.0))
}

/// Detector pairing for the two-fold phase fringes: one signal port and one idler port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PortPairing {
    /// Idler port c with signal port x.
    #[default]
    CX,
    CY,
    DX,
    DY,
}

impl PortPairing {
    /// +1 where the two sources' amplitudes add, −1 where they subtract.
    pub fn sign(self) -> f64 {
        match self {
            PortPairing::CX | PortPairing::DY => 1.0,
            PortPairing::CY | PortPairing::DX => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PortPairing::CX => "cx",
            PortPairing::CY => "cy",
            PortPairing::DX => "dx",
            PortPairing::DY => "dy",
        }
    }
}

impl std::str::FromStr for PortPairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cx" | "xc" => Ok(PortPairing::CX),
            "cy" | "yc" => Ok(PortPairing::CY),
            "dx" | "xd" => Ok(PortPairing::DX),
            "dy" | "yd" => Ok(PortPairing::DY),
            _ => Err(invalid("pairing", format!("unknown port pair `{s}`"))),
        }
    }
}

/// P_cc(Δφ) = ½(1 ± Re e^{iΔφ}∫∫ f₁* f₂) at each pump phase.
pub fn twofold_fringes(pair: &SourcePair, pairing: PortPairing, phases: &[f64]) -> Result<FringeTrace> {
    let o = overlap(pair)?;
    let values = phases
        .iter()
        .map(|&ph| 0.5 * (1.0 + pairing.sign() * (Complex64::from_polar(1.0, ph) * o).re))
        .collect();
    Ok(FringeTrace::new(phases.to_vec(), values)
        .with_meta("axis", "pump_phase")
        .with_meta("pairing", pairing.label())
        .with_meta("overlap", o.norm()))
}

/// Terms of the all-port four-fold probability with coherent pump phase, to second
/// order in the pair amplitudes:
/// P₄(Δφ) = η₁² U₁ + η₂² U₂ + η₁η₂ W + 2η₁η₂ Re(e^{2iΔφ} X).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourfoldTerms {
    /// Two pairs from source 1, (1 + Tr ρ₁²)/8.
    pub single1: f64,
    /// Two pairs from source 2.
    pub single2: f64,
    /// One pair from each source, ¼(1 + |O|² − Tr ρ_I¹ρ_I² − Tr ρ_S¹ρ_S²).
    pub cross: f64,
    /// Coherence between the two double-pair terms, (O² + Tr K²)/8 with K = ∫ f₁* f₂ dω.
    pub coherence: Complex64,
}

impl FourfoldTerms {
    pub fn probability(&self, eta1: f64, eta2: f64, phase: f64) -> f64 {
        eta1 * eta1 * self.single1
            + eta2 * eta2 * self.single2
            + eta1 * eta2 * self.cross
            + 2.0 * eta1 * eta2 * (Complex64::from_polar(1.0, 2.0 * phase) * self.coherence).re
    }

    /// Phase-averaged probability.
    pub fn mean(&self, eta1: f64, eta2: f64) -> f64 {
        eta1 * eta1 * self.single1 + eta2 * eta2 * self.single2 + eta1 * eta2 * self.cross
    }

    /// Phase-averaged shares of the double-pair terms of sources 1 and 2.
    pub fn background_fractions(&self, eta1: f64, eta2: f64) -> (f64, f64) {
        let m = self.mean(eta1, eta2);
        (eta1 * eta1 * self.single1 / m, eta2 * eta2 * self.single2 / m)
    }
}

pub fn fourfold_terms(pair: &SourcePair) -> Result<FourfoldTerms> {
    fourfold_terms_delayed(pair, 0.0, 0.0)
}

/// [`fourfold_terms`] with the photons of source 2 delayed by τ_S (signal) and τ_I (idler).
/// The cross term is then the summed peak P(τ_S, τ_I).
pub fn fourfold_terms_delayed(pair: &SourcePair, tau_s: f64, tau_i: f64) -> Result<FourfoldTerms> {
    let a = weighted(&pair.source1);
    let mut b = weighted(&pair.source2);
    if tau_s != 0.0 || tau_i != 0.0 {
        let (sg, ig) = (pair.source2.signal_grid(), pair.source2.idler_grid());
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                b[(i, j)] *= Complex64::from_polar(1.0, sg.detuning(i) * tau_s + ig.detuning(j) * tau_i);
            }
        }
    }
    let o: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
    let ah = a.adjoint();
    let bh = b.adjoint();
    let ra = &ah * &a;
    let rb = &bh * &b;
    let sa = &a * &ah;
    let sb = &b * &bh;
    let k = &ah * &b;
    let tr = |x: &DMatrix<Complex64>, y: &DMatrix<Complex64>| -> Complex64 {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * y[(j, i)]).sum::<Complex64>())
            .sum()
    };
    let mu1 = tr(&ra, &ra).re;
    let mu2 = tr(&rb, &rb).re;
    let t_i = tr(&ra, &rb).re;
    let t_s = tr(&sa, &sb).re;
    let x = tr(&k, &k);
    let out = FourfoldTerms {
        single1: (1.0 + mu1) / 8.0,
        single2: (1.0 + mu2) / 8.0,
        cross: 0.25 * (1.0 + o.norm_sqr() - t_i - t_s),
        coherence: (o * o + x) / 8.0,
    };
    if !out.cross.is_finite() || !out.coherence.re.is_finite() {
        return Err(Error::NonFinite(0));
    }
    Ok(out)
}

/// All-port four-fold probability against pump phase.
pub fn fourfold_fringes(pair: &SourcePair, eta1: f64, eta2: f64, phases: &[f64]) -> Result<FringeTrace> {
    let t = fourfold_terms(pair)?;
    let values = phases.iter().map(|&ph| t.probability(eta1, eta2, ph)).collect();
    Ok(FringeTrace::new(phases.to_vec(), values)
        .with_meta("axis", "pump_phase")
        .with_meta("eta1", eta1)
        .with_meta("eta2", eta2))
}

/// Two-fold trace for `pairing` and the companion four-fold trace with equal pair rates.
pub fn pump_phase_fringes(pair: &SourcePair, pairing: PortPairing, phases: &[f64]) -> Result<(FringeTrace, FringeTrace)> {
    Ok((twofold_fringes(pair, pairing, phases)?, fourfold_fringes(pair, 1.0, 1.0, phases)?))
}
