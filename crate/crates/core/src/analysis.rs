//! Fringe fitting, visibility extraction, JSI symmetrization and selection of
//! mutually orthogonal heralded modes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::binned::BinnedMap;
use crate::error::{invalid, Error, Result};
use crate::observables::FringeTrace;

/// Closed-form fringe families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitModel {
    /// B[1 + V e^{−τ²/w²} cos(ωτ − φ)].
    #[default]
    FarBin,
    /// B[1 − V (2(τ − s)²/w² − 1)/(1 + 2s²/w²) e^{−τ²/w²}].
    Degenerate,
    /// Far-bin form with the phase carrying the idler delay, φ = ω τ_I′.
    Delayed,
}

impl FitModel {
    pub fn label(self) -> &'static str {
        match self {
            FitModel::FarBin => "far-bin",
            FitModel::Degenerate => "degenerate",
            FitModel::Delayed => "delayed",
        }
    }

    fn params(self) -> usize {
        match self {
            FitModel::Degenerate => 4,
            _ => 5,
        }
    }

    fn eval(self, p: &[f64], t: f64) -> f64 {
        match self {
            FitModel::FarBin | FitModel::Delayed => {
                let env = if p[4] == 0.0 { 0.0 } else { (-(t / p[4]).powi(2)).exp() };
                p[0] * (1.0 + p[1] * env * (p[2] * t - p[3]).cos())
            }
            FitModel::Degenerate => {
                let w2 = p[2] * p[2];
                if w2 == 0.0 {
                    return p[0];
                }
                let s = p[3];
                p[0] * (1.0 - p[1] * (2.0 * (t - s).powi(2) / w2 - 1.0) / (1.0 + 2.0 * s * s / w2) * (-t * t / w2).exp())
            }
        }
    }
}

impl FromStr for FitModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "far-bin" | "far" => Ok(FitModel::FarBin),
            "degenerate" => Ok(FitModel::Degenerate),
            "delayed" => Ok(FitModel::Delayed),
            other => Err(invalid("model", format!("unknown fit model '{other}'"))),
        }
    }
}

/// One-sigma parameter uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitErrors {
    pub baseline: f64,
    pub visibility: f64,
    pub frequency: f64,
    pub phase: f64,
    pub envelope: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeFit {
    pub model: FitModel,
    pub baseline: f64,
    pub visibility: f64,
    /// Fringe angular frequency (rad/ps); zero for the degenerate form.
    pub frequency: f64,
    /// Phase offset φ (rad), wrapped to (−π, π].
    pub phase: f64,
    /// Envelope width w (ps).
    pub envelope: f64,
    /// Degenerate-form delay offset s (ps).
    pub shift: f64,
    pub errors: FitErrors,
    pub chi2: f64,
    pub dof: usize,
    /// Largest model value over the trace span and its uncertainty.
    pub peak: f64,
    pub peak_error: f64,
    /// Peak above ½ by more than three standard deviations.
    pub witness: bool,
    pub restarts: usize,
    params: Vec<f64>,
}

impl FringeFit {
    pub fn eval(&self, tau: f64) -> f64 {
        self.model.eval(&self.params, tau)
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            0.0
        } else {
            self.chi2 / self.dof as f64
        }
    }

    /// Key-value report lines.
    pub fn report(&self) -> Vec<(String, String)> {
        // Values that round to zero print unsigned.
        let fixed = |v: f64| {
            let s = format!("{v:.10}");
            match s.strip_prefix('-') {
                Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
                _ => s,
            }
        };
        let e = &self.errors;
        [
            ("model", self.model.label().to_string()),
            ("baseline", format!("{:.10e}", self.baseline)),
            ("baseline_err", format!("{:.3e}", e.baseline)),
            ("visibility", fixed(self.visibility)),
            ("visibility_err", format!("{:.3e}", e.visibility)),
            ("frequency", fixed(self.frequency)),
            ("frequency_err", format!("{:.3e}", e.frequency)),
            ("phase", fixed(self.phase)),
            ("phase_err", format!("{:.3e}", e.phase)),
            ("envelope", fixed(self.envelope)),
            ("envelope_err", format!("{:.3e}", e.envelope)),
            ("shift", fixed(self.shift)),
            ("shift_err", format!("{:.3e}", e.shift)),
            ("chi2", format!("{:.6e}", self.chi2)),
            ("dof", self.dof.to_string()),
            ("peak", fixed(self.peak)),
            ("peak_err", format!("{:.3e}", self.peak_error)),
            ("witness", self.witness.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

struct Problem<'a> {
    model: FitModel,
    tau: &'a [f64],
    y: &'a [f64],
    inv_sigma: &'a [f64],
    p: DVector<f64>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let p = self.p.as_slice();
        let r = DVector::from_fn(self.tau.len(), |i, _| {
            (self.model.eval(p, self.tau[i]) - self.y[i]) * self.inv_sigma[i]
        });
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        Some(jacobian(self.model, self.p.as_slice(), self.tau, self.inv_sigma))
    }
}

/// Central-difference Jacobian of the weighted residuals.
fn jacobian(model: FitModel, p: &[f64], tau: &[f64], inv_sigma: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(tau.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-7 * p[k].abs().max(1e-4);
        q[k] = p[k] + h;
        let up: Vec<f64> = tau.iter().map(|&t| model.eval(&q, t)).collect();
        q[k] = p[k] - h;
        for (i, &t) in tau.iter().enumerate() {
            j[(i, k)] = (up[i] - model.eval(&q, t)) / (2.0 * h) * inv_sigma[i];
        }
        q[k] = p[k];
    }
    j
}

fn cost(model: FitModel, p: &[f64], tau: &[f64], y: &[f64], inv_sigma: &[f64]) -> f64 {
    tau.iter()
        .zip(y)
        .zip(inv_sigma)
        .map(|((&t, &v), &s)| ((model.eval(p, t) - v) * s).powi(2))
        .sum()
}

const MAX_RESTARTS: usize = 12;

fn is_uniform(tau: &[f64]) -> bool {
    if tau.len() < 3 {
        return false;
    }
    let d = tau[1] - tau[0];
    d > 0.0 && tau.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-9 * d.abs().max(1e-300))
}

/// Dominant angular frequency and phase of `y − mean` by zero-padded FFT
/// (direct transform when the axis is not uniform).
fn spectral_guess(tau: &[f64], y: &[f64], mean: f64) -> (f64, f64) {
    let n = tau.len();
    let span = tau[n - 1] - tau[0];
    if span <= 0.0 {
        return (0.0, 0.0);
    }
    let omega = if is_uniform(tau) {
        let dt = tau[1] - tau[0];
        let len = (8 * n).next_power_of_two();
        let mut buf = vec![Complex64::default(); len];
        for (b, v) in buf.iter_mut().zip(y) {
            *b = Complex64::new(v - mean, 0.0);
        }
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let k = (1..len / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap_or(0);
        TAU * k as f64 / (len as f64 * dt)
    } else {
        let top = PI * n as f64 / span;
        (1..=8 * n)
            .map(|k| top * k as f64 / (8 * n) as f64)
            .max_by(|&a, &b| dft(tau, y, mean, a).norm().total_cmp(&dft(tau, y, mean, b).norm()))
            .unwrap_or(0.0)
    };
    (omega, -dft(tau, y, mean, omega).arg())
}

fn dft(tau: &[f64], y: &[f64], mean: f64, omega: f64) -> Complex64 {
    tau.iter()
        .zip(y)
        .map(|(&t, &v)| (v - mean) * Complex64::from_polar(1.0, -omega * t))
        .sum()
}

fn starts(model: FitModel, tau: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (lo, hi) = (tau[0], tau[n - 1]);
    let span = (hi - lo).abs().max(1e-12);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let v0 = if ymax + ymin != 0.0 {
        ((ymax - ymin) / (ymax + ymin)).abs().min(1.0)
    } else {
        0.5
    };
    let tail = {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| tau[b].abs().total_cmp(&tau[a].abs()));
        let m = (n / 5).max(1);
        idx[..m].iter().map(|&i| y[i]).sum::<f64>() / m as f64
    };
    match model {
        FitModel::FarBin | FitModel::Delayed => {
            let (w0, phi0) = spectral_guess(tau, y, mean);
            let dw = TAU / span;
            let mut out = Vec::new();
            for &b in &[mean, tail] {
                for &w in &[0.25 * span, 0.5 * span, 0.1 * span, 20.0 * span] {
                    for &(om, ph) in &[(w0, phi0), (w0 + 0.5 * dw, phi0), ((w0 - 0.5 * dw).max(0.0), phi0), (w0, phi0 + PI)] {
                        out.push(vec![b, v0, om, ph, w]);
                    }
                }
            }
            out
        }
        FitModel::Degenerate => {
            let mut out = Vec::new();
            for &b in &[tail, mean] {
                for &w in &[0.25 * span, 0.1 * span, 0.5 * span] {
                    for &s in &[0.0, 0.1 * span, -0.1 * span] {
                        out.push(vec![b, v0.max(0.1), w, s]);
                    }
                }
            }
            out
        }
    }
}

/// Weighted least-squares fit of a fringe trace.
///
/// Weights are 1/σ² from the trace errors when present (Poisson errors for
/// count data), uniform otherwise.
pub fn fit_fringes(trace: &FringeTrace, model: FitModel) -> Result<FringeFit> {
    let n = trace.len();
    if n < model.params() + 1 || trace.values.len() != n {
        return Err(invalid("trace", format!("{n} points cannot constrain the {} model", model.label())));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| trace.tau[a].total_cmp(&trace.tau[b]));
    let tau: Vec<f64> = order.iter().map(|&i| trace.tau[i]).collect();
    let y: Vec<f64> = order.iter().map(|&i| trace.values[i]).collect();
    if tau.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    let weighted = trace.errors.len() == n && trace.errors.iter().any(|&e| e > 0.0);
    let inv_sigma: Vec<f64> = if weighted {
        let floor = trace.errors.iter().cloned().filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
        order.iter().map(|&i| 1.0 / trace.errors[i].max(floor)).collect()
    } else {
        vec![1.0; n]
    };
    let lm = LevenbergMarquardt::new()
        .with_ftol(1e-15)
        .with_xtol(1e-15)
        .with_gtol(1e-15)
        .with_patience(400);
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut tried = 0;
    for p0 in starts(model, &tau, &y) {
        if tried >= MAX_RESTARTS * 4 {
            break;
        }
        tried += 1;
        let problem = Problem {
            model,
            tau: &tau,
            y: &y,
            inv_sigma: &inv_sigma,
            p: DVector::from_vec(p0),
        };
        let (solved, _report) = lm.minimize(problem);
        let p: Vec<f64> = solved.p.iter().cloned().collect();
        let c = cost(model, &p, &tau, &y, &inv_sigma);
        if c.is_finite() && best.as_ref().is_none_or(|b| c < b.1) {
            best = Some((p, c));
        }
        if let Some((_, c)) = &best {
            if *c <= 1e-26 * scale {
                break;
            }
        }
    }
    let (mut p, chi2) = best.ok_or(Error::FitFailed {
        restarts: tried,
        residual: f64::INFINITY,
    })?;
    canonicalize(model, &mut p);
    let dof = n.saturating_sub(model.params());
    let jac = jacobian(model, &p, &tau, &inv_sigma);
    let jtj = jac.transpose() * &jac;
    let s2 = if weighted || dof == 0 { 1.0 } else { chi2 / dof as f64 };
    let cov = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-14).ok())
        .map(|c| c * s2)
        .unwrap_or_else(|| DMatrix::zeros(p.len(), p.len()));
    let sd = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let errors = match model {
        FitModel::Degenerate => FitErrors {
            baseline: sd(0),
            visibility: sd(1),
            envelope: sd(2),
            shift: sd(3),
            ..Default::default()
        },
        _ => FitErrors {
            baseline: sd(0),
            visibility: sd(1),
            frequency: sd(2),
            phase: sd(3),
            envelope: sd(4),
            shift: 0.0,
        },
    };
    // Peak of the fitted model over the trace span and its propagated error.
    let (lo, hi) = (tau[0], tau[n - 1]);
    let dense = 4001;
    let (t_peak, peak) = (0..dense)
        .map(|i| lo + (hi - lo) * i as f64 / (dense - 1) as f64)
        .map(|t| (t, model.eval(&p, t)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let g = jacobian(model, &p, &[t_peak], &[1.0]);
    let var = (g.clone() * &cov * g.transpose())[(0, 0)];
    let peak_error = var.max(0.0).sqrt();
    if !(chi2.is_finite()) {
        return Err(Error::FitFailed {
            restarts: tried,
            residual: chi2,
        });
    }
    let (frequency, phase, envelope, shift) = match model {
        FitModel::Degenerate => (0.0, 0.0, p[2], p[3]),
        _ => (p[2], p[3], p[4], 0.0),
    };
    Ok(FringeFit {
        model,
        baseline: p[0],
        visibility: p[1],
        frequency,
        phase,
        envelope,
        shift,
        errors,
        chi2,
        dof,
        peak,
        peak_error,
        witness: peak - 0.5 > 3.0 * peak_error,
        restarts: tried,
        params: p,
    })
}

/// Nonnegative visibility, frequency and width; phase in (−π, π].
fn canonicalize(model: FitModel, p: &mut [f64]) {
    match model {
        FitModel::Degenerate => {
            p[2] = p[2].abs();
        }
        _ => {
            if p[1] < 0.0 {
                p[1] = -p[1];
                p[3] += PI;
            }
            if p[2] < 0.0 {
                p[2] = -p[2];
                p[3] = -p[3];
            }
            p[4] = p[4].abs();
            p[3] = wrap(p[3]);
        }
    }
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Contrast with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub value: f64,
    pub error: f64,
}

/// Fitted far-bin amplitude V: the contrast the fringe would show without
/// envelope decay.
pub fn visibility(trace: &FringeTrace) -> Result<Visibility> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let (hi, lo) = (trace.max(), trace.min());
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()) {
        return Ok(Visibility { value: 0.0, error: 0.0 });
    }
    let fit = fit_fringes(trace, FitModel::FarBin)?;
    Ok(Visibility {
        value: fit.visibility,
        error: fit.errors.visibility,
    })
}

/// Mode label (j, k) of a heralded JSI.
pub type ModeLabel = (i64, i64);

/// F_n = (F_jk + F_kj)/2 for j < k, normalized to unit sum. A missing partner
/// leaves the available orientation as is.
pub fn symmetrize_jsi(maps: &BTreeMap<ModeLabel, BinnedMap>) -> Result<Vec<(ModeLabel, BinnedMap)>> {
    let first = maps.values().next().ok_or(Error::Empty("JSI set"))?;
    if maps.values().any(|m| !m.same_axes(first)) {
        return Err(Error::AxisMismatch("heralded JSIs use different axes".into()));
    }
    let mut out = Vec::new();
    let mut labels: Vec<ModeLabel> = maps.keys().filter(|(j, k)| j != k).map(|&(j, k)| (j.min(k), j.max(k))).collect();
    labels.dedup();
    labels.sort();
    labels.dedup();
    for (j, k) in labels {
        let parts: Vec<&BinnedMap> = [maps.get(&(j, k)), maps.get(&(k, j))].into_iter().flatten().collect();
        let mut m = parts[0].clone();
        if parts.len() == 2 {
            for (a, b) in m.values.iter_mut().zip(&parts[1].values) {
                *a = 0.5 * (*a + b);
            }
        }
        let total = m.sum();
        if total > 0.0 {
            for a in m.values.iter_mut() {
                *a /= total;
            }
        }
        out.push(((j, k), m));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapNorm {
    /// ΣF_nF_m / √(ΣF_n² ΣF_m²).
    #[default]
    Cosine,
    /// ΣF_nF_m with unit-sum F.
    UnitSum,
}

/// Symmetric matrix of JSI overlaps over the mode set.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub labels: Vec<ModeLabel>,
    pub values: DMatrix<f64>,
    pub norm: OverlapNorm,
}

impl OverlapMatrix {
    pub fn from_maps(modes: &[(ModeLabel, BinnedMap)], norm: OverlapNorm) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Empty("mode set"));
        }
        let first = &modes[0].1;
        if modes.iter().any(|(_, m)| !m.same_axes(first)) {
            return Err(Error::AxisMismatch("mode JSIs use different axes".into()));
        }
        let vecs: Vec<Vec<f64>> = modes
            .iter()
            .map(|(_, m)| {
                let s = m.sum();
                m.values
                    .iter()
                    .map(|v| if norm == OverlapNorm::UnitSum && s > 0.0 { v / s } else { *v })
                    .collect()
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let n = vecs.len();
        let norms: Vec<f64> = vecs.iter().map(|v| dot(v, v).sqrt()).collect();
        let values = DMatrix::from_fn(n, n, |i, j| {
            let d = dot(&vecs[i], &vecs[j]);
            match norm {
                OverlapNorm::Cosine => {
                    if norms[i] > 0.0 && norms[j] > 0.0 {
                        (d / (norms[i] * norms[j])).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                }
                OverlapNorm::UnitSum => d,
            }
        });
        Ok(Self {
            labels: modes.iter().map(|(l, _)| *l).collect(),
            values,
            norm,
        })
    }

    pub fn from_values(labels: Vec<ModeLabel>, values: DMatrix<f64>) -> Result<Self> {
        if labels.is_empty() || values.nrows() != labels.len() || values.ncols() != labels.len() {
            return Err(invalid("overlaps", "matrix must be square and match the labels"));
        }
        Ok(Self {
            labels,
            values,
            norm: OverlapNorm::Cosine,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Whether every pair in `subset` overlaps below `threshold`.
    pub fn compatible(&self, subset: &[usize], threshold: f64) -> bool {
        subset
            .iter()
            .enumerate()
            .all(|(a, &i)| subset[a + 1..].iter().all(|&j| self.get(i, j) < threshold))
    }
}

/// A set of mutually low-overlap modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSubset {
    pub labels: Vec<ModeLabel>,
    pub indices: Vec<usize>,
    pub max_overlap: f64,
}

/// Greedy selection seeded at every mode: grow by the candidate whose largest
/// overlap with the current set is smallest, ties to the lower label. Returns
/// the distinct maximal subsets, largest first.
pub fn select_orthogonal(overlaps: &OverlapMatrix, threshold: f64) -> Result<Vec<ModeSubset>> {
    let n = overlaps.len();
    if n == 0 {
        return Err(Error::Empty("mode set"));
    }
    if !(threshold > 0.0) {
        return Err(invalid("threshold", "must be positive"));
    }
    let mut by_label: Vec<usize> = (0..n).collect();
    by_label.sort_by_key(|&i| overlaps.labels[i]);
    let mut found: BTreeMap<Vec<ModeLabel>, ModeSubset> = BTreeMap::new();
    for &seed in &by_label {
        let mut set = vec![seed];
        loop {
            let next = by_label
                .iter()
                .filter(|&&c| !set.contains(&c))
                .filter_map(|&c| {
                    let worst = set.iter().map(|&s| overlaps.get(c, s)).fold(0.0, f64::max);
                    (worst < threshold).then_some((worst, overlaps.labels[c], c))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match next {
                Some((_, _, c)) => set.push(c),
                None => break,
            }
        }
        set.sort_by_key(|&i| overlaps.labels[i]);
        let labels: Vec<ModeLabel> = set.iter().map(|&i| overlaps.labels[i]).collect();
        let max_overlap = set
            .iter()
            .enumerate()
            .flat_map(|(a, &i)| set[a + 1..].iter().map(move |&j| (i, j)))
            .map(|(i, j)| overlaps.get(i, j))
            .fold(0.0, f64::max);
        found.entry(labels.clone()).or_insert(ModeSubset {
            labels,
            indices: set,
            max_overlap,
        });
    }
    let mut out: Vec<ModeSubset> = found.into_values().collect();
    out.sort_by(|a, b| match b.labels.len().cmp(&a.labels.len()) {
        Ordering::Equal => a.labels.cmp(&b.labels),
        o => o,
    });
    Ok(out)
}
