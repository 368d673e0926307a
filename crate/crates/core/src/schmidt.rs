//! Schmidt decomposition of a sampled joint spectral amplitude.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::jsa::JointSpectralAmplitude;
use crate::quadrature::Rule;

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtDecomposition {
    /// Normalized singular values, decreasing, with unit sum of squares.
    pub singular_values: Vec<f64>,
    pub schmidt_number: f64,
}

impl SchmidtDecomposition {
    /// Σλ⁴; the purity of either reduced state.
    pub fn purity(&self) -> f64 {
        self.singular_values.iter().map(|l| l.powi(4)).sum()
    }
}

/// SVD of the quadrature-weighted amplitude matrix.
pub fn schmidt_decompose(jsa: &JointSpectralAmplitude) -> SchmidtDecomposition {
    let samples = jsa.sample();
    decompose_samples(jsa, &samples)
}

fn decompose_samples(jsa: &JointSpectralAmplitude, samples: &[Complex64]) -> SchmidtDecomposition {
    let (sg, ig) = (jsa.signal_grid(), jsa.idler_grid());
    let ws: Vec<f64> = sg.weights(Rule::Simpson).iter().map(|w| w.max(0.0).sqrt()).collect();
    let wi: Vec<f64> = ig.weights(Rule::Simpson).iter().map(|w| w.max(0.0).sqrt()).collect();
    let ni = ig.len();
    let m = DMatrix::from_fn(sg.len(), ni, |i, j| samples[i * ni + j] * (ws[i] * wi[j]));
    let sv = m.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut s {
        *x /= norm;
    }
    let k = 1.0 / s.iter().map(|l| l.powi(4)).sum::<f64>();
    SchmidtDecomposition {
        singular_values: s,
        schmidt_number: k,
    }
}

/// Schmidt analysis of √(JSI ⊛ G), where G is a Gaussian detector response with
/// standard deviations `blur_s`, `blur_i` (rad/ps) along the two axes.
///
/// Spectral phase is discarded, as it is when a measured JSI is decomposed.
pub fn schmidt_with_detector_blur(jsa: &JointSpectralAmplitude, blur_s: f64, blur_i: f64) -> Result<SchmidtDecomposition> {
    if !(blur_s >= 0.0 && blur_i >= 0.0) {
        return Err(invalid("blur", "widths must be nonnegative"));
    }
    let (sg, ig) = (jsa.signal_grid(), jsa.idler_grid());
    let (ns, ni) = (sg.len(), ig.len());
    let jsi: Vec<f64> = jsa.sample().iter().map(|z| z.norm_sqr()).collect();
    let ks = blur_kernel(ns, sg.spacing(), blur_s);
    let ki = blur_kernel(ni, ig.spacing(), blur_i);
    // Separable convolution: idler axis first, then signal axis.
    let mut tmp = vec![0.0; ns * ni];
    for i in 0..ns {
        convolve_line(&jsi[i * ni..(i + 1) * ni], &ki, &mut tmp[i * ni..(i + 1) * ni]);
    }
    let mut out = vec![0.0; ns * ni];
    let mut col = vec![0.0; ns];
    let mut res = vec![0.0; ns];
    for j in 0..ni {
        for i in 0..ns {
            col[i] = tmp[i * ni + j];
        }
        convolve_line(&col, &ks, &mut res);
        for i in 0..ns {
            out[i * ni + j] = res[i];
        }
    }
    let amp: Vec<Complex64> = out.iter().map(|v| Complex64::new(v.max(0.0).sqrt(), 0.0)).collect();
    Ok(decompose_samples(jsa, &amp))
}

fn blur_kernel(n: usize, h: f64, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let half = ((6.0 * sigma / h).ceil() as usize).min(n);
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|m| {
            let d = (m as f64 - half as f64) * h;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn convolve_line(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = input.len() as isize;
    let half = (kernel.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, k) in kernel.iter().enumerate() {
            let src = i as isize + m as isize - half;
            if (0..n).contains(&src) {
                acc += k * input[src as usize];
            }
        }
        *o = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{reduced_density, Party};
    use crate::jsa::GaussianParams;
    use crate::units::angular_frequency;

    fn jsa(alpha: f64) -> JointSpectralAmplitude {
        let p = GaussianParams::new(2.369, 3.333, alpha).unwrap();
        JointSpectralAmplitude::gaussian_with_points(p, angular_frequency(830.0), 256).unwrap()
    }

    #[test]
    fn separable_has_unit_schmidt_number() {
        let d = schmidt_decompose(&jsa(0.0));
        assert!((d.schmidt_number - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schmidt_number_is_consistent_with_purities() {
        let j = jsa(0.062);
        let d = schmidt_decompose(&j);
        let k_exact = j.gaussian_params().unwrap().schmidt_number();
        assert!((d.schmidt_number - k_exact).abs() < 1e-6 * k_exact, "{}", d.schmidt_number);
        let s: f64 = d.singular_values.iter().map(|l| l * l).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let ps = reduced_density(&j, Party::Signal).unwrap().purity();
        let pi = reduced_density(&j, Party::Idler).unwrap().purity();
        assert!((1.0 / d.schmidt_number - ps).abs() < 1e-6);
        assert!((1.0 / d.schmidt_number - pi).abs() < 1e-6);
    }

    #[test]
    fn participation_ratio_oracle() {
        // Participation ratio from the eigenvalues of the reduced state.
        let j = jsa(-0.04);
        let ev = reduced_density(&j, Party::Signal).unwrap().eigenvalues();
        let pr = 1.0 / ev.iter().map(|l| l * l).sum::<f64>();
        let d = schmidt_decompose(&j);
        assert!((pr - d.schmidt_number).abs() < 1e-6);
    }

    #[test]
    fn blur_lowers_schmidt_number() {
        let j = jsa(0.062);
        let none = schmidt_with_detector_blur(&j, 0.0, 0.0).unwrap();
        assert!((none.schmidt_number - schmidt_decompose(&j).schmidt_number).abs() < 1e-9);
        let mut last = none.schmidt_number;
        for b in [0.5, 1.0, 2.0, 4.0] {
            let d = schmidt_with_detector_blur(&j, b, b).unwrap();
            assert!(d.schmidt_number < last, "{b}: {}", d.schmidt_number);
            last = d.schmidt_number;
        }
    }

    #[test]
    fn blurred_gaussian_matches_widened_gaussian() {
        // Blurring |f|² by b² per axis gives another Gaussian whose K follows
        // from the covariance determinant.
        let p = GaussianParams::new(1.0, 1.2, 0.3).unwrap();
        let j = JointSpectralAmplitude::gaussian_with_points(p, angular_frequency(830.0), 256).unwrap();
        let b: f64 = 0.4;
        let m = p.intensity_precision();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (vx, vy, cxy) = (m[1][1] / det + b * b, m[0][0] / det + b * b, -m[0][1] / det);
        let corr2 = cxy * cxy / (vx * vy);
        let k_expected = 1.0 / (1.0 - corr2).sqrt();
        let d = schmidt_with_detector_blur(&j, b, b).unwrap();
        assert!(
            (d.schmidt_number - k_expected).abs() < 1e-3 * k_expected,
            "{} vs {k_expected}",
            d.schmidt_number
        );
    }
}
