//! Composite Newton–Cotes rules on uniform grids and Gauss–Legendre nodes.
//!
//! These are the brute-force integrators behind every closed form in the crate.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rule {
    Trapezoid,
    /// Composite Simpson; an even point count closes with Simpson's 3/8 rule.
    #[default]
    Simpson,
}

/// Quadrature weights for `n` uniformly spaced samples with spacing `h`.
pub fn weights(n: usize, h: f64, rule: Rule) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n == 0 {
        return w;
    }
    if n == 1 {
        return w;
    }
    match rule {
        Rule::Trapezoid => trapezoid_into(&mut w, h),
        Rule::Simpson => {
            if n == 2 {
                trapezoid_into(&mut w, h);
            } else if n % 2 == 1 {
                simpson_into(&mut w, h);
            } else if n == 4 {
                three_eighths_into(&mut w, h);
            } else {
                let split = n - 3;
                simpson_into(&mut w[..split], h);
                three_eighths_into(&mut w[split - 1..], h);
            }
        }
    }
    w
}

fn trapezoid_into(w: &mut [f64], h: f64) {
    let n = w.len();
    for (i, wi) in w.iter_mut().enumerate() {
        *wi += if i == 0 || i == n - 1 { 0.5 * h } else { h };
    }
}

fn simpson_into(w: &mut [f64], h: f64) {
    let n = w.len();
    debug_assert!(n % 2 == 1);
    for (i, wi) in w.iter_mut().enumerate() {
        let c = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        *wi += c * h / 3.0;
    }
}

fn three_eighths_into(w: &mut [f64], h: f64) {
    debug_assert_eq!(w.len(), 4);
    let c = 3.0 * h / 8.0;
    w[0] += c;
    w[1] += 3.0 * c;
    w[2] += 3.0 * c;
    w[3] += c;
}

fn check_finite(samples: &[Complex64]) -> Result<()> {
    match samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Integrate samples taken on `grid`.
pub fn integrate_1d(grid: &FrequencyGrid, samples: &[Complex64], rule: Rule) -> Result<Complex64> {
    if samples.len() != grid.len() {
        return Err(Error::AxisMismatch(format!(
            "{} samples on a {}-point grid",
            samples.len(),
            grid.len()
        )));
    }
    check_finite(samples)?;
    let w = grid.weights(rule);
    Ok(samples.iter().zip(&w).map(|(s, w)| s * *w).sum())
}

/// Integrate row-major samples `samples[i * ny + j]` on `gx × gy`.
pub fn integrate_2d(gx: &FrequencyGrid, gy: &FrequencyGrid, samples: &[Complex64], rule: Rule) -> Result<Complex64> {
    if samples.len() != gx.len() * gy.len() {
        return Err(Error::AxisMismatch(format!(
            "{} samples on a {}x{} grid",
            samples.len(),
            gx.len(),
            gy.len()
        )));
    }
    check_finite(samples)?;
    let wx = gx.weights(rule);
    let wy = gy.weights(rule);
    let ny = gy.len();
    Ok(wx
        .iter()
        .enumerate()
        .map(|(i, wxi)| {
            let row: Complex64 = samples[i * ny..(i + 1) * ny].iter().zip(&wy).map(|(s, w)| s * *w).sum();
            row * *wxi
        })
        .sum())
}

/// Result of an adaptive grid-doubling integration.
#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    pub value: Complex64,
    /// |I_2N − I_N| at the last doubling.
    pub last_change: f64,
    pub points: usize,
}

/// Integrate `f` over `[-half_extent, half_extent]`, doubling the grid until two
/// successive estimates differ by less than `tol` (or `max_doublings` is hit).
pub fn integrate_refined<F>(f: F, half_extent: f64, initial_points: usize, tol: f64, max_doublings: usize, rule: Rule) -> Result<Refinement>
where
    F: Fn(f64) -> Complex64,
{
    let mut grid = FrequencyGrid::symmetric(0.0, half_extent, initial_points.max(3))?;
    let eval = |g: &FrequencyGrid| -> Vec<Complex64> { (0..g.len()).map(|i| f(g.detuning(i))).collect() };
    let mut prev = integrate_1d(&grid, &eval(&grid), rule)?;
    let mut change = f64::INFINITY;
    for _ in 0..max_doublings {
        grid = grid.refined();
        let next = integrate_1d(&grid, &eval(&grid), rule)?;
        change = (next - prev).norm();
        prev = next;
        if change < tol {
            break;
        }
    }
    Ok(Refinement {
        value: prev,
        last_change: change,
        points: grid.len(),
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre nodes and weights mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|xi| mid + half * xi).collect(), w.iter().map(|wi| wi * half).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erf;

    fn gaussian(sigma: f64) -> impl Fn(f64) -> Complex64 {
        move |x| Complex64::new((-x * x / (2.0 * sigma * sigma)).exp(), 0.0)
    }

    #[test]
    fn gaussian_over_five_sigma_matches_erf() {
        let sigma = 1.7;
        let exact = sigma * (2.0 * std::f64::consts::PI).sqrt() * erf(5.0 / 2f64.sqrt());
        let g = FrequencyGrid::symmetric(0.0, 5.0 * sigma, 257).unwrap();
        let f = gaussian(sigma);
        let samples: Vec<_> = g.detunings().into_iter().map(&f).collect();
        let v = integrate_1d(&g, &samples, Rule::Simpson).unwrap();
        assert!((v.re - exact).abs() < 1e-6 * exact, "{} vs {}", v.re, exact);
    }

    #[test]
    fn simpson_and_trapezoid_agree_after_refinement() {
        let f = |x: f64| Complex64::new((x).cos() * (-x * x / 8.0).exp(), 0.0);
        let s = integrate_refined(f, 12.0, 17, 1e-10, 12, Rule::Simpson).unwrap();
        let t = integrate_refined(f, 12.0, 17, 1e-10, 12, Rule::Trapezoid).unwrap();
        assert!((s.value - t.value).norm() < 1e-6);
        assert!(s.last_change < 1e-8);
    }

    #[test]
    fn even_point_count_is_exact_for_cubics() {
        for n in [4usize, 6, 8, 10, 64] {
            let g = FrequencyGrid::symmetric(0.0, 1.0, n).unwrap();
            let samples: Vec<_> = g
                .detunings()
                .into_iter()
                .map(|x| Complex64::new(x * x * x + 2.0 * x * x + 1.0, 0.0))
                .collect();
            let v = integrate_1d(&g, &samples, Rule::Simpson).unwrap();
            let exact = 4.0 / 3.0 + 2.0;
            assert!((v.re - exact).abs() < 1e-12, "n={n}: {}", v.re);
        }
    }

    #[test]
    fn nan_is_rejected() {
        let g = FrequencyGrid::symmetric(0.0, 1.0, 5).unwrap();
        let mut s = vec![Complex64::new(1.0, 0.0); 5];
        s[3] = Complex64::new(f64::NAN, 0.0);
        assert_eq!(integrate_1d(&g, &s, Rule::Simpson), Err(Error::NonFinite(3)));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_on(16, -2.0, 3.0);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        let exact = (3f64.powi(31) + 2f64.powi(31)) / 31.0;
        assert!((v - exact).abs() < 1e-10 * exact);
        let s: f64 = w.iter().sum();
        assert!((s - 5.0).abs() < 1e-13);
    }

    #[test]
    fn two_dimensional_product() {
        let g = FrequencyGrid::symmetric(0.0, 6.0, 129).unwrap();
        let n = g.len();
        let mut s = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (g.detuning(i), g.detuning(j));
                s[i * n + j] = Complex64::new((-(x * x + y * y) / 2.0).exp(), 0.0);
            }
        }
        let v = integrate_2d(&g, &g, &s, Rule::Simpson).unwrap();
        assert!((v.re - 2.0 * std::f64::consts::PI).abs() < 1e-6);
    }
}
