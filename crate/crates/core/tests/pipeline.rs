use std::io::BufReader;

use proptest::prelude::*;
use tfswap_core::density::gaussian_reduced_density;
use tfswap_core::io::{read_time_tags, read_trace, write_time_tags, write_trace};
use tfswap_core::observables::{delay_axis, fringes_pjk};
use tfswap_core::units::angular_frequency;
use tfswap_core::*;

fn params() -> GaussianParams {
    GaussianParams::new(2.369, 3.333, 0.06204).unwrap()
}

fn jsa(p: GaussianParams, n: usize) -> JointSpectralAmplitude {
    JointSpectralAmplitude::gaussian_with_points(p, angular_frequency(830.0), n).unwrap()
}

#[test]
fn time_tags_survive_the_file_format() {
    let mut cfg = ExperimentConfig::new(SourcePair::identical(&jsa(params(), 128)));
    cfg.pulses = 20_000;
    cfg.seed = 3;
    let run = sample_fourfold(&cfg).unwrap();
    let mut buf = Vec::new();
    write_time_tags(&mut buf, &[], &run.events, Some(&run.summary)).unwrap();
    let back = read_time_tags(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, run.events);
    let a = histogram(&run.events, &cfg.channels, &Channel::ALL, 1e5).unwrap();
    let b = histogram(&back, &cfg.channels, &Channel::ALL, 1e5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fitted_fringe_survives_the_file_format() {
    let j = jsa(params(), 256);
    let s = herald(&j, HeraldSetting::new(11.0, -11.0, 0.05)).unwrap();
    let trace = fringes_pjk(&j, &s, &delay_axis(-1.5, 1.5, 121), FringeModel::Exact).unwrap();
    let mut buf = Vec::new();
    write_trace(&mut buf, &[], &trace).unwrap();
    let back = read_trace(BufReader::new(&buf[..])).unwrap();
    let a = fit_fringes(&trace, FitModel::Delayed).unwrap();
    let b = fit_fringes(&back, FitModel::Delayed).unwrap();
    assert!((a.frequency - b.frequency).abs() < 1e-8);
    assert!((a.phase - b.phase).abs() < 1e-6);
}

#[test]
fn sampled_sinc_source_passes_the_same_identities() {
    let p = SincPmParams::new(2.0, 0.8, -0.3, 4.0).unwrap();
    let j = JointSpectralAmplitude::sinc_pm(p, angular_frequency(830.0), 256).unwrap();
    let d = schmidt_decompose(&j);
    let rho = reduced_density(&j, Party::Signal).unwrap();
    assert!((d.purity() - rho.purity()).abs() < 1e-6);
    assert!((d.schmidt_number - 1.0 / rho.purity()).abs() < 1e-4 * d.schmidt_number);
    // Total herald probability is half the HOM split fraction.
    let map = pjk_map(&j, 0.0, j.idler_grid()).unwrap();
    let total = map.integrate(Rule::Simpson);
    assert!((total - 0.5 * (1.0 - rho.purity())).abs() < 1e-4, "{total}");
}

#[test]
fn swap_keeps_the_heralded_pair_antisymmetric() {
    let j = jsa(params(), 256);
    let s = herald(&j, HeraldSetting::new(5.0, -3.0, 0.0)).unwrap();
    let f = tfswap_core::observables::heralded_jsi(&s);
    let t = f.transposed();
    assert!(f.relative_l2(&t).unwrap() < 1e-12);
    let swapped = herald(&j, HeraldSetting::new(-3.0, 5.0, 0.0)).unwrap();
    assert!((swapped.pjk - s.pjk).abs() < 1e-15);
    assert!((swapped.norm - s.norm).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schmidt_number_matches_closed_form(
        sigma_s in 1.5f64..4.0,
        sigma_i in 1.5f64..4.0,
        k in 1.0f64..6.0,
    ) {
        let p = GaussianParams::from_schmidt_number(sigma_s, sigma_i, k, true).unwrap();
        let j = jsa(p, 192);
        let d = schmidt_decompose(&j);
        prop_assert!((d.schmidt_number - k).abs() < 1e-3 * k, "{} vs {k}", d.schmidt_number);
        let rho = gaussian_reduced_density(&j, Party::Idler).unwrap();
        prop_assert!((rho.purity() - 1.0 / k).abs() < 1e-4);
    }
}
