//! Fixtures shared by the benchmarks.

use tfswap_core::units::angular_frequency;
use tfswap_core::{ExperimentConfig, GaussianParams, JointSpectralAmplitude, SourcePair};

pub fn source(points: usize) -> JointSpectralAmplitude {
    let p = GaussianParams::new(2.369, 3.333, 0.06204).expect("valid source");
    JointSpectralAmplitude::gaussian_with_points(p, angular_frequency(830.0), points).expect("grid covers source")
}

/// Idler detunings of the bins at 826 and 834 nm.
pub fn far_bins() -> (f64, f64) {
    let c = angular_frequency(830.0);
    (angular_frequency(826.0) - c, angular_frequency(834.0) - c)
}

pub fn experiment(pulses: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(SourcePair::identical(&source(128)));
    cfg.pulses = pulses;
    cfg.seed = 1;
    cfg
}
