//! Spectrally resolved four-photon entanglement swapping: joint spectra,
//! heralded states, interference observables, an instrument model and an
//! event-level simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod binned;
pub mod density;
pub mod distinguish;
pub mod error;
pub mod events;
pub mod grid;
pub mod heralding;
pub mod instrument;
pub mod io;
pub mod jsa;
pub mod mixed;
pub mod observables;
pub mod quadrature;
pub mod schmidt;
pub mod units;

pub use analysis::{
    fit_fringes, select_orthogonal, symmetrize_jsi, visibility, FitModel, FringeFit, ModeLabel, ModeSubset, OverlapMatrix, OverlapNorm,
    Visibility,
};
pub use binned::BinnedMap;
pub use density::{reduced_density, Party, ReducedDensityMatrix};
pub use distinguish::fourfold_terms_delayed;
pub use distinguish::{overlap, pump_phase_fringes, vjk, PortPairing, SourcePair};
pub use error::{Error, Result};
pub use events::{
    default_channel, histogram, sample_fourfold, sample_pairs, scan, subtract_background, Channel, CoincidenceHistogram, Emission,
    EventClass, ExperimentConfig, HeraldBins, PumpPhase, ScanAxis, ScanOutput, ScanSpec, SimulationRun, SimulationSummary, Simulator,
    TimeTagEvent,
};
pub use grid::FrequencyGrid;
pub use heralding::{herald, herald_pair, heralded_mode, pjk_map, HeraldSetting, HeraldedBellState, HeraldedMode};
pub use instrument::{freq_to_time, pixelize, spectral_resolution, Arrival, PixelMap, TofsConfig};
pub use jsa::{GaussianParams, JointSpectralAmplitude, SincPmParams, SpectralModel};
pub use mixed::{hom_purity_bound, mixed_heralded_state, plm, FilterBank, FilterShape, MixedHeraldedState, SpectralFilter};
pub use num_complex::Complex64;
pub use observables::{FringeModel, FringeTrace, Peak2D};
pub use quadrature::Rule;
pub use schmidt::{schmidt_decompose, SchmidtDecomposition};
