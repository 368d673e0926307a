//! Monte Carlo time-tag generation for the four-photon interferometer:
//! swapped-pair and double-pair emission, two beamsplitters, spectrometers,
//! coincidence histograms, delay scans and background subtraction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distinguish::{fourfold_terms, fourfold_terms_delayed, SourcePair};
use crate::error::{invalid, Error, Result};
use crate::grid::FrequencyGrid;
use crate::heralding::{bell_parameters, heralded_mode_from, idler_marginal_peak, transform_phases, HeraldedMode};
use crate::instrument::{freq_to_time, PixelMap, TofsConfig};
use crate::observables::{fringe_from_modes, FringeTrace, Peak2D};
use crate::quadrature::Rule;
use crate::units::wavelength;

/// Detector channels: idler BSM outputs c, d and signal beamsplitter outputs x, y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    C,
    D,
    X,
    Y,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::C, Channel::D, Channel::X, Channel::Y];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::C => "c",
            Channel::D => "d",
            Channel::X => "x",
            Channel::Y => "y",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" => Ok(Channel::C),
            "d" => Ok(Channel::D),
            "x" => Ok(Channel::X),
            "y" => Ok(Channel::Y),
            other => Err(invalid("channel", format!("unknown channel '{other}'"))),
        }
    }
}

/// Emission term responsible for a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    /// One pair from each source.
    Swap,
    /// Two pairs from source 1.
    Double1,
    /// Two pairs from source 2.
    Double2,
    /// Single pair from source 1 (pair emission runs).
    Pair1,
    Pair2,
    /// Single pair in a coherent superposition of both sources.
    PairCoherent,
}

impl EventClass {
    pub const ALL: [EventClass; 6] = [
        EventClass::Swap,
        EventClass::Double1,
        EventClass::Double2,
        EventClass::Pair1,
        EventClass::Pair2,
        EventClass::PairCoherent,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            EventClass::Swap => "psi12",
            EventClass::Double1 => "psi11",
            EventClass::Double2 => "psi22",
            EventClass::Pair1 => "pair1",
            EventClass::Pair2 => "pair2",
            EventClass::PairCoherent => "pair_coherent",
        }
    }
}

impl FromStr for EventClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EventClass::ALL
            .into_iter()
            .find(|c| c.label() == s.trim())
            .ok_or_else(|| invalid("class", format!("unknown event class '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PumpPhase {
    /// Relative pump phase uniformly random from pulse to pulse.
    #[default]
    Averaged,
    /// Fixed relative phase Δφ (rad) of source 2.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Emission {
    /// Four-photon terms: one pair per source or two pairs from one source.
    #[default]
    FourPhoton,
    /// Single pairs, for two-fold pump-phase interference.
    Pair,
}

/// Full description of one Monte Carlo run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sources: SourcePair,
    pub eta1: f64,
    pub eta2: f64,
    /// Delay on the signal of source 2 (ps).
    pub tau_s: f64,
    /// Delay on the idler of source 2 (ps).
    pub tau_i: f64,
    pub phase: PumpPhase,
    pub emission: Emission,
    /// Spectrometers in [`Channel`] order.
    pub channels: [TofsConfig; 4],
    pub efficiency: [f64; 4],
    pub pulses: u64,
    pub seed: u64,
    /// Keep only this emission term (ground-truth runs).
    pub restrict: Option<EventClass>,
}

/// CFBG dispersion and TDC with a 60 nm lossless window; tags offset to stay positive.
pub fn default_channel() -> TofsConfig {
    TofsConfig {
        insertion_loss_db: 0.0,
        window: 60.0,
        clock_offset: 31_000.0,
        ..TofsConfig::cfbg()
    }
}

impl ExperimentConfig {
    pub fn new(sources: SourcePair) -> Self {
        Self {
            sources,
            eta1: 0.01,
            eta2: 0.01,
            tau_s: 0.0,
            tau_i: 0.0,
            phase: PumpPhase::Averaged,
            emission: Emission::FourPhoton,
            channels: [default_channel(); 4],
            efficiency: [1.0; 4],
            pulses: 100_000,
            seed: 0,
            restrict: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(eta.is_finite() && (0.0..1.0).contains(&eta)) {
                return Err(invalid(name, format!("must lie in [0, 1), got {eta}")));
            }
        }
        if self.eta1 == 0.0 && self.eta2 == 0.0 {
            return Err(invalid("eta1", "both sources are blocked"));
        }
        if !self.tau_s.is_finite() || !self.tau_i.is_finite() {
            return Err(invalid("tau_s", "delays must be finite"));
        }
        if let PumpPhase::Fixed(p) = self.phase {
            if !p.is_finite() {
                return Err(invalid("phase", "must be finite"));
            }
        }
        for (c, e) in self.efficiency.iter().enumerate() {
            if !(0.0..=1.0).contains(e) {
                return Err(invalid("efficiency", format!("channel {} outside [0, 1]: {e}", Channel::ALL[c])));
            }
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        if let Some(r) = self.restrict {
            let ok = match self.emission {
                Emission::FourPhoton => matches!(r, EventClass::Swap | EventClass::Double1 | EventClass::Double2),
                Emission::Pair => matches!(r, EventClass::Pair1 | EventClass::Pair2),
            };
            if !ok {
                return Err(invalid(
                    "restrict",
                    format!("class {} cannot occur in this emission mode", r.label()),
                ));
            }
        }
        Ok(())
    }
}

/// One detection: channel and TDC tick, relative to the pulse clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeTagEvent {
    pub pulse: u64,
    pub channel: Channel,
    pub tag: i64,
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationSummary {
    pub pulses: u64,
    pub class_counts: [u64; 6],
    /// Pulses with a click on every channel, by class.
    pub fourfold: [u64; 6],
    pub photons: u64,
    pub lost_efficiency: u64,
    pub lost_window: u64,
    /// Second photon on an already-fired detector.
    pub lost_dead_time: u64,
    /// All-port events removed by the fixed-phase thinning step.
    pub phase_rejected: u64,
}

impl SimulationSummary {
    fn merge(&mut self, o: &Self) {
        self.pulses += o.pulses;
        for i in 0..6 {
            self.class_counts[i] += o.class_counts[i];
            self.fourfold[i] += o.fourfold[i];
        }
        self.photons += o.photons;
        self.lost_efficiency += o.lost_efficiency;
        self.lost_window += o.lost_window;
        self.lost_dead_time += o.lost_dead_time;
        self.phase_rejected += o.phase_rejected;
    }

    pub fn class_count(&self, c: EventClass) -> u64 {
        self.class_counts[c.index()]
    }

    pub fn fourfold_count(&self, c: EventClass) -> u64 {
        self.fourfold[c.index()]
    }

    pub fn fourfold_total(&self) -> u64 {
        self.fourfold.iter().sum()
    }
}

/// Output of one run. `weight` is the unnormalized emission probability per
/// pulse (η units) that turns per-pulse frequencies into comparable rates.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub events: Vec<TimeTagEvent>,
    pub classes: Vec<EventClass>,
    pub summary: SimulationSummary,
    pub weight: f64,
    pub tau_s: f64,
    pub tau_i: f64,
}

impl SimulationRun {
    /// Pulse count times weight, the normalization of a rate.
    pub fn exposure(&self) -> f64 {
        self.summary.pulses as f64 / self.weight
    }
}

/// Precomputed per-source quantities independent of the delays.
struct SourceCache {
    signal: FrequencyGrid,
    idler: FrequencyGrid,
    modes: [Vec<Option<HeraldedMode>>; 2],
    /// ρ_I(Ω, Ω) on the idler grid.
    density: [Vec<f64>; 2],
    /// ⟨φ_j|φ_k⟩ for each source, idler-indexed, column-major.
    overlaps: [DMatrix<Complex64>; 2],
    jsi: [WeightedIndex<f64>; 2],
    /// Sampled JSA, signal-major.
    amplitude: [Vec<Complex64>; 2],
    marginal: [WeightedIndex<f64>; 2],
    /// (1 + Tr ρ²)/2, the norm of the double-pair term per η².
    double_norm: [f64; 2],
}

impl SourceCache {
    fn new(pair: &SourcePair) -> Result<Self> {
        let build = |jsa: &crate::jsa::JointSpectralAmplitude, source: usize| -> Result<_> {
            let peak = idler_marginal_peak(jsa);
            let ig = jsa.idler_grid();
            let modes: Vec<Option<HeraldedMode>> = (0..ig.len())
                .into_par_iter()
                .map(|j| heralded_mode_from(jsa, ig.detuning(j), source, peak).ok())
                .collect();
            let density: Vec<f64> = modes.iter().map(|m| m.as_ref().map_or(0.0, |m| m.idler_density())).collect();
            let sg = jsa.signal_grid();
            let w = sg.weights(Rule::Simpson);
            let a = DMatrix::from_fn(sg.len(), ig.len(), |i, j| {
                modes[j]
                    .as_ref()
                    .map_or(Complex64::default(), |m| m.amplitude()[i] * w[i].max(0.0).sqrt())
            });
            let overlaps = a.adjoint() * &a;
            let amplitude = jsa.sample();
            let jsi: Vec<f64> = amplitude.iter().map(|z| z.norm_sqr()).collect();
            let jsi = WeightedIndex::new(&jsi).map_err(|_| Error::Empty("joint spectral intensity"))?;
            let marginal = WeightedIndex::new(&density).map_err(|_| Error::Empty("idler marginal"))?;
            Ok((modes, density, overlaps, jsi, amplitude, marginal))
        };
        let (m1, n1, o1, j1, a1, g1) = build(&pair.source1, 1)?;
        let (m2, n2, o2, j2, a2, g2) = build(&pair.source2, 2)?;
        let terms = fourfold_terms(pair)?;
        Ok(Self {
            signal: pair.source1.signal_grid().clone(),
            idler: pair.source1.idler_grid().clone(),
            modes: [m1, m2],
            density: [n1, n2],
            overlaps: [o1, o2],
            jsi: [j1, j2],
            amplitude: [a1, a2],
            marginal: [g1, g2],
            double_norm: [4.0 * terms.single1, 4.0 * terms.single2],
        })
    }

    /// p_jk over ordered idler cells (c at j, d at k) times the cell area.
    fn herald_masses(&self, tau_i: f64) -> Vec<f64> {
        let n = self.idler.len();
        let h2 = self.idler.spacing().powi(2);
        let (d1, d2) = (&self.density[0], &self.density[1]);
        let (o1, o2) = (&self.overlaps[0], &self.overlaps[1]);
        (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / n, idx % n);
                let wa2 = d1[j] * d2[k];
                let wc2 = d1[k] * d2[j];
                if wa2 == 0.0 && wc2 == 0.0 {
                    return 0.0;
                }
                let theta = (self.idler.detuning(j) - self.idler.detuning(k)) * tau_i;
                let cross = Complex64::from_polar(1.0, theta) * o1[(j, k)] * o2[(k, j)];
                (0.25 * (wa2 + wc2 - 2.0 * (wa2 * wc2).sqrt() * cross.re)).max(0.0) * h2
            })
            .collect()
    }
}

/// Per-delay sampling tables.
struct Setting {
    tau_i: f64,
    herald: Option<WeightedIndex<f64>>,
    herald_mass: f64,
    /// Trapezoid-weighted e^{iωτ_S}, for fringe probabilities.
    phases: Vec<Complex64>,
    /// e^{iωτ_S} at the signal nodes.
    delay: Vec<Complex64>,
    /// Fixed-phase acceptance of all-port events.
    accept_all_port: f64,
    /// Pair emission: port-sign masses and samplers for s = +1, −1.
    pair: Option<PairTables>,
}

struct PairTables {
    mass: [f64; 2],
    /// `None` for a port whose density cancels exactly; it is never drawn.
    sampler: [Option<WeightedIndex<f64>>; 2],
}

/// Reusable simulator: the source tables are built once and shared by all delay settings.
pub struct Simulator {
    cfg: ExperimentConfig,
    cache: SourceCache,
}

const CHUNK: u64 = 2048;
const MAX_REJECTIONS: usize = 100_000;

impl Simulator {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = SourceCache::new(&cfg.sources)?;
        Ok(Self { cfg, cache })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Unnormalized class weights in [`EventClass`] order.
    pub fn class_weights(&self) -> [f64; 6] {
        let (e1, e2) = (self.cfg.eta1, self.cfg.eta2);
        let mut w = match self.cfg.emission {
            Emission::FourPhoton => [
                e1 * e2,
                e1 * e1 * self.cache.double_norm[0],
                e2 * e2 * self.cache.double_norm[1],
                0.0,
                0.0,
                0.0,
            ],
            Emission::Pair => match self.cfg.phase {
                PumpPhase::Averaged => [0.0, 0.0, 0.0, e1, e2, 0.0],
                PumpPhase::Fixed(_) => [0.0, 0.0, 0.0, 0.0, 0.0, e1 + e2],
            },
        };
        if let Some(r) = self.cfg.restrict {
            for (i, x) in w.iter_mut().enumerate() {
                if i != r.index() {
                    *x = 0.0;
                }
            }
        }
        w
    }

    fn setting(&self, tau_s: f64, tau_i: f64) -> Result<Setting> {
        let cache = &self.cache;
        let mut herald = None;
        let mut herald_mass = 0.0;
        if self.cfg.emission == Emission::FourPhoton {
            let masses = cache.herald_masses(tau_i);
            herald_mass = masses.iter().sum::<f64>().min(1.0);
            herald = WeightedIndex::new(&masses).ok();
        }
        let accept_all_port = match (self.cfg.emission, self.cfg.phase) {
            (Emission::FourPhoton, PumpPhase::Fixed(phi)) if self.cfg.restrict.is_none() => {
                let t = fourfold_terms_delayed(&self.cfg.sources, tau_s, tau_i)?;
                let (e1, e2) = (self.cfg.eta1, self.cfg.eta2);
                let top = t.mean(e1, e2) + 2.0 * e1 * e2 * t.coherence.norm();
                if top > 0.0 {
                    (t.probability(e1, e2, phi) / top).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
            _ => 1.0,
        };
        let pair = match (self.cfg.emission, self.cfg.phase) {
            (Emission::Pair, PumpPhase::Fixed(phi)) => Some(self.pair_tables(phi, tau_s, tau_i)?),
            _ => None,
        };
        Ok(Setting {
            tau_i,
            herald,
            herald_mass,
            phases: transform_phases(&cache.signal, tau_s),
            delay: (0..cache.signal.len())
                .map(|i| Complex64::from_polar(1.0, cache.signal.detuning(i) * tau_s))
                .collect(),
            accept_all_port,
            pair,
        })
    }

    fn pair_tables(&self, phi: f64, tau_s: f64, tau_i: f64) -> Result<PairTables> {
        let (sg, ig) = (&self.cache.signal, &self.cache.idler);
        let ni = ig.len();
        let f1 = self.cfg.sources.source1.sample();
        let f2 = self.cfg.sources.source2.sample();
        let (r1, r2) = (self.cfg.eta1.sqrt(), self.cfg.eta2.sqrt());
        let mut mass = [0.0; 2];
        let mut dens: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (slot, s) in [1.0, -1.0].into_iter().enumerate() {
            dens[slot] = (0..f1.len())
                .map(|idx| {
                    let (i, j) = (idx / ni, idx % ni);
                    let ph = Complex64::from_polar(s, phi + sg.detuning(i) * tau_s + ig.detuning(j) * tau_i);
                    (f1[idx] * r1 + ph * f2[idx] * r2).norm_sqr()
                })
                .collect();
            mass[slot] = dens[slot].iter().sum();
        }
        let sampler = [WeightedIndex::new(&dens[0]).ok(), WeightedIndex::new(&dens[1]).ok()];
        if sampler.iter().all(Option::is_none) {
            return Err(Error::Empty("pair density"));
        }
        Ok(PairTables { mass, sampler })
    }

    /// Run at the configured delays and seed.
    pub fn run(&self) -> Result<SimulationRun> {
        self.run_at(self.cfg.tau_s, self.cfg.tau_i, self.cfg.seed)
    }

    /// Run at the given delays; each pulse draws from its own substream of `seed`.
    pub fn run_at(&self, tau_s: f64, tau_i: f64, seed: u64) -> Result<SimulationRun> {
        let setting = self.setting(tau_s, tau_i)?;
        let weights = self.class_weights();
        let weight: f64 = weights.iter().sum();
        if weight <= 0.0 {
            return Err(Error::Empty("emission classes"));
        }
        let class_index = WeightedIndex::new(weights).map_err(|_| Error::Empty("emission classes"))?;
        let n = self.cfg.pulses;
        let chunks = n.div_ceil(CHUNK);
        let parts: Vec<(Vec<TimeTagEvent>, Vec<EventClass>, SimulationSummary)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut events = Vec::new();
                let mut classes = Vec::with_capacity((hi - lo) as usize);
                let mut summary = SimulationSummary::default();
                for pulse in lo..hi {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(pulse);
                    let class = EventClass::ALL[class_index.sample(&mut rng)];
                    classes.push(class);
                    self.pulse(pulse, class, &setting, &mut rng, &mut events, &mut summary);
                }
                (events, classes, summary)
            })
            .collect();
        let mut events = Vec::new();
        let mut classes = Vec::with_capacity(n as usize);
        let mut summary = SimulationSummary::default();
        for (e, c, s) in parts {
            events.extend(e);
            classes.extend(c);
            summary.merge(&s);
        }
        Ok(SimulationRun {
            events,
            classes,
            summary,
            weight,
            tau_s,
            tau_i,
        })
    }

    fn pulse(
        &self,
        pulse: u64,
        class: EventClass,
        setting: &Setting,
        rng: &mut ChaCha8Rng,
        events: &mut Vec<TimeTagEvent>,
        summary: &mut SimulationSummary,
    ) {
        summary.pulses += 1;
        summary.class_counts[class.index()] += 1;
        // (channel, signal-or-idler grid, detuning)
        let mut photons: Vec<(Channel, f64)> = Vec::with_capacity(4);
        match class {
            EventClass::Swap => self.swap(setting, rng, &mut photons),
            EventClass::Double1 | EventClass::Double2 => {
                let s = if class == EventClass::Double1 { 0 } else { 1 };
                for (ws, wi) in self.draw_double(s, rng) {
                    photons.push((if rng.random_bool(0.5) { Channel::C } else { Channel::D }, wi));
                    photons.push((if rng.random_bool(0.5) { Channel::X } else { Channel::Y }, ws));
                }
            }
            EventClass::Pair1 | EventClass::Pair2 => {
                let s = if class == EventClass::Pair1 { 0 } else { 1 };
                let (ws, wi) = self.draw_pair(s, rng);
                photons.push((if rng.random_bool(0.5) { Channel::C } else { Channel::D }, wi));
                photons.push((if rng.random_bool(0.5) { Channel::X } else { Channel::Y }, ws));
            }
            EventClass::PairCoherent => {
                let t = setting.pair.as_ref().expect("pair tables for fixed phase");
                let plus = rng.random::<f64>() * (t.mass[0] + t.mass[1]) < t.mass[0];
                let slot = if plus { 0 } else { 1 };
                let idx = t.sampler[slot].as_ref().expect("zero-mass port is never drawn").sample(rng);
                let ni = self.cache.idler.len();
                let ws = self.dither(&self.cache.signal, idx / ni, rng);
                let wi = self.dither(&self.cache.idler, idx % ni, rng);
                // Port signs: c, x carry +; equal signs give the + density.
                let c = rng.random_bool(0.5);
                let x = if plus { c } else { !c };
                photons.push((if c { Channel::C } else { Channel::D }, wi));
                photons.push((if x { Channel::X } else { Channel::Y }, ws));
            }
        }
        if setting.accept_all_port < 1.0
            && Channel::ALL.iter().all(|ch| photons.iter().any(|p| p.0 == *ch))
            && !rng.random_bool(setting.accept_all_port)
        {
            photons.retain(|p| p.0 != Channel::Y);
            summary.phase_rejected += 1;
        }
        self.detect(pulse, class, &photons, rng, events, summary);
    }

    fn dither(&self, grid: &FrequencyGrid, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        grid.detuning(i) + grid.spacing() * (rng.random::<f64>() - 0.5)
    }

    /// Two pairs from source `s`, distributed as |f₁₁f₂₂ + f₁₂f₂₁|².
    ///
    /// Independent pairs are accepted with |a + b|²/2(|a|² + |b|²), which after
    /// symmetrization over the idler labels leaves the target density.
    fn draw_double(&self, s: usize, rng: &mut ChaCha8Rng) -> [(f64, f64); 2] {
        let ni = self.cache.idler.len();
        let f = &self.cache.amplitude[s];
        let mut pick = (0, 0);
        for _ in 0..MAX_REJECTIONS {
            let (p, q) = (self.cache.jsi[s].sample(rng), self.cache.jsi[s].sample(rng));
            pick = (p, q);
            let (s1, i1, s2, i2) = (p / ni, p % ni, q / ni, q % ni);
            let a = f[p] * f[q];
            let b = f[s1 * ni + i2] * f[s2 * ni + i1];
            if rng.random::<f64>() * 2.0 * (a.norm_sqr() + b.norm_sqr()) <= (a + b).norm_sqr() {
                break;
            }
        }
        let draw = |idx: usize, rng: &mut ChaCha8Rng| {
            (
                self.dither(&self.cache.signal, idx / ni, rng),
                self.dither(&self.cache.idler, idx % ni, rng),
            )
        };
        [draw(pick.0, rng), draw(pick.1, rng)]
    }

    /// Signal and idler detunings of one pair from source `s`.
    fn draw_pair(&self, s: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let ni = self.cache.idler.len();
        let idx = self.cache.jsi[s].sample(rng);
        (
            self.dither(&self.cache.signal, idx / ni, rng),
            self.dither(&self.cache.idler, idx % ni, rng),
        )
    }

    fn swap(&self, setting: &Setting, rng: &mut ChaCha8Rng, photons: &mut Vec<(Channel, f64)>) {
        let cache = &self.cache;
        let ni = cache.idler.len();
        let coincident = setting.herald.is_some() && rng.random::<f64>() < setting.herald_mass;
        if coincident {
            let idx = setting.herald.as_ref().unwrap().sample(rng);
            let (j, k) = (idx / ni, idx % ni);
            photons.push((Channel::C, self.dither(&cache.idler, j, rng)));
            photons.push((Channel::D, self.dither(&cache.idler, k, rng)));
            let (a, c) = (cache.modes[0][j].as_ref(), cache.modes[0][k].as_ref());
            let (b, d) = (cache.modes[1][k].as_ref(), cache.modes[1][j].as_ref());
            if let (Some(a), Some(b), Some(c), Some(d)) = (a, b, c, d) {
                let theta = (cache.idler.detuning(j) - cache.idler.detuning(k)) * setting.tau_i;
                let bell = bell_parameters(a, b, c, d, theta);
                if !bell.degenerate {
                    let p = fringe_from_modes(a, b, c, d, &bell, theta, &setting.phases);
                    self.signals(setting, [a, b, c, d], bell.kappa, p, rng, photons);
                    return;
                }
            }
            let (a, b) = (self.any_mode(0, j), self.any_mode(1, k));
            self.product_signals(setting, a, b, rng, photons);
        } else {
            // Bunched idlers leave through one port; sampled from the marginals without exchange.
            let port = if rng.random_bool(0.5) { Channel::C } else { Channel::D };
            let j = cache.marginal[0].sample(rng);
            let k = cache.marginal[1].sample(rng);
            photons.push((port, self.dither(&cache.idler, j, rng)));
            photons.push((port, self.dither(&cache.idler, k, rng)));
            let (a, b) = (self.any_mode(0, j), self.any_mode(1, k));
            self.product_signals(setting, a, b, rng, photons);
        }
    }

    fn any_mode(&self, s: usize, j: usize) -> &HeraldedMode {
        self.cache.modes[s][j].as_ref().expect("sampled herald has support")
    }

    fn product_signals(
        &self,
        setting: &Setting,
        a: &HeraldedMode,
        b: &HeraldedMode,
        rng: &mut ChaCha8Rng,
        photons: &mut Vec<(Channel, f64)>,
    ) {
        let g = a.correlation_with(b, &setting.phases);
        let p = (0.5 * (1.0 - g.norm_sqr())).clamp(0.0, 1.0);
        self.signals(
            setting,
            [a, b, a, b],
            (Complex64::new(1.0, 0.0), Complex64::default()),
            p,
            rng,
            photons,
        );
    }

    /// Route the two signals of Ψ = κ₁ a(ω₁) b(ω₂) + κ₂ c(ω₁) d(ω₂) through the
    /// signal beamsplitter (source 2 delayed by τ_S). `p` is the coincidence probability.
    fn signals(
        &self,
        setting: &Setting,
        m: [&HeraldedMode; 4],
        kappa: (Complex64, Complex64),
        p: f64,
        rng: &mut ChaCha8Rng,
        photons: &mut Vec<(Channel, f64)>,
    ) {
        let coincident = rng.random::<f64>() < p;
        let sign = if coincident { -1.0 } else { 1.0 };
        let [a, b, c, d] = m;
        let e = &setting.delay;
        let (k1, k2) = kappa;
        // Amplitude Σ_m c_m u_m(ν₁) v_m(ν₂); u or v carries e^{iντ} when it belongs to source 2.
        let coef = [k1, k2, k1 * sign, k2 * sign];
        let u: [(&[Complex64], bool); 4] = [
            (a.amplitude(), false),
            (c.amplitude(), false),
            (b.amplitude(), true),
            (d.amplitude(), true),
        ];
        let v: [(&[Complex64], bool); 4] = [
            (b.amplitude(), true),
            (d.amplitude(), true),
            (a.amplitude(), false),
            (c.amplitude(), false),
        ];
        let at = |f: (&[Complex64], bool), i: usize| if f.1 { f.0[i] * e[i] } else { f.0[i] };
        let mass = |f: &[Complex64]| f.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let w: Vec<f64> = (0..4).map(|t| coef[t].norm_sqr() * mass(u[t].0) * mass(v[t].0)).collect();
        let pick = match WeightedIndex::new(&w) {
            Ok(p) => p,
            Err(_) => return,
        };
        let n = self.cache.signal.len();
        let mut chosen = None;
        for _ in 0..MAX_REJECTIONS {
            let t = pick.sample(rng);
            let i1 = sample_linear(u[t].0, rng);
            let i2 = sample_linear(v[t].0, rng);
            let amp: Complex64 = (0..4).map(|s| coef[s] * at(u[s], i1) * at(v[s], i2)).sum();
            let bound: f64 = (0..4)
                .map(|s| coef[s].norm_sqr() * at(u[s], i1).norm_sqr() * at(v[s], i2).norm_sqr())
                .sum();
            if bound > 0.0 && rng.random::<f64>() * 4.0 * bound <= amp.norm_sqr() {
                chosen = Some((i1, i2));
                break;
            }
        }
        let (i1, i2) = chosen.unwrap_or((n / 2, n / 2));
        let (w1, w2) = (self.dither(&self.cache.signal, i1, rng), self.dither(&self.cache.signal, i2, rng));
        if coincident {
            photons.push((Channel::X, w1));
            photons.push((Channel::Y, w2));
        } else {
            let port = if rng.random_bool(0.5) { Channel::X } else { Channel::Y };
            photons.push((port, w1));
            photons.push((port, w2));
        }
    }

    /// Losses, spectrometer conversion and first-photon detection on each channel.
    fn detect(
        &self,
        pulse: u64,
        class: EventClass,
        photons: &[(Channel, f64)],
        rng: &mut ChaCha8Rng,
        events: &mut Vec<TimeTagEvent>,
        summary: &mut SimulationSummary,
    ) {
        let mut first: [Option<(f64, i64)>; 4] = [None; 4];
        for &(ch, omega) in photons {
            summary.photons += 1;
            let c = ch.index();
            let cfg = &self.cfg.channels[c];
            let survive = self.cfg.efficiency[c] * cfg.transmission();
            if survive < 1.0 && !rng.random_bool(survive) {
                summary.lost_efficiency += 1;
                continue;
            }
            let grid = if matches!(ch, Channel::C | Channel::D) {
                &self.cache.idler
            } else {
                &self.cache.signal
            };
            let lambda = wavelength(grid.center() + omega);
            let arrival = match freq_to_time(lambda, cfg, rng) {
                Some(a) if a.tick >= 0 => a,
                _ => {
                    summary.lost_window += 1;
                    continue;
                }
            };
            match first[c] {
                Some((t, _)) if t <= arrival.time => summary.lost_dead_time += 1,
                Some(_) => {
                    summary.lost_dead_time += 1;
                    first[c] = Some((arrival.time, arrival.tick));
                }
                None => first[c] = Some((arrival.time, arrival.tick)),
            }
        }
        if first.iter().all(Option::is_some) {
            summary.fourfold[class.index()] += 1;
        }
        for (c, f) in first.iter().enumerate() {
            if let Some((_, tick)) = f {
                events.push(TimeTagEvent {
                    pulse,
                    channel: Channel::ALL[c],
                    tag: *tick,
                });
            }
        }
    }
}

/// Index drawn with probability ∝ |f_i|².
fn sample_linear(f: &[Complex64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, z) in f.iter().enumerate() {
        u -= z.norm_sqr();
        if u < 0.0 {
            return i;
        }
    }
    f.len() - 1
}

/// Four-photon Monte Carlo at the configured delays.
pub fn sample_fourfold(cfg: &ExperimentConfig) -> Result<SimulationRun> {
    let mut cfg = cfg.clone();
    cfg.emission = Emission::FourPhoton;
    Simulator::new(cfg)?.run()
}

/// Single-pair Monte Carlo at the configured delays.
pub fn sample_pairs(cfg: &ExperimentConfig) -> Result<SimulationRun> {
    let mut cfg = cfg.clone();
    cfg.emission = Emission::Pair;
    Simulator::new(cfg)?.run()
}

/// n-fold coincidence counts binned by spectrometer pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub channels: Vec<Channel>,
    pub maps: Vec<PixelMap>,
    /// Pixel tuple in `channels` order → count.
    pub counts: BTreeMap<Vec<i64>, u64>,
}

impl CoincidenceHistogram {
    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, pixels: &[i64]) -> u64 {
        self.counts.get(pixels).copied().unwrap_or(0)
    }

    /// Counts with every axis inside its inclusive pixel range.
    pub fn count_in(&self, ranges: &[(i64, i64)]) -> u64 {
        self.counts
            .iter()
            .filter(|(k, _)| k.iter().zip(ranges).all(|(p, r)| (r.0..=r.1).contains(p)))
            .map(|(_, v)| v)
            .sum()
    }

    /// Sum over every axis not in `keep`.
    pub fn marginalize(&self, keep: &[Channel]) -> Result<Self> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|c| {
                self.channels
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| Error::AxisMismatch(format!("channel {c} not in histogram")))
            })
            .collect::<Result<_>>()?;
        let mut counts = BTreeMap::new();
        for (k, v) in &self.counts {
            *counts.entry(idx.iter().map(|&i| k[i]).collect()).or_insert(0) += v;
        }
        Ok(Self {
            channels: keep.to_vec(),
            maps: idx.iter().map(|&i| self.maps[i]).collect(),
            counts,
        })
    }

    /// Inclusive pixel range occupied along `axis`.
    pub fn range(&self, axis: usize) -> Option<(i64, i64)> {
        let lo = self.counts.keys().map(|k| k[axis]).min()?;
        let hi = self.counts.keys().map(|k| k[axis]).max()?;
        Some((lo, hi))
    }
}

/// Pixel of a tag on a spectrometer; pixel 0 holds λ₀.
pub fn tag_pixel(tag: i64, cfg: &TofsConfig) -> i64 {
    tag - (cfg.clock_offset / cfg.tdc_bin).round() as i64
}

/// Bin the same-pulse coincidences among `channels` whose arrival times span
/// at most `window` ps.
pub fn histogram(events: &[TimeTagEvent], tofs: &[TofsConfig; 4], channels: &[Channel], window: f64) -> Result<CoincidenceHistogram> {
    if channels.is_empty() || channels.len() > 4 {
        return Err(invalid("channels", "between one and four channels"));
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(invalid("channels", format!("channel {c} repeated")));
        }
        if !(window >= tofs[c.index()].tdc_bin) {
            return Err(invalid("window", format!("{window} ps is below the TDC bin of channel {c}")));
        }
    }
    if events.windows(2).any(|w| w[1].pulse < w[0].pulse) {
        return Err(invalid("events", "not sorted by pulse index"));
    }
    let mut counts = BTreeMap::new();
    let mut start = 0;
    while start < events.len() {
        let pulse = events[start].pulse;
        let mut end = start;
        while end < events.len() && events[end].pulse == pulse {
            end += 1;
        }
        let group = &events[start..end];
        start = end;
        let tags: Option<Vec<i64>> = channels
            .iter()
            .map(|c| group.iter().find(|e| e.channel == *c).map(|e| e.tag))
            .collect();
        let Some(tags) = tags else { continue };
        let times: Vec<f64> = tags
            .iter()
            .zip(channels)
            .map(|(t, c)| *t as f64 * tofs[c.index()].tdc_bin)
            .collect();
        let spread = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - times.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > window {
            continue;
        }
        let key: Vec<i64> = tags.iter().zip(channels).map(|(t, c)| tag_pixel(*t, &tofs[c.index()])).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(CoincidenceHistogram {
        channels: channels.to_vec(),
        maps: channels.iter().map(|c| tofs[c.index()].pixel_map()).collect(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    Signal,
    Idler,
    Both,
}

impl FromStr for ScanAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "signal" | "tau_s" => Ok(ScanAxis::Signal),
            "idler" | "tau_i" => Ok(ScanAxis::Idler),
            "both" => Ok(ScanAxis::Both),
            other => Err(invalid("axis", format!("unknown scan axis '{other}'"))),
        }
    }
}

/// Inclusive pixel ranges of the two herald detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeraldBins {
    pub c: (i64, i64),
    pub d: (i64, i64),
}

impl HeraldBins {
    pub fn pixels(j: i64, k: i64) -> Self {
        Self { c: (j, j), d: (k, k) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub axis: ScanAxis,
    pub tau_s: Vec<f64>,
    pub tau_i: Vec<f64>,
    pub herald: Option<HeraldBins>,
    /// Report four-folds per herald two-fold instead of an absolute rate.
    pub conditional: bool,
    /// Coincidence window, ps.
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanOutput {
    Trace(FringeTrace),
    Map { peak: Peak2D, errors: Vec<f64> },
}

/// Four-fold counts of one run reduced to a value and its binomial error.
pub fn fourfold_value(
    run: &SimulationRun,
    tofs: &[TofsConfig; 4],
    herald: Option<HeraldBins>,
    conditional: bool,
    window: f64,
) -> Result<(f64, f64)> {
    let four = histogram(&run.events, tofs, &Channel::ALL, window)?;
    let wide = (i64::MIN, i64::MAX);
    let (rc, rd) = herald.map_or((wide, wide), |h| (h.c, h.d));
    let n4 = four.count_in(&[rc, rd, wide, wide]) as f64;
    if conditional {
        let two = histogram(&run.events, tofs, &[Channel::C, Channel::D], window)?;
        let n2 = two.count_in(&[rc, rd]) as f64;
        if n2 == 0.0 {
            return Ok((0.0, 0.0));
        }
        let p = n4 / n2;
        Ok((p, (p * (1.0 - p) / n2).sqrt()))
    } else {
        let n = run.summary.pulses as f64;
        let p = n4 / n;
        Ok((p * run.weight, (p * (1.0 - p) / n).sqrt() * run.weight))
    }
}

/// Seed of the `index`-th setting of a scan.
pub fn setting_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Delay scan: one Monte Carlo run per delay setting.
pub fn scan(cfg: &ExperimentConfig, spec: &ScanSpec) -> Result<ScanOutput> {
    let sim = Simulator::new(cfg.clone())?;
    let settings: Vec<(f64, f64)> = match spec.axis {
        ScanAxis::Signal => spec.tau_s.iter().map(|&s| (s, cfg.tau_i)).collect(),
        ScanAxis::Idler => spec.tau_i.iter().map(|&i| (cfg.tau_s, i)).collect(),
        ScanAxis::Both => spec.tau_s.iter().flat_map(|&s| spec.tau_i.iter().map(move |&i| (s, i))).collect(),
    };
    if settings.is_empty() {
        return Err(Error::Empty("delay axis"));
    }
    let mut values = Vec::with_capacity(settings.len());
    let mut errors = Vec::with_capacity(settings.len());
    for (n, &(ts, ti)) in settings.iter().enumerate() {
        let run = sim.run_at(ts, ti, setting_seed(cfg.seed, n))?;
        let (v, e) = fourfold_value(&run, &cfg.channels, spec.herald, spec.conditional, spec.window)?;
        values.push(v);
        errors.push(e);
    }
    let quantity = if spec.conditional { "conditional" } else { "rate" };
    Ok(match spec.axis {
        ScanAxis::Both => ScanOutput::Map {
            peak: Peak2D {
                tau_s: spec.tau_s.clone(),
                tau_i: spec.tau_i.clone(),
                values,
            },
            errors,
        },
        axis => {
            let tau = if axis == ScanAxis::Signal {
                spec.tau_s.clone()
            } else {
                spec.tau_i.clone()
            };
            let mut t = FringeTrace::new(tau, values)
                .with_meta("axis", if axis == ScanAxis::Signal { "tau_s" } else { "tau_i" })
                .with_meta("quantity", quantity)
                .with_meta("pulses", cfg.pulses)
                .with_meta("eta1", cfg.eta1)
                .with_meta("eta2", cfg.eta2);
            if let Some(h) = spec.herald {
                t = t
                    .with_meta("herald_c", format!("{}..{}", h.c.0, h.c.1))
                    .with_meta("herald_d", format!("{}..{}", h.d.0, h.d.1));
            }
            t.errors = errors;
            ScanOutput::Trace(t)
        }
    })
}

/// Signal trace minus blocked-source traces, errors added in quadrature.
pub fn subtract_background(signal: &FringeTrace, blocked: &[&FringeTrace]) -> Result<FringeTrace> {
    let n = signal.len();
    for b in blocked {
        if b.len() != n || b.tau.iter().zip(&signal.tau).any(|(x, y)| (x - y).abs() > 1e-12) {
            return Err(Error::AxisMismatch("background scan uses a different delay axis".into()));
        }
    }
    let err = |t: &FringeTrace, i: usize| t.errors.get(i).copied().unwrap_or(0.0);
    let values: Vec<f64> = (0..n)
        .map(|i| signal.values[i] - blocked.iter().map(|b| b.values[i]).sum::<f64>())
        .collect();
    let errors: Vec<f64> = (0..n)
        .map(|i| (err(signal, i).powi(2) + blocked.iter().map(|b| err(b, i).powi(2)).sum::<f64>()).sqrt())
        .collect();
    let mut out = FringeTrace::new(signal.tau.clone(), values);
    out.meta = signal.meta.clone();
    let (hi, lo) = (out.max(), out.min());
    if hi + lo > 0.0 {
        out = out.with_meta("raw_visibility", (hi - lo) / (hi + lo));
    }
    out = out.with_meta("background_subtracted", blocked.len());
    out.errors = errors;
    Ok(out)
}
