//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use tfswap_core::analysis::{FitModel, OverlapNorm};
use tfswap_core::distinguish::PortPairing;
use tfswap_core::events::default_channel;
use tfswap_core::observables::FringeModel;
use tfswap_core::units::angular_frequency;
use tfswap_core::{FilterShape, FrequencyGrid, GaussianParams, JointSpectralAmplitude, PumpPhase, SincPmParams, SourcePair, TofsConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: `{}`: {}", self.key, self.reason),
            None => write!(f, "config `{}`: {}", self.key, self.reason),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Evenly spaced values `start:stop:count`, or a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn single(v: f64) -> Self {
        Self {
            start: v,
            stop: v,
            count: 1,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

impl FromStr for Range {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or(format!("`{p}` is not a finite number"))
        };
        match parts.as_slice() {
            [v] => Ok(Range::single(num(v)?)),
            [a, b, n] => {
                let count: usize = n.parse().map_err(|_| format!("`{n}` is not a point count"))?;
                if count == 0 {
                    return Err("point count must be positive".into());
                }
                let (start, stop) = (num(a)?, num(b)?);
                if count == 1 && start != stop {
                    return Err("a single point needs start = stop".into());
                }
                Ok(Range { start, stop, count })
            }
            _ => Err("expected `value` or `start:stop:count`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    Gaussian(GaussianParams),
    Sinc(SincPmParams),
}

/// Resolved configuration; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: SourceModel,
    /// Degenerate center wavelength (nm).
    pub center_wavelength: f64,
    pub grid: usize,
    /// Translation of source 2 (signal, idler) in rad/ps.
    pub source2_shift: [f64; 2],
    /// Target |overlap| of source 2 with source 1; overrides the shift magnitude.
    pub source_overlap: Option<f64>,
    pub overlap_direction: [f64; 2],
    /// Herald bin pitch (nm); bin j sits at λ₀ + j·pitch.
    pub bin_pitch: f64,
    pub bins: (i64, i64),
    pub tau_s: Range,
    pub tau_i: Range,
    /// Herald grid points per axis for summed quantities.
    pub herald_grid: usize,
    /// Half range of the pixel map (pixels).
    pub map_pixels: i64,
    /// Pixels per map cell.
    pub map_stride: i64,
    pub fringe_model: FringeModel,
    pub fit_model: FitModel,
    pub filter_shape: String,
    /// Filter width (nm); the bank pitch for rect filters.
    pub filter_width: f64,
    pub filter_sigma: f64,
    pub purity_widths: Vec<f64>,
    pub spectrometer: TofsConfig,
    pub efficiency: [f64; 4],
    pub eta1: f64,
    pub eta2: f64,
    pub pulses: u64,
    pub seed: u64,
    pub pump_phase: PumpPhase,
    pub phase_points: usize,
    pub coincidence_window: f64,
    /// Pixels per herald bin for simulated scans.
    pub herald_width: i64,
    pub pairing: PortPairing,
    pub ortho_bins: usize,
    /// Spacing (nm) of the orthomode herald comb.
    pub ortho_pitch: f64,
    pub ortho_threshold: f64,
    pub overlap_norm: OverlapNorm,
    pub out: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "model",
    "sigma_s",
    "sigma_i",
    "alpha",
    "pump_sigma",
    "kappa_s",
    "kappa_i",
    "length",
    "center_wavelength",
    "grid",
    "source2_shift_s",
    "source2_shift_i",
    "source_overlap",
    "overlap_direction",
    "bin_pitch",
    "bins",
    "tau_s",
    "tau_i",
    "herald_grid",
    "map_pixels",
    "map_stride",
    "fringe_model",
    "fit_model",
    "filter_shape",
    "filter_width",
    "filter_sigma",
    "purity_widths",
    "spectrometer",
    "dispersion",
    "jitter_fwhm",
    "tdc_bin",
    "window",
    "insertion_loss_db",
    "clock_offset",
    "efficiency",
    "eta1",
    "eta2",
    "pulses",
    "seed",
    "pump_phase",
    "phase_points",
    "coincidence_window",
    "herald_width",
    "pairing",
    "ortho_bins",
    "ortho_pitch",
    "ortho_threshold",
    "overlap_norm",
    "out",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceModel::Gaussian(GaussianParams::new(2.369, 3.333, 0.06204).expect("default source")),
            center_wavelength: 830.0,
            grid: 256,
            source2_shift: [0.0; 2],
            source_overlap: None,
            overlap_direction: [1.0, 0.0],
            bin_pitch: 2.0,
            bins: (2, -2),
            tau_s: Range {
                start: -1.5,
                stop: 1.5,
                count: 121,
            },
            tau_i: Range::single(0.0),
            herald_grid: 64,
            map_pixels: 100,
            map_stride: 5,
            fringe_model: FringeModel::Exact,
            fit_model: FitModel::FarBin,
            filter_shape: "rect".into(),
            filter_width: 0.1,
            filter_sigma: 0.0,
            purity_widths: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            spectrometer: default_channel(),
            efficiency: [1.0; 4],
            eta1: 0.01,
            eta2: 0.01,
            pulses: 100_000,
            seed: 1,
            pump_phase: PumpPhase::Averaged,
            phase_points: 41,
            coincidence_window: 100_000.0,
            herald_width: 9,
            pairing: PortPairing::CX,
            ortho_bins: 7,
            ortho_pitch: 2.0,
            ortho_threshold: 0.15,
            overlap_norm: OverlapNorm::Cosine,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(key, format!("cannot parse `{v}`")))
}

fn finite(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse(key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(err(key, "must be finite"))
    }
}

fn positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = finite(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(err(key, format!("must be positive, got {x}")))
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|p| finite(key, p.trim())).collect()
}

pub fn parse_bins(v: &str) -> Result<(i64, i64), String> {
    let p: Vec<&str> = v.split(',').map(str::trim).collect();
    match p.as_slice() {
        [a, b] => Ok((
            a.parse().map_err(|_| format!("`{a}` is not a bin index"))?,
            b.parse().map_err(|_| format!("`{b}` is not a bin index"))?,
        )),
        _ => Err("expected `j,k`".into()),
    }
}

const SPECTROMETER_FIELDS: [&str; 6] = [
    "dispersion",
    "jitter_fwhm",
    "tdc_bin",
    "window",
    "insertion_loss_db",
    "clock_offset",
];

impl RunConfig {
    /// Parse configuration text; later keys may not repeat earlier ones.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError {
                line: Some(n + 1),
                key: line.to_string(),
                reason: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError {
                    line: Some(n + 1),
                    key: k.into(),
                    reason: "unknown key".into(),
                });
            }
            if let Some((l, _)) = seen.get(k) {
                return Err(ConfigError {
                    line: Some(n + 1),
                    key: k.into(),
                    reason: format!("repeats line {l}"),
                });
            }
            seen.insert(k.to_string(), (n + 1, v.to_string()));
        }
        let mut cfg = RunConfig::default();
        let get = |k: &str| seen.get(k).map(|(_, v)| v.as_str());
        let at = |k: &str, e: ConfigError| ConfigError {
            line: seen.get(k).map(|(l, _)| *l),
            ..e
        };
        let mut apply = |k: &str| -> Result<(), ConfigError> {
            let Some(v) = get(k) else { return Ok(()) };
            cfg.set(k, v).map_err(|e| at(k, e))
        };
        // Preset first so that individual spectrometer keys override it.
        apply("spectrometer")?;
        for k in KEYS.iter().filter(|&&k| k != "spectrometer") {
            apply(k)?;
        }
        let model = get("model").unwrap_or("gaussian");
        let (gs, ss) = (["sigma_s", "sigma_i", "alpha"], ["pump_sigma", "kappa_s", "kappa_i", "length"]);
        let num = |k: &str, d: f64| -> Result<f64, ConfigError> { get(k).map_or(Ok(d), |v| finite(k, v).map_err(|e| at(k, e))) };
        cfg.source = match model {
            "gaussian" => {
                if let Some(k) = ss.iter().find(|k| seen.contains_key(**k)) {
                    return Err(at(k, err(k, "only valid with model = sinc")));
                }
                let p = GaussianParams::new(num("sigma_s", 2.369)?, num("sigma_i", 3.333)?, num("alpha", 0.06204)?)
                    .map_err(|e| at("alpha", err("sigma_s/sigma_i/alpha", e.to_string())))?;
                SourceModel::Gaussian(p)
            }
            "sinc" => {
                if let Some(k) = gs.iter().find(|k| seen.contains_key(**k)) {
                    return Err(at(k, err(k, "only valid with model = gaussian")));
                }
                let p = SincPmParams::new(
                    num("pump_sigma", 5.0)?,
                    num("kappa_s", 0.3)?,
                    num("kappa_i", 0.35)?,
                    num("length", 1.0)?,
                )
                .map_err(|e| at("length", err("pump_sigma/kappa_s/kappa_i/length", e.to_string())))?;
                SourceModel::Sinc(p)
            }
            other => return Err(at("model", err("model", format!("unknown source model `{other}`")))),
        };
        cfg.validate().map_err(|e| ConfigError {
            line: seen.get(&e.key).map(|(l, _)| *l),
            ..e
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<(), ConfigError> {
        self.set_field(k, v)?;
        if SPECTROMETER_FIELDS.contains(&k) {
            self.spectrometer.validate().map_err(|e| err(k, e.to_string()))?;
        }
        Ok(())
    }

    fn set_field(&mut self, k: &str, v: &str) -> Result<(), ConfigError> {
        match k {
            "model" | "sigma_s" | "sigma_i" | "alpha" | "pump_sigma" | "kappa_s" | "kappa_i" | "length" => {}
            "center_wavelength" => self.center_wavelength = positive(k, v)?,
            "grid" => self.grid = parse(k, v)?,
            "source2_shift_s" => self.source2_shift[0] = finite(k, v)?,
            "source2_shift_i" => self.source2_shift[1] = finite(k, v)?,
            "source_overlap" => self.source_overlap = Some(positive(k, v)?),
            "overlap_direction" => {
                let l = list(k, v)?;
                if l.len() != 2 {
                    return Err(err(k, "expected `signal, idler`"));
                }
                self.overlap_direction = [l[0], l[1]];
            }
            "bin_pitch" => self.bin_pitch = positive(k, v)?,
            "bins" => self.bins = parse_bins(v).map_err(|e| err(k, e))?,
            "tau_s" => self.tau_s = v.parse().map_err(|e: String| err(k, e))?,
            "tau_i" => self.tau_i = v.parse().map_err(|e: String| err(k, e))?,
            "herald_grid" => self.herald_grid = parse(k, v)?,
            "map_pixels" => self.map_pixels = parse(k, v)?,
            "map_stride" => self.map_stride = parse(k, v)?,
            "fringe_model" => {
                self.fringe_model = match v {
                    "exact" => FringeModel::Exact,
                    "approx" => FringeModel::Approx,
                    "gaussian" => FringeModel::Gaussian,
                    _ => return Err(err(k, format!("unknown fringe model `{v}`"))),
                }
            }
            "fit_model" => self.fit_model = v.parse().map_err(|e: tfswap_core::Error| err(k, e.to_string()))?,
            "filter_shape" => {
                if !["rect", "gaussian", "smoothed"].contains(&v) {
                    return Err(err(k, format!("unknown filter shape `{v}`")));
                }
                self.filter_shape = v.into()
            }
            "filter_width" => self.filter_width = positive(k, v)?,
            "filter_sigma" => self.filter_sigma = finite(k, v)?,
            "purity_widths" => self.purity_widths = list(k, v)?,
            "spectrometer" => {
                self.spectrometer = match v {
                    "cfbg" => TofsConfig::cfbg(),
                    "spool" => TofsConfig::spool(),
                    "lossless" => default_channel(),
                    _ => return Err(err(k, format!("unknown spectrometer preset `{v}`"))),
                }
            }
            "dispersion" => self.spectrometer.dispersion = finite(k, v)?,
            "jitter_fwhm" => self.spectrometer.jitter_fwhm = finite(k, v)?,
            "tdc_bin" => self.spectrometer.tdc_bin = finite(k, v)?,
            "window" => self.spectrometer.window = finite(k, v)?,
            "insertion_loss_db" => self.spectrometer.insertion_loss_db = finite(k, v)?,
            "clock_offset" => self.spectrometer.clock_offset = finite(k, v)?,
            "efficiency" => {
                let l = list(k, v)?;
                self.efficiency = match l.as_slice() {
                    [e] => [*e; 4],
                    [a, b, c, d] => [*a, *b, *c, *d],
                    _ => return Err(err(k, "expected one value or four (c, d, x, y)")),
                };
            }
            "eta1" => self.eta1 = finite(k, v)?,
            "eta2" => self.eta2 = finite(k, v)?,
            "pulses" => self.pulses = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "pump_phase" => {
                self.pump_phase = if v == "averaged" {
                    PumpPhase::Averaged
                } else {
                    PumpPhase::Fixed(finite(k, v).map_err(|_| err(k, "expected `averaged` or a phase in rad"))?)
                }
            }
            "phase_points" => self.phase_points = parse(k, v)?,
            "coincidence_window" => self.coincidence_window = positive(k, v)?,
            "herald_width" => self.herald_width = parse(k, v)?,
            "pairing" => self.pairing = v.parse().map_err(|e: tfswap_core::Error| err(k, e.to_string()))?,
            "ortho_bins" => self.ortho_bins = parse(k, v)?,
            "ortho_pitch" => self.ortho_pitch = positive(k, v)?,
            "ortho_threshold" => self.ortho_threshold = positive(k, v)?,
            "overlap_norm" => {
                self.overlap_norm = match v {
                    "cosine" => OverlapNorm::Cosine,
                    "unit-sum" => OverlapNorm::UnitSum,
                    _ => return Err(err(k, format!("unknown overlap normalization `{v}`"))),
                }
            }
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(err(k, "unknown key")),
        }
        Ok(())
    }

    /// Checks shared by the file parser and command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid < 16 {
            return Err(err("grid", format!("need at least 16 points, got {}", self.grid)));
        }
        if self.herald_grid < 2 {
            return Err(err("herald_grid", "need at least 2 points"));
        }
        if self.map_pixels <= 0 || self.map_stride <= 0 {
            return Err(err("map_pixels", "pixel range and stride must be positive"));
        }
        if self.phase_points < 3 {
            return Err(err("phase_points", "need at least 3 points"));
        }
        if self.herald_width <= 0 || self.herald_width % 2 == 0 {
            return Err(err("herald_width", "must be a positive odd pixel count"));
        }
        if self.ortho_bins < 3 {
            return Err(err("ortho_bins", "need at least 3 bins"));
        }
        if self.pulses == 0 {
            return Err(err("pulses", "must be positive"));
        }
        if self.purity_widths.iter().any(|&w| w <= 0.0) || self.purity_widths.is_empty() {
            return Err(err("purity_widths", "widths must be positive"));
        }
        if let Some(o) = self.source_overlap {
            if o > 1.0 {
                return Err(err("source_overlap", "must not exceed 1"));
            }
        }
        if self.filter_shape != "rect" && !(self.filter_sigma > 0.0) {
            return Err(err("filter_sigma", "gaussian and smoothed filters need a positive width"));
        }
        if self.efficiency.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(err("efficiency", "values must lie in [0, 1]"));
        }
        for (k, e) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(0.0..1.0).contains(&e) {
                return Err(err(k, "must lie in [0, 1)"));
            }
        }
        self.spectrometer.validate().map_err(|e| err("spectrometer", e.to_string()))?;
        let lo = self.center_wavelength - self.bin_pitch * self.bins.0.abs().max(self.bins.1.abs()) as f64;
        if lo <= 0.0 {
            return Err(err("bins", "bin wavelengths must stay positive"));
        }
        Ok(())
    }

    /// Canonical rendering of every semantically meaningful field.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        format!("{c:?}")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn center_frequency(&self) -> f64 {
        angular_frequency(self.center_wavelength)
    }

    /// Idler detuning of herald bin `j` (rad/ps).
    pub fn bin_detuning(&self, j: i64) -> f64 {
        angular_frequency(self.center_wavelength + j as f64 * self.bin_pitch) - self.center_frequency()
    }

    pub fn jsa(&self) -> tfswap_core::Result<JointSpectralAmplitude> {
        match &self.source {
            SourceModel::Gaussian(p) => JointSpectralAmplitude::gaussian_with_points(*p, self.center_frequency(), self.grid),
            SourceModel::Sinc(p) => JointSpectralAmplitude::sinc_pm(*p, self.center_frequency(), self.grid),
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianParams> {
        match &self.source {
            SourceModel::Gaussian(p) => Some(p),
            SourceModel::Sinc(_) => None,
        }
    }

    pub fn source_pair(&self, jsa: &JointSpectralAmplitude) -> tfswap_core::Result<SourcePair> {
        match self.source_overlap {
            Some(o) if o < 1.0 => SourcePair::with_overlap(jsa, o, self.overlap_direction),
            _ if self.source2_shift != [0.0; 2] => SourcePair::translated(jsa, self.source2_shift[0], self.source2_shift[1]),
            _ => Ok(SourcePair::identical(jsa)),
        }
    }

    /// Idler filter bank in detuning units: bins of `width_nm` centered on λ₀.
    pub fn filter_bank(&self, width_nm: f64, jsa: &JointSpectralAmplitude) -> tfswap_core::Result<tfswap_core::FilterBank> {
        let pitch = tfswap_core::units::rad_per_ps_per_nm(self.center_wavelength) * width_nm;
        let sigma = tfswap_core::units::rad_per_ps_per_nm(self.center_wavelength) * self.filter_sigma;
        let shape = match self.filter_shape.as_str() {
            "gaussian" => FilterShape::Gaussian { sigma },
            "smoothed" => FilterShape::Smoothed { sigma },
            _ => FilterShape::Rect,
        };
        let half = jsa.idler_grid().half_extent();
        let n = (half / pitch).floor() as i64;
        let first = -(n as f64) * pitch;
        tfswap_core::FilterBank::new(shape, first, pitch, (2 * n + 1) as usize)
    }

    pub fn herald_frequency_grid(&self, jsa: &JointSpectralAmplitude) -> tfswap_core::Result<FrequencyGrid> {
        let ig = jsa.idler_grid();
        FrequencyGrid::symmetric(ig.center(), ig.half_extent(), self.herald_grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("# comment\nalpha = 0\nbins = 3, -1\ntau_s = -1:1:5\n").unwrap();
        assert_eq!(c.bins, (3, -1));
        assert_eq!(c.tau_s.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(matches!(c.source, SourceModel::Gaussian(ref p) if p.alpha == 0.0));
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        let e = RunConfig::parse("sigma_s = 2\nsigmas = 3\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (Some(2), "sigmas"));
        let e = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = RunConfig::parse("grid = 4\n").unwrap_err();
        assert_eq!(e.key, "grid");
        let e = RunConfig::parse("\n\ntdc_bin = -1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn hash_tracks_semantics() {
        let a = RunConfig::parse("seed = 4\n").unwrap();
        let b = RunConfig::parse("# same\n  seed=4   \nout = elsewhere\n").unwrap();
        let c = RunConfig::parse("seed = 5\n").unwrap();
        let d = RunConfig::parse("seed = 4\nsigma_s = 2.369\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash(), d.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn bin_mapping_is_exact() {
        let c = RunConfig::default();
        let d = c.bin_detuning(2) - c.bin_detuning(-2);
        let expect = angular_frequency(834.0) - angular_frequency(826.0);
        assert!((d - expect).abs() < 1e-12);
    }
}
