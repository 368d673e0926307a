//! Time-of-flight spectrometer: dispersive frequency-to-time mapping, detector
//! jitter, TDC quantization and the pixel calibration.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::units::{angular_frequency, fwhm_to_sigma, wavelength};

/// One dispersive spectrometer arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofsConfig {
    /// ps/nm; longer wavelengths arrive later.
    pub dispersion: f64,
    pub center_wavelength: f64,
    /// Detector timing jitter, FWHM (ps).
    pub jitter_fwhm: f64,
    /// TDC base unit (ps).
    pub tdc_bin: f64,
    /// Full width of the transmitted band (nm), centered on λ₀.
    pub window: f64,
    pub insertion_loss_db: f64,
    /// Arrival time of λ₀ relative to the pulse clock (ps).
    pub clock_offset: f64,
}

impl TofsConfig {
    pub fn new(dispersion: f64, center_wavelength: f64, jitter_fwhm: f64, tdc_bin: f64, window: f64) -> Result<Self> {
        let cfg = Self {
            dispersion,
            center_wavelength,
            jitter_fwhm,
            tdc_bin,
            window,
            insertion_loss_db: 0.0,
            clock_offset: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Chirped fiber Bragg grating arm: 1000 ps/nm, 10 nm window, 10 dB loss.
    pub fn cfbg() -> Self {
        Self {
            dispersion: 1000.0,
            center_wavelength: 830.0,
            jitter_fwhm: 20.0,
            tdc_bin: 100.0,
            window: 10.0,
            insertion_loss_db: 10.0,
            clock_offset: 0.0,
        }
    }

    /// 500 m fiber spool arm: 50 ps/nm, 1 dB loss; the window is the full down-converted band.
    pub fn spool() -> Self {
        Self {
            dispersion: 50.0,
            center_wavelength: 830.0,
            jitter_fwhm: 20.0,
            tdc_bin: 100.0,
            window: 60.0,
            insertion_loss_db: 1.0,
            clock_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        pos("dispersion", self.dispersion)?;
        pos("center_wavelength", self.center_wavelength)?;
        pos("tdc_bin", self.tdc_bin)?;
        pos("window", self.window)?;
        if !(self.jitter_fwhm.is_finite() && self.jitter_fwhm >= 0.0) {
            return Err(invalid("jitter_fwhm", format!("must be nonnegative, got {}", self.jitter_fwhm)));
        }
        if !(self.insertion_loss_db.is_finite() && self.insertion_loss_db >= 0.0) {
            return Err(invalid("insertion_loss_db", "must be nonnegative"));
        }
        if !self.clock_offset.is_finite() {
            return Err(invalid("clock_offset", "must be finite"));
        }
        Ok(())
    }

    /// Pixel width T/D in nm.
    pub fn spectral_resolution(&self) -> f64 {
        self.tdc_bin / self.dispersion
    }

    /// Jitter FWHM mapped to wavelength, nm.
    pub fn jitter_blur(&self) -> f64 {
        self.jitter_fwhm / self.dispersion
    }

    pub fn jitter_sigma(&self) -> f64 {
        fwhm_to_sigma(self.jitter_fwhm)
    }

    /// Standard deviation (ps) of jitter plus uniform TDC rounding: √(σ_j² + T²/12).
    pub fn composite_sigma(&self) -> f64 {
        (self.jitter_sigma().powi(2) + self.tdc_bin * self.tdc_bin / 12.0).sqrt()
    }

    /// Survival probability 10^(−dB/10).
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.insertion_loss_db / 10.0)
    }

    pub fn in_window(&self, wavelength_nm: f64) -> bool {
        (wavelength_nm - self.center_wavelength).abs() <= 0.5 * self.window
    }

    pub fn pixel_map(&self) -> PixelMap {
        PixelMap {
            center_wavelength: self.center_wavelength,
            pitch: self.spectral_resolution(),
        }
    }
}

/// T / D in nm.
pub fn spectral_resolution(cfg: &TofsConfig) -> f64 {
    cfg.spectral_resolution()
}

/// Pixel index ↔ wavelength, affine with pixel 0 at λ₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMap {
    pub center_wavelength: f64,
    /// nm per pixel.
    pub pitch: f64,
}

impl PixelMap {
    pub fn wavelength(&self, pixel: i64) -> f64 {
        self.center_wavelength + pixel as f64 * self.pitch
    }

    /// Nearest pixel to `wavelength_nm`.
    pub fn pixel(&self, wavelength_nm: f64) -> i64 {
        ((wavelength_nm - self.center_wavelength) / self.pitch).round() as i64
    }

    /// Angular detuning (rad/ps) of the pixel center from the carrier at λ₀.
    pub fn detuning(&self, pixel: i64) -> f64 {
        angular_frequency(self.wavelength(pixel)) - angular_frequency(self.center_wavelength)
    }

    /// Pixel containing light at angular detuning `omega` from the carrier.
    pub fn pixel_of_detuning(&self, omega: f64) -> i64 {
        self.pixel(wavelength(angular_frequency(self.center_wavelength) + omega))
    }

    /// (pixel, wavelength, detuning) rows for pixels `lo..=hi`.
    pub fn table(&self, lo: i64, hi: i64) -> Vec<(i64, f64, f64)> {
        (lo..=hi).map(|p| (p, self.wavelength(p), self.detuning(p))).collect()
    }
}

/// A converted photon: jittered arrival time and its TDC tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub tick: i64,
}

/// Arrival time t = D(λ − λ₀) + jitter + clock offset, quantized to the TDC base unit.
/// Photons outside the spectral window are lost and give `None`.
pub fn freq_to_time<R: Rng + ?Sized>(wavelength_nm: f64, cfg: &TofsConfig, rng: &mut R) -> Option<Arrival> {
    if !cfg.in_window(wavelength_nm) {
        return None;
    }
    let mut t = cfg.dispersion * (wavelength_nm - cfg.center_wavelength) + cfg.clock_offset;
    let s = cfg.jitter_sigma();
    if s > 0.0 {
        t += Normal::new(0.0, s).expect("finite jitter").sample(rng);
    }
    Some(Arrival {
        time: t,
        tick: quantize(t, cfg),
    })
}

/// TDC tick of an arrival time.
pub fn quantize(time: f64, cfg: &TofsConfig) -> i64 {
    (time / cfg.tdc_bin).round() as i64
}

/// Pixel index of each TDC tick; pixel 0 holds λ₀.
pub fn pixelize(ticks: &[i64], cfg: &TofsConfig) -> Vec<i64> {
    let origin = quantize(cfg.clock_offset, cfg);
    ticks.iter().map(|t| t - origin).collect()
}
