//! Physical constants and unit conversions.
//!
//! Angular frequencies are in rad/ps, times in ps and wavelengths in nm.

use std::f64::consts::PI;

/// Speed of light in nm/ps.
pub const SPEED_OF_LIGHT_NM_PER_PS: f64 = 299_792.458;

/// Absolute angular frequency (rad/ps) of light at `wavelength_nm`.
pub fn angular_frequency(wavelength_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / wavelength_nm
}

/// Wavelength (nm) of light with absolute angular frequency `omega` (rad/ps).
pub fn wavelength(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / omega
}

/// |dω/dλ| at `center_nm`, in rad/ps per nm.
pub fn rad_per_ps_per_nm(center_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / (center_nm * center_nm)
}

/// First-order wavelength offset (nm) of an angular detuning (rad/ps) around `center_nm`.
///
/// Positive detuning (bluer light) gives a negative wavelength offset.
pub fn detuning_to_wavelength_offset(detuning: f64, center_nm: f64) -> f64 {
    -detuning / rad_per_ps_per_nm(center_nm)
}

/// Inverse of [`detuning_to_wavelength_offset`].
pub fn wavelength_offset_to_detuning(offset_nm: f64, center_nm: f64) -> f64 {
    -offset_nm * rad_per_ps_per_nm(center_nm)
}

/// Gaussian standard deviation corresponding to a full width at half maximum.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_nanometres_at_830() {
        let d = wavelength_offset_to_detuning(8.0, 830.0).abs();
        assert!((d - 21.8743).abs() < 1e-4, "{d}");
    }

    #[test]
    fn wavelength_round_trip() {
        let w = angular_frequency(830.0);
        assert!((wavelength(w) - 830.0).abs() < 1e-10);
        let off = detuning_to_wavelength_offset(3.0, 830.0);
        assert!((wavelength_offset_to_detuning(off, 830.0) - 3.0).abs() < 1e-12);
    }
}
