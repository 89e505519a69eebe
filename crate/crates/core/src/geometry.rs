//! Solar position and analytic clear-sky irradiance.
//!
//! The solar position follows the NOAA solar calculator (Meeus series for
//! the sun's apparent longitude, equation of time and declination). No
//! refraction correction is applied, so the zenith returned here is the
//! geometric zenith.
//!
//! Clear-sky GHI uses the Haurwitz model,
//! `GHI = 1098 cos z exp(-0.057 / cos z)`, which stands in for a full
//! clear-sky service. Smart persistence only uses ratios of clear-sky
//! values, so the absolute calibration of the model matters little.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIX_EPOCH_JD: f64 = 2_440_587.5;
const J2000_JD: f64 = 2_451_545.0;

/// Geographic location of the pyranometer / camera site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Degrees north, in [-90, 90].
    pub latitude: f64,
    /// Degrees east.
    pub longitude: f64,
}

impl Site {
    pub const SIRTA: Site = Site {
        latitude: 48.713,
        longitude: 2.208,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.latitude.is_finite() || self.latitude.abs() > 90.0 {
            return Err(Error::domain(format!("latitude {} outside [-90, 90]", self.latitude)));
        }
        if !self.longitude.is_finite() {
            return Err(Error::domain("longitude must be finite"));
        }
        Ok(())
    }
}

/// Sun direction seen from a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition {
    /// Geometric zenith angle in degrees, [0, 180).
    pub zenith: f64,
    /// Azimuth in degrees clockwise from north, [0, 360).
    pub azimuth: f64,
}

impl SolarPosition {
    /// Unit vector (east, north, up) pointing at the sun.
    pub fn direction(&self) -> [f64; 3] {
        let z = self.zenith.to_radians();
        let a = self.azimuth.to_radians();
        [z.sin() * a.sin(), z.sin() * a.cos(), z.cos()]
    }
}

/// Clear-sky global horizontal irradiance in W/m².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ClearSkyValue {
    pub ghi_clear: f64,
}

/// Sun position for `site` at `unix_seconds` (UTC, fractional seconds allowed).
pub fn solar_position(latitude: f64, longitude: f64, unix_seconds: f64) -> Result<SolarPosition> {
    Site { latitude, longitude }.validate()?;
    if !unix_seconds.is_finite() {
        return Err(Error::domain("timestamp must be finite"));
    }

    let jd = unix_seconds / 86_400.0 + UNIX_EPOCH_JD;
    let jc = (jd - J2000_JD) / 36_525.0;

    let mean_long = (280.46646 + jc * (36000.76983 + jc * 0.0003032)).rem_euclid(360.0);
    let mean_anom = 357.52911 + jc * (35999.05029 - 0.0001537 * jc);
    let ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc);
    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914602 - jc * (0.004817 + 0.000014 * jc))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * jc)
        + (3.0 * m).sin() * 0.000289;
    let true_long = mean_long + center;
    let omega = (125.04 - 1934.136 * jc).to_radians();
    let app_long = (true_long - 0.00569 - 0.00478 * omega.sin()).to_radians();

    let mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.00256 * omega.cos()).to_radians();
    let decl = (obliq.sin() * app_long.sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eot_minutes = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin() + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let utc_minutes = unix_seconds.rem_euclid(86_400.0) / 60.0;
    let true_solar = (utc_minutes + eot_minutes + 4.0 * longitude).rem_euclid(1440.0);
    let hour_angle = (true_solar / 4.0 - 180.0).to_radians();

    let lat = latitude.to_radians();
    let cos_zen = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let zenith = cos_zen.acos().to_degrees();

    let azimuth = (hour_angle.sin())
        .atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos())
        .to_degrees()
        + 180.0;

    Ok(SolarPosition {
        zenith,
        azimuth: azimuth.rem_euclid(360.0),
    })
}

/// [`solar_position`] for a [`Site`].
pub fn sun_at(site: Site, unix_seconds: f64) -> Result<SolarPosition> {
    solar_position(site.latitude, site.longitude, unix_seconds)
}

/// Haurwitz clear-sky GHI; exactly zero with the sun at or below the horizon.
pub fn clear_sky_ghi(position: SolarPosition) -> ClearSkyValue {
    if !(position.zenith < 90.0) {
        return ClearSkyValue { ghi_clear: 0.0 };
    }
    let cz = position.zenith.to_radians().cos();
    if cz <= 0.0 {
        return ClearSkyValue { ghi_clear: 0.0 };
    }
    ClearSkyValue {
        ghi_clear: 1098.0 * cz * (-0.057 / cz).exp(),
    }
}

/// Clear-sky GHI at a site and instant.
pub fn clear_sky_at(site: Site, unix_seconds: f64) -> Result<f64> {
    Ok(clear_sky_ghi(sun_at(site, unix_seconds)?).ghi_clear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn unix(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> f64 {
        Utc.with_ymd_and_hms(y, mo, d, h, mi, 0).unwrap().timestamp() as f64
    }

    #[test]
    fn equator_equinox_noon_is_overhead() {
        // 2019 March equinox; solar noon at Greenwich is ~12:07 UTC.
        let p = solar_position(0.0, 0.0, unix(2019, 3, 20, 12, 7)).unwrap();
        assert!(p.zenith < 1.0, "zenith {}", p.zenith);
    }

    #[test]
    fn equator_equinox_midnight_is_nadir() {
        let p = solar_position(0.0, 0.0, unix(2019, 3, 21, 0, 7)).unwrap();
        assert!(p.zenith > 179.0, "zenith {}", p.zenith);
    }

    #[test]
    fn matches_reference_ephemeris() {
        // Geometric zenith / azimuth from the NREL SPA implementation in pvlib 0.15.2.
        let cases = [
            ((2019, 6, 21, 11, 52), 25.279089, 179.510908),
            ((2019, 3, 20, 12, 0), 48.879598, 180.420389),
            ((2019, 12, 21, 9, 0), 81.416826, 141.395427),
            ((2018, 6, 10, 5, 0), 80.750862, 65.509375),
            ((2017, 9, 1, 16, 30), 70.655586, 259.902739),
        ];
        for ((y, mo, d, h, mi), zen, az) in cases {
            let p = sun_at(Site::SIRTA, unix(y, mo, d, h, mi)).unwrap();
            assert!((p.zenith - zen).abs() < 0.05, "{y}-{mo}-{d} zenith {} vs {zen}", p.zenith);
            assert!((p.azimuth - az).abs() < 0.1, "{y}-{mo}-{d} azimuth {} vs {az}", p.azimuth);
        }
    }

    #[test]
    fn invalid_latitude_is_domain_error() {
        assert!(matches!(solar_position(90.5, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(solar_position(f64::NAN, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn clear_sky_reference_points() {
        let at = |z: f64| clear_sky_ghi(SolarPosition { zenith: z, azimuth: 0.0 }).ghi_clear;
        assert_eq!(at(90.0), 0.0);
        assert_eq!(at(120.0), 0.0);
        let overhead = 1098.0 * (-0.057f64).exp();
        assert!((at(0.0) - overhead).abs() < 1e-9);
        // 1098 * exp(-0.057) evaluated at 30 digits with mpmath.
        assert!((overhead - 1037.164288164).abs() < 1e-8);
        assert!(at(60.0) < at(30.0));
    }

    #[test]
    fn zenith_dips_around_solar_noon() {
        let start = unix(2019, 6, 21, 0, 0);
        let zeniths: Vec<f64> = (0..24 * 12)
            .map(|i| sun_at(Site::SIRTA, start + i as f64 * 300.0).unwrap().zenith)
            .collect();
        let (imin, _) = zeniths
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert!(zeniths[..=imin].windows(2).all(|w| w[1] <= w[0]));
        assert!(zeniths[imin..].windows(2).all(|w| w[1] >= w[0]));
    }

    proptest! {
        #[test]
        fn clear_sky_bounded_and_monotone(z1 in 0.0f64..90.0, z2 in 0.0f64..90.0) {
            let g = |z| clear_sky_ghi(SolarPosition { zenith: z, azimuth: 0.0 }).ghi_clear;
            prop_assert!(g(z1) >= 0.0 && g(z1) <= 1400.0);
            if z1 < z2 {
                prop_assert!(g(z1) >= g(z2));
            }
        }

        #[test]
        fn zenith_finite_and_in_range(lat in -90.0f64..=90.0, lon in -180.0f64..180.0, t in 1.4e9f64..1.6e9) {
            let p = solar_position(lat, lon, t).unwrap();
            prop_assert!(p.zenith.is_finite() && p.zenith >= 0.0 && p.zenith <= 180.0);
            prop_assert!(p.azimuth >= 0.0 && p.azimuth < 360.0);
        }
    }
}
