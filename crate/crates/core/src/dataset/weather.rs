use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherClass {
    ClearSky,
    BrokenSky,
    Overcast,
}

impl WeatherClass {
    pub const ALL: [WeatherClass; 3] = [WeatherClass::ClearSky, WeatherClass::BrokenSky, WeatherClass::Overcast];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherClass::ClearSky => "clear_sky",
            WeatherClass::BrokenSky => "broken_sky",
            WeatherClass::Overcast => "overcast",
        }
    }
}

impl fmt::Display for WeatherClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown weather class {s:?}")))
    }
}

/// Clear-sky-index statistics thresholds used to label a day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherThresholds {
    pub clear_min_mean: f64,
    pub clear_max_std: f64,
    pub overcast_max_mean: f64,
    pub overcast_max_std: f64,
}

impl Default for WeatherThresholds {
    fn default() -> Self {
        Self {
            clear_min_mean: 0.85,
            clear_max_std: 0.08,
            overcast_max_mean: 0.45,
            overcast_max_std: 0.15,
        }
    }
}

pub const MIN_DAYTIME_POINTS: usize = 100;

/// Mean and population standard deviation of `k = ghi / clear` over daytime
/// points (`clear > 0`).
pub fn clear_sky_index_stats(ghi: &[f64], clear: &[f64]) -> Result<(f64, f64, usize)> {
    if ghi.len() != clear.len() {
        return Err(Error::domain("ghi and clear-sky series differ in length"));
    }
    let k: Vec<f64> = ghi.iter().zip(clear).filter(|(_, &c)| c > 0.0).map(|(g, c)| g / c).collect();
    if k.len() < MIN_DAYTIME_POINTS {
        return Err(Error::domain(format!(
            "{} daytime measurements, at least {MIN_DAYTIME_POINTS} needed",
            k.len()
        )));
    }
    let n = k.len() as f64;
    let mean = k.iter().sum::<f64>() / n;
    let var = k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt(), k.len()))
}

pub fn classify_day(ghi: &[f64], clear: &[f64], th: &WeatherThresholds) -> Result<WeatherClass> {
    let (mean, std, _) = clear_sky_index_stats(ghi, clear)?;
    Ok(if mean >= th.clear_min_mean && std <= th.clear_max_std {
        WeatherClass::ClearSky
    } else if mean <= th.overcast_max_mean && std <= th.overcast_max_std {
        WeatherClass::Overcast
    } else {
        WeatherClass::BrokenSky
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clear_profile(n: usize) -> Vec<f64> {
        (0..n).map(|i| 100.0 + 800.0 * (std::f64::consts::PI * i as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn classes() {
        let th = WeatherThresholds::default();
        let clear = clear_profile(600);
        assert_eq!(classify_day(&clear, &clear, &th).unwrap(), WeatherClass::ClearSky);
        let dim: Vec<f64> = clear.iter().map(|c| 0.3 * c).collect();
        assert_eq!(classify_day(&dim, &clear, &th).unwrap(), WeatherClass::Overcast);
        // Alternating sun and cloud every 20 minutes.
        let broken: Vec<f64> = clear
            .iter()
            .enumerate()
            .map(|(i, c)| if (i / 20) % 2 == 0 { *c } else { 0.25 * c })
            .collect();
        let (mean, std, _) = clear_sky_index_stats(&broken, &clear).unwrap();
        let k: Vec<f64> = broken.iter().zip(&clear).map(|(g, c)| g / c).collect();
        let m = k.iter().sum::<f64>() / k.len() as f64;
        let s = (k.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k.len() as f64).sqrt();
        assert!((mean - m).abs() < 1e-12 && (std - s).abs() < 1e-12);
        assert!((m - 0.625).abs() < 1e-12 && (s - 0.375).abs() < 1e-12);
        assert_eq!(classify_day(&broken, &clear, &th).unwrap(), WeatherClass::BrokenSky);
    }

    #[test]
    fn night_points_are_ignored_and_counted() {
        let mut clear = vec![0.0; 500];
        clear.extend(clear_profile(99));
        let ghi = clear.clone();
        assert!(matches!(classify_day(&ghi, &clear, &WeatherThresholds::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn names_round_trip() {
        for c in WeatherClass::ALL {
            assert_eq!(c.as_str().parse::<WeatherClass>().unwrap(), c);
        }
        assert!("foggy".parse::<WeatherClass>().is_err());
    }
}
