use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use super::SpectralError;
use crate::tensor::Tensor;

/// Which band a frequency filter passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Low,
    High,
    Full,
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterMode::Low => "low",
            FilterMode::High => "high",
            FilterMode::Full => "full",
        })
    }
}

impl std::str::FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(FilterMode::Low),
            "high" => Ok(FilterMode::High),
            "full" => Ok(FilterMode::Full),
            other => Err(format!("unknown filter mode `{other}` (expected low, high or full)")),
        }
    }
}

/// Builds the `[1, H, W]` Gaussian coefficient map for an uncentred spectrum.
///
/// With `D(u, v)` the distance of bin `(u, v)` from `(H/2, W/2)` (floored), the
/// Gaussian term is `e = exp(-D² / 2σ²)`. The array centre holds the highest
/// frequencies because the DC bin stays at `(0, 0)`, so the low-pass map is
/// `1 - e` (zero at the centre) and the high-pass map is `e`.
pub fn build_coefficient_map(mode: FilterMode, sigma: f64, h: usize, w: usize) -> Result<Tensor, SpectralError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SpectralError::InvalidSigma(sigma));
    }
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let two_sigma_sq = 2.0 * sigma * sigma;
    let data = (0..h * w)
        .map(|i| {
            let (u, v) = ((i / w) as f64, (i % w) as f64);
            let d2 = (u - cy).powi(2) + (v - cx).powi(2);
            let gauss = (-d2 / two_sigma_sq).exp();
            match mode {
                FilterMode::Low => 1.0 - gauss,
                FilterMode::High => gauss,
                FilterMode::Full => 1.0,
            }
        })
        .collect();
    Ok(Tensor::new(&[1, h, w], data)?)
}

type MapKey = (FilterMode, u64, usize, usize);

fn cache() -> &'static RwLock<HashMap<MapKey, Tensor>> {
    static CACHE: OnceLock<RwLock<HashMap<MapKey, Tensor>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// A fixed frequency mask with cutoff `sigma` measured in frequency bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFilter {
    pub mode: FilterMode,
    pub cutoff_sigma: f64,
}

impl FrequencyFilter {
    pub fn new(mode: FilterMode, cutoff_sigma: f64) -> Result<FrequencyFilter, SpectralError> {
        if !(cutoff_sigma > 0.0 && cutoff_sigma.is_finite()) {
            return Err(SpectralError::InvalidSigma(cutoff_sigma));
        }
        Ok(FrequencyFilter { mode, cutoff_sigma })
    }

    /// Coefficient map for an `h x w` spectrum, built once per (mode, σ, h, w).
    pub fn coefficient_map(&self, h: usize, w: usize) -> Result<Tensor, SpectralError> {
        let key = (self.mode, self.cutoff_sigma.to_bits(), h, w);
        if let Some(t) = cache().read().expect("coefficient cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let map = build_coefficient_map(self.mode, self.cutoff_sigma, h, w)?;
        let mut guard = cache().write().expect("coefficient cache poisoned");
        Ok(guard.entry(key).or_insert(map).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_values() {
        let low = build_coefficient_map(FilterMode::Low, 7.0, 16, 16).unwrap();
        let high = build_coefficient_map(FilterMode::High, 7.0, 16, 16).unwrap();
        assert_eq!(low.data()[8 * 16 + 8], 0.0);
        assert_eq!(high.data()[8 * 16 + 8], 1.0);
    }

    #[test]
    fn distance_sigma_value() {
        let low = build_coefficient_map(FilterMode::Low, 7.0, 16, 16).unwrap();
        let expected = 1.0 - (-0.5f64).exp();
        assert!((low.data()[15 * 16 + 8] - expected).abs() < 1e-12);
        assert!((expected - 0.3935).abs() < 1e-4);
    }

    #[test]
    fn full_is_ones_and_all_in_unit_interval() {
        let full = build_coefficient_map(FilterMode::Full, 3.0, 5, 7).unwrap();
        assert!(full.data().iter().all(|&v| v == 1.0));
        for mode in [FilterMode::Low, FilterMode::High] {
            let m = build_coefficient_map(mode, 2.5, 9, 6).unwrap();
            assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(build_coefficient_map(FilterMode::Low, 0.0, 4, 4).is_err());
        assert!(FrequencyFilter::new(FilterMode::High, -1.0).is_err());
        assert!(FrequencyFilter::new(FilterMode::High, f64::NAN).is_err());
    }

    #[test]
    fn cache_returns_same_values() {
        let f = FrequencyFilter::new(FilterMode::Low, 7.0).unwrap();
        let a = f.coefficient_map(8, 8).unwrap();
        let b = f.coefficient_map(8, 8).unwrap();
        assert_eq!(a.id(), b.id());
        assert_eq!(a.data(), build_coefficient_map(FilterMode::Low, 7.0, 8, 8).unwrap().data());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("high".parse::<FilterMode>().unwrap(), FilterMode::High);
        assert!("band".parse::<FilterMode>().is_err());
    }
}
