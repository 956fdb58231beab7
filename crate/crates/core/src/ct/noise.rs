use rand::Rng;
use rand_distr::StandardNormal;

use super::geometry::Sinogram;
use crate::error::{Error, Result};
use crate::rng;

/// Detected counts are clamped to at least this many photons before the log.
pub const PHOTON_FLOOR: f64 = 1.0;

/// Poisson means at or above this use the rounded normal approximation.
const NORMAL_APPROX_MEAN: f64 = 30.0;

/// Deterministic Poisson draw: CDF inversion for small means, rounded
/// normal approximation otherwise.
pub fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < NORMAL_APPROX_MEAN {
        let u: f64 = rng.random();
        let mut k = 0u32;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k as f64
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

/// Post-log transmission noise: per ray `N ~ Poisson(I0 exp(-p))`,
/// `p_hat = -ln(max(N, 1) / I0)`. Rays are drawn in row-major order from a
/// single seeded stream.
pub fn inject_low_dose_noise(sino: &Sinogram, incident_photons: f64, seed: u64) -> Result<Sinogram> {
    if !(incident_photons > 0.0 && incident_photons.is_finite()) {
        return Err(Error::Parameter(format!(
            "incident photon count must be positive, got {incident_photons}"
        )));
    }
    if let Some(v) = sino.data.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!("negative line integral {v}")));
    }
    let mut rng = rng::stream(seed, 0x6e6f697365);
    let mut out = sino.clone();
    for p in out.data.data_mut() {
        let counts = sample_poisson(&mut rng, incident_photons * (-*p).exp());
        *p = -(counts.max(PHOTON_FLOOR) / incident_photons).ln();
    }
    Ok(out)
}
