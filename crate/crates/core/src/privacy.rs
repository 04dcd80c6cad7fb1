//! Gaussian-mechanism noise for the uplink and the downlink.
//!
//! The access point scores every received update by its cosine similarity to
//! the freshly aggregated model, turns that into a deviation factor in
//! [0, 1] (0 for the best-aligned device), and inflates each device's
//! downlink noise scale with its deviation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localtrain::ModelVector;

/// Deviation cap applied when theta = 1 so the noise scale stays finite.
pub const DEVIATION_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
    /// How strongly the deviation factor inflates the downlink noise, in [0, 1].
    pub theta: f64,
    pub sensitivity: f64,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(crate::error::config_err(format!("dp.{f}"), r));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon", "must lie in (0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta", "must lie in [0, 1]");
        }
        if !(self.sensitivity >= 0.0 && self.sensitivity.is_finite()) {
            return bad("sensitivity", "must be finite and >= 0");
        }
        Ok(())
    }

    /// Noise multiplier every transmission uses at minimum.
    pub fn base_sigma(&self) -> Result<f64> {
        min_sigma(self.epsilon, self.delta)
    }
}

/// Smallest noise multiplier giving (epsilon, delta)-DP:
/// sqrt(2 ln(1.25 / delta)) / epsilon.
pub fn min_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub per_device: Vec<f64>,
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: &ModelVector, b: &ModelVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// 1 - sim(w, h_k) / max_k sim(w, h_k), with negative similarities floored at
/// zero. If no update has positive similarity nobody stands out and every
/// device gets 0.
pub fn deviation_factors(w_g: &ModelVector, updates: &[ModelVector]) -> Result<DeviationReport> {
    if updates.is_empty() {
        return Err(Error::Empty("deviation factors need at least one update"));
    }
    for u in updates {
        if u.len() != w_g.len() {
            return Err(Error::DimensionMismatch { expected: w_g.len(), got: u.len() });
        }
    }
    let sims: Vec<f64> = updates.iter().map(|h| cosine_similarity(w_g, h).max(0.0)).collect();
    let best = sims.iter().copied().fold(0.0, f64::max);
    let per_device = if best > 0.0 {
        sims.iter().map(|s| (1.0 - s / best).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; sims.len()]
    };
    Ok(DeviationReport { per_device })
}

/// Downlink noise multiplier inflated by the device's deviation:
/// sqrt(2 ln(1.25 / delta)) / (epsilon (1 - E theta)).
pub fn adaptive_sigma(dp: &DpParams, deviation: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&deviation) {
        return Err(Error::Domain(format!("deviation {deviation} must lie in [0, 1]")));
    }
    let e = if dp.theta >= 1.0 { deviation.min(DEVIATION_CAP) } else { deviation };
    let denom = 1.0 - e * dp.theta;
    if denom <= 0.0 {
        return Err(Error::DegenerateDenominator { deviation: e, theta: dp.theta });
    }
    Ok(min_sigma(dp.epsilon, dp.delta)? / denom)
}

fn add_gaussian<R: Rng + ?Sized>(v: &ModelVector, std: f64, rng: &mut R) -> ModelVector {
    if std == 0.0 {
        return v.clone();
    }
    ModelVector(v.0.iter().map(|x| x + std * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// w + n with n ~ N(0, (S_f sigma)^2 I). Refuses noise below the DP minimum.
pub fn perturb_model<R: Rng + ?Sized>(
    w_g: &ModelVector,
    sigma: f64,
    minimum: f64,
    sensitivity: f64,
    rng: &mut R,
) -> Result<ModelVector> {
    // relative slack for sigma recomputed through a different expression
    if sigma < minimum * (1.0 - 1e-12) {
        return Err(Error::PrivacyViolation { sigma, minimum });
    }
    Ok(add_gaussian(w_g, sensitivity * sigma, rng))
}

/// Uplink perturbation at the base (epsilon, delta) noise multiplier.
pub fn perturb_local_update<R: Rng + ?Sized>(h: &ModelVector, dp: &DpParams, rng: &mut R) -> Result<ModelVector> {
    let sigma = dp.base_sigma()?;
    perturb_model(h, sigma, sigma, dp.sensitivity, rng)
}
