//! Link model between a device and the access point: Rayleigh block fading
//! over a distance-dependent path loss, Shannon-gap rate, and the energy a
//! device spends computing and transmitting in one round.
//!
//! All quantities are linear SI units. dB inputs are converted once when a
//! config is loaded (see [`crate::config`]).

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Convert a dB ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert dBW to watts.
pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConstants {
    pub path_loss_exponent: f64,
    pub center_frequency_hz: f64,
    /// Modulation and coding gap, linear.
    pub modulation_gap: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd_w_per_hz: f64,
    /// Power amplifier efficiency in (0, 1].
    pub amplifier_efficiency: f64,
    /// Scale of the exponential distribution of |h|^2.
    pub rayleigh_scale: f64,
}

impl RadioConstants {
    /// Free-space path loss factor (c / (4 pi f_c))^2.
    pub fn path_loss_factor(&self) -> f64 {
        (SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * self.center_frequency_hz)).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(crate::error::config_err(format!("radio.{field}"), reason))
        };
        if !(self.path_loss_exponent >= 2.0) {
            return bad("path_loss_exponent", "must be >= 2");
        }
        if !(self.center_frequency_hz > 0.0) {
            return bad("center_frequency_hz", "must be > 0");
        }
        if !(self.modulation_gap >= 1.0) {
            return bad("modulation_gap", "must be >= 1 (0 dB)");
        }
        if !(self.noise_psd_w_per_hz > 0.0) {
            return bad("noise_psd", "must be > 0");
        }
        if !(self.amplifier_efficiency > 0.0 && self.amplifier_efficiency <= 1.0) {
            return bad("amplifier_efficiency", "must lie in (0, 1]");
        }
        if !(self.rayleigh_scale > 0.0) {
            return bad("rayleigh_scale", "must be > 0");
        }
        Ok(())
    }
}

/// Static per-device parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    pub dataset_size: usize,
    /// Processing time per data sample, s.
    pub per_sample_time: f64,
    /// Power drawn while computing, W.
    pub compute_power: f64,
    /// Transmitter circuit power, W.
    pub circuit_power: f64,
    /// Allocated bandwidth, Hz.
    pub bandwidth: f64,
    /// Distance to the access point, m.
    pub distance: f64,
    /// Maximum transmit power, W.
    pub p_max: f64,
    /// Lower bound on local iterations per round.
    pub j_min: usize,
    /// Hard cap on local iterations per round.
    pub j_max_cap: usize,
}

impl DeviceProfile {
    /// Time for one local iteration over the whole dataset, s.
    pub fn iteration_time(&self) -> f64 {
        self.dataset_size as f64 * self.per_sample_time
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("devices[{}].{name}", self.id);
        let positive = [
            ("per_sample_time", self.per_sample_time),
            ("compute_power", self.compute_power),
            ("circuit_power", self.circuit_power),
            ("bandwidth", self.bandwidth),
            ("distance", self.distance),
            ("p_max", self.p_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::error::config_err(field(name), "must be finite and > 0"));
            }
        }
        if self.dataset_size == 0 {
            return Err(crate::error::config_err(field("dataset_size"), "must be >= 1"));
        }
        if self.j_min == 0 || self.j_min > self.j_max_cap {
            return Err(crate::error::config_err(
                field("j_min"),
                "must satisfy 1 <= j_min <= j_max_cap",
            ));
        }
        Ok(())
    }
}

/// One block-fading draw for one device. Constant for the whole round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Fading power |h|^2.
    pub fading: f64,
    /// Receiver noise power N0 * B, W.
    pub awgn_variance: f64,
}

impl ChannelRealization {
    /// Received SNR per watt of transmit power:
    /// kappa |h|^2 / (sigma^2 r^alpha Gamma).
    pub fn snr_per_watt(&self, profile: &DeviceProfile, radio: &RadioConstants) -> f64 {
        radio.path_loss_factor() * self.fading
            / (self.awgn_variance * profile.distance.powf(radio.path_loss_exponent) * radio.modulation_gap)
    }

    /// Spectral efficiency in nats, ln(1 + snr), for transmit power `p`.
    pub fn nats(&self, p: f64, profile: &DeviceProfile, radio: &RadioConstants) -> f64 {
        (self.snr_per_watt(profile, radio) * p).ln_1p()
    }

    /// Transmit power reaching spectral efficiency `z` nats.
    pub fn power_for_nats(&self, z: f64, profile: &DeviceProfile, radio: &RadioConstants) -> f64 {
        z.exp_m1() / self.snr_per_watt(profile, radio)
    }
}

pub fn sample_channel<R: Rng + ?Sized>(
    profile: &DeviceProfile,
    radio: &RadioConstants,
    rng: &mut R,
) -> ChannelRealization {
    let exp = Exp::new(1.0 / radio.rayleigh_scale).expect("rayleigh scale is validated positive");
    ChannelRealization {
        fading: exp.sample(rng),
        awgn_variance: radio.noise_psd_w_per_hz * profile.bandwidth,
    }
}

/// Achievable rate in bit/s at transmit power `p`.
pub fn transmission_rate(
    p: f64,
    real: &ChannelRealization,
    profile: &DeviceProfile,
    radio: &RadioConstants,
) -> f64 {
    profile.bandwidth * real.nats(p, profile, radio) / std::f64::consts::LN_2
}

pub fn transmission_time(rate: f64, payload_bits: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::InfeasibleTransmission { rate });
    }
    Ok(payload_bits / rate)
}

/// Power drawn while transmitting at radiated power `p`.
pub fn tx_power_cost(p: f64, profile: &DeviceProfile, radio: &RadioConstants) -> f64 {
    p / radio.amplifier_efficiency + profile.circuit_power
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub compute: f64,
    pub transmit: f64,
    pub total: f64,
}

impl Energy {
    pub fn new(compute: f64, transmit: f64) -> Self {
        Energy {
            compute,
            transmit,
            total: compute + transmit,
        }
    }

    pub fn zero() -> Self {
        Energy::new(0.0, 0.0)
    }
}

/// Energy split for `iterations` local steps followed by an upload at power `p`.
pub fn energy(
    iterations: usize,
    p: f64,
    real: &ChannelRealization,
    profile: &DeviceProfile,
    radio: &RadioConstants,
    payload_bits: f64,
) -> Result<Energy> {
    let compute = iterations as f64 * profile.iteration_time() * profile.compute_power;
    let t_tx = transmission_time(transmission_rate(p, real, profile, radio), payload_bits)?;
    Ok(Energy::new(compute, t_tx * tx_power_cost(p, profile, radio)))
}

/// Total round energy, J.
pub fn total_energy(
    iterations: usize,
    p: f64,
    real: &ChannelRealization,
    profile: &DeviceProfile,
    radio: &RadioConstants,
    payload_bits: f64,
) -> Result<f64> {
    energy(iterations, p, real, profile, radio, payload_bits).map(|e| e.total)
}
