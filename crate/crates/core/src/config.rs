//! TOML experiment configuration.
//!
//! Every field is optional. Omitted fields take the default system
//! parameters listed on each section's `Default` impl. Decibel-valued fields
//! are converted to linear units here, once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, dbw_to_watts, db_to_linear, RadioConstants};
use crate::engine::{DeviationSource, DistancePolicy, ModelInit, Scheme, SimulationConfig, TaskConfig, UtilityConfig};
use crate::error::{config_err, Error, Result};
use crate::localtrain::data::SyntheticSpec;
use crate::localtrain::LossKind;
use crate::par::Execution;
use crate::policy::fit::Selection;
use crate::policy::FitConfig;
use crate::privacy::DpParams;

/// Delay bound used when the config leaves it out, s.
pub const DEFAULT_DELAY_BOUND: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub scheme: Scheme,
    pub rounds: usize,
    /// Per-round delay bound, s.
    pub delay_bound_s: Option<f64>,
    /// Size of one uploaded update, bit.
    pub payload_bits: f64,
    pub execution: Execution,
    pub devices: DevicesSection,
    pub radio: RadioSection,
    pub privacy: PrivacySection,
    pub utility: UtilitySection,
    pub task: TaskSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            seed: 1,
            scheme: Scheme::Both,
            rounds: 200,
            delay_bound_s: None,
            payload_bits: 875e3,
            execution: Execution::Parallel,
            devices: DevicesSection::default(),
            radio: RadioSection::default(),
            privacy: PrivacySection::default(),
            utility: UtilitySection::default(),
            task: TaskSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    /// Drawn uniformly from `distance_range_m` with the run's seed.
    Uniform,
    /// Linearly spaced over `distance_range_m`.
    EvenlySpaced,
    /// Taken from `distances_m`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DevicesSection {
    pub count: usize,
    pub distance_policy: DistanceMode,
    pub distance_range_m: [f64; 2],
    pub distances_m: Vec<f64>,
    pub dataset_size: usize,
    /// Compute time per sample per iteration, s.
    pub per_sample_time_s: f64,
    pub compute_power_mw: f64,
    pub circuit_power_mw: f64,
    pub bandwidth_hz: f64,
    pub p_max_dbw: f64,
    /// Lower bound on local iterations; raised to the convergence bound for
    /// `task.target_accuracy` when that is larger.
    pub j_min_floor: usize,
    pub j_max_cap: usize,
}

impl Default for DevicesSection {
    fn default() -> Self {
        DevicesSection {
            count: 10,
            distance_policy: DistanceMode::Uniform,
            distance_range_m: [50.0, 200.0],
            distances_m: Vec::new(),
            dataset_size: 200,
            // 7.5 ns per bit over a 6272-bit sample
            per_sample_time_s: 4.704e-5,
            compute_power_mw: 96.0,
            circuit_power_mw: 82.5,
            bandwidth_hz: 250e3,
            p_max_dbw: 0.0,
            j_min_floor: 10,
            j_max_cap: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub path_loss_exponent: f64,
    pub center_frequency_hz: f64,
    pub modulation_gap_db: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub amplifier_efficiency: f64,
    pub rayleigh_scale: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        RadioSection {
            path_loss_exponent: 4.0,
            center_frequency_hz: 32e6,
            modulation_gap_db: 9.8,
            noise_psd_dbm_per_hz: -174.0,
            amplifier_efficiency: 0.45,
            rayleigh_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub epsilon: f64,
    pub delta: f64,
    pub theta: f64,
    pub sensitivity: f64,
    /// Which updates the deviation factors compare against the new model.
    pub deviation_source: DeviationSource,
}

impl Default for PrivacySection {
    fn default() -> Self {
        PrivacySection {
            epsilon: 0.95,
            delta: 1e-5,
            theta: 0.6,
            sensitivity: 0.01,
            deviation_source: DeviationSource::Received,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilitySection {
    /// J.
    pub varrho: f64,
    pub beta1_bounds: [f64; 2],
    /// J.
    pub beta2_bounds: [f64; 2],
    /// Rounds of (compute energy, deviation) history the fit uses.
    pub history_window: usize,
    /// `bic` keeps a flat curve unless the decay is supported by the data;
    /// `least-squares` always keeps the exponential fit.
    pub fit_selection: Selection,
}

impl Default for UtilitySection {
    fn default() -> Self {
        let b = FitConfig::default();
        UtilitySection {
            varrho: 0.5,
            beta1_bounds: [b.beta1.0, b.beta1.1],
            beta2_bounds: [b.beta2.0, b.beta2.1],
            history_window: 8,
            fit_selection: b.selection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskLoss {
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub loss: TaskLoss,
    /// Features including the bias column.
    pub dim: usize,
    pub regularization: f64,
    pub surrogate_weight: f64,
    /// Step size as a multiple of 1 / L.
    pub step_scale: f64,
    pub label_noise: f64,
    pub label_skew: f64,
    /// Observation noise of the quadratic task.
    pub regression_noise: f64,
    /// Local accuracy every device must reach.
    pub target_accuracy: f64,
    pub init: ModelInit,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            loss: TaskLoss::Logistic,
            dim: 10,
            regularization: 0.05,
            surrogate_weight: 1.0,
            step_scale: 1.0,
            label_noise: 0.1,
            label_skew: 0.5,
            regression_noise: 0.1,
            target_accuracy: 0.01,
            init: ModelInit::Zeros,
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(field, reason))
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), field, "must be finite and > 0")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Validate and convert to simulation units.
    pub fn resolve(&self) -> Result<SimulationConfig> {
        let d = &self.devices;
        check(d.count >= 1, "devices.count", "need at least one device")?;
        let [r_lo, r_hi] = d.distance_range_m;
        check(
            r_lo > 0.0 && r_hi >= r_lo && r_hi.is_finite(),
            "devices.distance_range_m",
            "need 0 < min <= max",
        )?;
        let distance_policy = match d.distance_policy {
            DistanceMode::Uniform => DistancePolicy::Uniform,
            DistanceMode::EvenlySpaced => DistancePolicy::EvenlySpaced,
            DistanceMode::Explicit => {
                check(
                    d.distances_m.len() == d.count,
                    "devices.distances_m",
                    "must list exactly `count` distances",
                )?;
                for (i, &r) in d.distances_m.iter().enumerate() {
                    check(
                        r >= r_lo && r <= r_hi,
                        &format!("devices.distances_m[{i}]"),
                        "must lie within distance_range_m",
                    )?;
                }
                DistancePolicy::Explicit(d.distances_m.clone())
            }
        };
        check(d.dataset_size >= 1, "devices.dataset_size", "must be >= 1")?;
        positive(d.per_sample_time_s, "devices.per_sample_time_s")?;
        positive(d.compute_power_mw, "devices.compute_power_mw")?;
        check(
            d.circuit_power_mw >= 0.0 && d.circuit_power_mw.is_finite(),
            "devices.circuit_power_mw",
            "must be finite and >= 0",
        )?;
        positive(d.bandwidth_hz, "devices.bandwidth_hz")?;
        check(d.p_max_dbw.is_finite(), "devices.p_max_dbw", "must be finite")?;
        check(d.j_min_floor >= 1, "devices.j_min_floor", "must be >= 1")?;
        check(d.j_max_cap >= d.j_min_floor, "devices.j_max_cap", "must be >= j_min_floor")?;

        let r = &self.radio;
        check(r.modulation_gap_db.is_finite(), "radio.modulation_gap_db", "must be finite")?;
        check(r.noise_psd_dbm_per_hz.is_finite(), "radio.noise_psd_dbm_per_hz", "must be finite")?;
        let radio = RadioConstants {
            path_loss_exponent: r.path_loss_exponent,
            center_frequency_hz: r.center_frequency_hz,
            modulation_gap: db_to_linear(r.modulation_gap_db),
            noise_psd_w_per_hz: dbm_to_watts(r.noise_psd_dbm_per_hz),
            amplifier_efficiency: r.amplifier_efficiency,
            rayleigh_scale: r.rayleigh_scale,
        };
        radio.validate()?;

        let p = &self.privacy;
        let dp = DpParams {
            epsilon: p.epsilon,
            delta: p.delta,
            theta: p.theta,
            sensitivity: p.sensitivity,
        };
        dp.validate()?;

        let u = &self.utility;
        positive(u.varrho, "utility.varrho")?;
        for (name, [lo, hi]) in [("utility.beta1_bounds", u.beta1_bounds), ("utility.beta2_bounds", u.beta2_bounds)] {
            check(lo > 0.0 && hi >= lo && hi.is_finite(), name, "need 0 < min <= max")?;
        }
        check(u.history_window >= 1, "utility.history_window", "must be >= 1")?;

        let t = &self.task;
        check(t.dim >= 1, "task.dim", "must be >= 1")?;
        check(
            t.regularization >= 0.0 && t.regularization.is_finite(),
            "task.regularization",
            "must be finite and >= 0",
        )?;
        if t.loss == TaskLoss::Logistic {
            positive(t.regularization, "task.regularization")?;
            check(t.dim >= 2, "task.dim", "logistic task needs a bias and at least one feature")?;
        }
        positive(t.surrogate_weight, "task.surrogate_weight")?;
        check(
            t.step_scale > 0.0 && t.step_scale < 2.0,
            "task.step_scale",
            "must lie in (0, 2) for the local solver to contract",
        )?;
        check((0.0..=0.5).contains(&t.label_noise), "task.label_noise", "must lie in [0, 0.5]")?;
        check(t.label_skew >= 0.0 && t.label_skew.is_finite(), "task.label_skew", "must be finite and >= 0")?;
        check(
            t.regression_noise >= 0.0 && t.regression_noise.is_finite(),
            "task.regression_noise",
            "must be finite and >= 0",
        )?;
        check(
            t.target_accuracy > 0.0 && t.target_accuracy < 1.0,
            "task.target_accuracy",
            "must lie in (0, 1)",
        )?;

        let delay_bound = match self.delay_bound_s {
            Some(v) => {
                positive(v, "delay_bound_s")?;
                v
            }
            None => {
                log::info!(
                    "delay_bound_s not set; using {DEFAULT_DELAY_BOUND} s (a sub-millisecond bound cannot carry an \
                     875 kbit upload over 250 kHz at 1 W)"
                );
                DEFAULT_DELAY_BOUND
            }
        };
        positive(self.payload_bits, "payload_bits")?;

        let config = SimulationConfig {
            scheme: self.scheme,
            num_devices: d.count,
            rounds: self.rounds,
            seed: self.seed,
            delay_bound,
            payload_bits: self.payload_bits,
            dp,
            radio,
            distance_policy,
            distance_range: (r_lo, r_hi),
            device: crate::engine::DeviceTemplate {
                dataset_size: d.dataset_size,
                per_sample_time: d.per_sample_time_s,
                compute_power: d.compute_power_mw * 1e-3,
                circuit_power: d.circuit_power_mw * 1e-3,
                bandwidth: d.bandwidth_hz,
                p_max: dbw_to_watts(d.p_max_dbw),
                j_min_floor: d.j_min_floor,
                j_max_cap: d.j_max_cap,
            },
            task: TaskConfig {
                loss: match t.loss {
                    TaskLoss::Logistic => LossKind::RegularizedLogistic,
                    TaskLoss::Quadratic => LossKind::Quadratic,
                },
                regularization: t.regularization,
                surrogate_weight: t.surrogate_weight,
                step_scale: t.step_scale,
                synthetic: SyntheticSpec {
                    dim: t.dim,
                    label_noise: t.label_noise,
                    label_skew: t.label_skew,
                },
                regression_noise: t.regression_noise,
                target_accuracy: t.target_accuracy,
                init: t.init,
            },
            utility: UtilityConfig {
                varrho: u.varrho,
                bounds: FitConfig {
                    beta1: (u.beta1_bounds[0], u.beta1_bounds[1]),
                    beta2: (u.beta2_bounds[0], u.beta2_bounds[1]),
                    selection: u.fit_selection,
                },
                history_window: u.history_window,
            },
            deviation_source: p.deviation_source,
            execution: self.execution,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    ConfigFile::parse(text)?.resolve()
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
