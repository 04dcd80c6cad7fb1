//! Round-by-round simulation of both schemes.
//!
//! Each round: sample every link, pick each device's (iterations, power),
//! exchange gradients, run the local solves, perturb and aggregate the
//! updates, score deviations, broadcast per-device noisy models and record
//! what every device saw and spent.
//!
//! Random draws come from streams keyed by (seed, purpose, round, device),
//! never by scheme, so both schemes see the same data, channels and noise
//! realizations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelRealization, DeviceProfile, Energy, RadioConstants};
use crate::error::{config_err, Error, Result};
use crate::localtrain::data::{self, LocalDataset, SyntheticSpec};
use crate::localtrain::{self, LearningTask, LossKind, ModelVector, Surrogate};
use crate::par::{self, Execution};
use crate::policy::{self, FitConfig, FitSample, PolicyDecision, UtilityParams};
use crate::privacy::{self, DpParams};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Proposed,
    Benchmark,
    #[default]
    Both,
}

impl Scheme {
    pub fn kinds(self) -> Vec<SchemeKind> {
        match self {
            Scheme::Proposed => vec![SchemeKind::Proposed],
            Scheme::Benchmark => vec![SchemeKind::Benchmark],
            Scheme::Both => vec![SchemeKind::Proposed, SchemeKind::Benchmark],
        }
    }
}

/// One concrete scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Proposed,
    Benchmark,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Proposed => "proposed",
            SchemeKind::Benchmark => "benchmark",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(SchemeKind::Proposed),
            "benchmark" => Ok(SchemeKind::Benchmark),
            other => Err(Error::Parse(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistancePolicy {
    Explicit(Vec<f64>),
    Uniform,
    EvenlySpaced,
}

/// Updates the deviation factors are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationSource {
    /// The noisy updates the access point actually received.
    #[default]
    Received,
    /// The devices' updates before uplink noise.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelInit {
    #[default]
    Zeros,
    /// Standard normal entries scaled by 0.1.
    Random,
}

/// Device parameters shared by every device; devices differ by distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceTemplate {
    pub dataset_size: usize,
    pub per_sample_time: f64,
    pub compute_power: f64,
    pub circuit_power: f64,
    pub bandwidth: f64,
    pub p_max: f64,
    pub j_min_floor: usize,
    pub j_max_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub loss: LossKind,
    pub regularization: f64,
    pub surrogate_weight: f64,
    pub step_scale: f64,
    pub synthetic: SyntheticSpec,
    pub regression_noise: f64,
    pub target_accuracy: f64,
    pub init: ModelInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub varrho: f64,
    pub bounds: FitConfig,
    pub history_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub num_devices: usize,
    pub rounds: usize,
    pub seed: u64,
    /// s.
    pub delay_bound: f64,
    /// bit.
    pub payload_bits: f64,
    pub dp: DpParams,
    pub radio: RadioConstants,
    pub distance_policy: DistancePolicy,
    /// m.
    pub distance_range: (f64, f64),
    pub device: DeviceTemplate,
    pub task: TaskConfig,
    pub utility: UtilityConfig,
    pub deviation_source: DeviationSource,
    pub execution: Execution,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(config_err("devices.count", "need at least one device"));
        }
        if let DistancePolicy::Explicit(ds) = &self.distance_policy {
            if ds.len() != self.num_devices {
                return Err(config_err("devices.distances_m", "must list exactly `count` distances"));
            }
        }
        self.dp.validate()?;
        self.radio.validate()?;
        for p in self.device_profiles() {
            p.validate()?;
        }
        Ok(())
    }

    /// Device distances, m.
    pub fn distances(&self) -> Vec<f64> {
        let (lo, hi) = self.distance_range;
        let k = self.num_devices;
        match &self.distance_policy {
            DistancePolicy::Explicit(ds) => ds.clone(),
            DistancePolicy::EvenlySpaced => (0..k)
                .map(|i| if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 })
                .collect(),
            DistancePolicy::Uniform => {
                use rand::Rng;
                let mut r = rng::stream(self.seed, Purpose::Distance, &[]);
                (0..k).map(|_| if hi > lo { r.random_range(lo..=hi) } else { lo }).collect()
            }
        }
    }

    /// Device profiles with `j_min` at the configured floor.
    pub fn device_profiles(&self) -> Vec<DeviceProfile> {
        let t = &self.device;
        self.distances()
            .into_iter()
            .enumerate()
            .map(|(id, distance)| DeviceProfile {
                id,
                dataset_size: t.dataset_size,
                per_sample_time: t.per_sample_time,
                compute_power: t.compute_power,
                circuit_power: t.circuit_power,
                bandwidth: t.bandwidth,
                distance,
                p_max: t.p_max,
                j_min: t.j_min_floor,
                j_max_cap: t.j_max_cap,
            })
            .collect()
    }

    /// (log r - log r_min) / (log r_max - log r_min), so the nearest allowed
    /// distance maps to 0 and the farthest to 1.
    pub fn normalized_path_loss(&self, distance: f64) -> f64 {
        let (lo, hi) = self.distance_range;
        if hi <= lo {
            return 0.0;
        }
        (distance.ln() - lo.ln()) / (hi.ln() - lo.ln())
    }
}

/// What one device did and saw in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub device: usize,
    pub scheme: SchemeKind,
    /// Local loss at the device's noisy copy of the new global model.
    pub loss: f64,
    pub deviation: f64,
    /// Downlink noise multiplier.
    pub sigma: f64,
    pub energy: Energy,
    /// None when the device sat the round out.
    pub decision: Option<PolicyDecision>,
    pub utility: f64,
}

impl RoundRecord {
    pub fn skipped(&self) -> bool {
        self.decision.is_none()
    }
}

/// Everything fixed for the whole run.
#[derive(Debug, Clone)]
pub struct Environment {
    pub profiles: Vec<DeviceProfile>,
    pub datasets: Vec<LocalDataset>,
    pub task: LearningTask,
    pub initial_model: ModelVector,
}

impl Environment {
    pub fn build(config: &SimulationConfig) -> Result<Self> {
        let tc = &config.task;
        let spec = tc.synthetic;
        let k = config.num_devices;
        let mut sep_rng = rng::stream(config.seed, Purpose::Dataset, &[u64::MAX]);
        let separator = data::true_separator(&mut sep_rng, spec.dim);
        let datasets = (0..k)
            .map(|i| {
                let mut r = rng::stream(config.seed, Purpose::Dataset, &[i as u64]);
                match tc.loss {
                    LossKind::RegularizedLogistic => data::synthetic_logistic(
                        &mut r,
                        &separator,
                        config.device.dataset_size,
                        &spec,
                        data::device_shift(i, k, spec.label_skew),
                    ),
                    LossKind::Quadratic => {
                        data::synthetic_regression(&mut r, &separator, config.device.dataset_size, tc.regression_noise)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let task = LearningTask::from_data(tc.loss, tc.regularization, tc.surrogate_weight, tc.step_scale, &datasets)?;
        let j_theory = localtrain::min_iterations(tc.target_accuracy, &task)?;
        let profiles = config
            .device_profiles()
            .into_iter()
            .map(|mut p| {
                p.j_min = p.j_min.max(j_theory);
                p
            })
            .collect();
        let initial_model = match tc.init {
            ModelInit::Zeros => ModelVector::zeros(spec.dim),
            ModelInit::Random => {
                use rand::Rng;
                let mut r = rng::stream(config.seed, Purpose::Init, &[]);
                ModelVector(
                    (0..spec.dim)
                        .map(|_| 0.1 * r.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect(),
                )
            }
        };
        Ok(Environment {
            profiles,
            datasets,
            task,
            initial_model,
        })
    }
}

/// State carried between rounds for one scheme.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub scheme: SchemeKind,
    pub global: ModelVector,
    pub history: Vec<VecDeque<FitSample>>,
}

impl SchemeState {
    pub fn new(scheme: SchemeKind, env: &Environment) -> Self {
        SchemeState {
            scheme,
            global: env.initial_model.clone(),
            history: vec![VecDeque::new(); env.profiles.len()],
        }
    }
}

/// The link draw for device `k` in round `m`.
pub fn channel_for(config: &SimulationConfig, profile: &DeviceProfile, m: usize) -> ChannelRealization {
    let mut r = rng::stream(config.seed, Purpose::Channel, &[m as u64, profile.id as u64]);
    channel::sample_channel(profile, &config.radio, &mut r)
}

struct Plan {
    params: UtilityParams,
    decision: Option<PolicyDecision>,
    energy: Energy,
}

fn plan_device(
    config: &SimulationConfig,
    env: &Environment,
    state: &SchemeState,
    k: usize,
    m: usize,
) -> Plan {
    let profile = &env.profiles[k];
    let real = channel_for(config, profile, m);
    let samples: Vec<FitSample> = state.history[k].iter().copied().collect();
    let params = policy::fit_betas(&samples, config.utility.varrho, &config.utility.bounds);
    let decided = if state.scheme == SchemeKind::Proposed && m > 0 {
        policy::solve_policy(&params, profile, &real, &config.radio, &env.task, config.delay_bound, config.payload_bits)
    } else {
        policy::benchmark_policy(profile, &real, &config.radio, &env.task, config.delay_bound, config.payload_bits)
    };
    let decision = decided.ok();
    let energy = decision
        .and_then(|d| channel::energy(d.iterations, d.power, &real, profile, &config.radio, config.payload_bits).ok())
        .unwrap_or_else(Energy::zero);
    Plan {
        params,
        decision: decision.filter(|_| energy.total > 0.0),
        energy,
    }
}

/// Execute round `m` for one scheme, updating `state` in place.
pub fn run_round(
    state: &mut SchemeState,
    config: &SimulationConfig,
    env: &Environment,
    m: usize,
) -> Result<Vec<RoundRecord>> {
    let exec = config.execution;
    let k_all = env.profiles.len();
    let plans = par::map_indexed(exec, k_all, |k| plan_device(config, env, state, k, m));
    let active: Vec<usize> = (0..k_all).filter(|&k| plans[k].decision.is_some()).collect();

    let w = &state.global;
    let (new_global, deviations) = if active.is_empty() {
        (w.clone(), vec![1.0; k_all])
    } else {
        let grads = par::map_slice(exec, &active, |&k| localtrain::local_gradient(w, &env.datasets[k], &env.task))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let global_grad = localtrain::average_gradients(&grads)?;
        let uploads = par::map_indexed(exec, active.len(), |i| -> Result<(ModelVector, ModelVector)> {
            let k = active[i];
            let iterations = plans[k].decision.expect("active devices have a decision").iterations;
            let s = Surrogate::new(w, &grads[i], &global_grad, &env.datasets[k], &env.task)?;
            let h = s.descend(ModelVector::zeros(w.len()), iterations)?;
            let mut r = rng::stream(config.seed, Purpose::Uplink, &[m as u64, k as u64]);
            let noisy = privacy::perturb_local_update(&h, &config.dp, &mut r)?;
            Ok((h, noisy))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let received: Vec<ModelVector> = uploads.iter().map(|u| u.1.clone()).collect();
        let new_global = localtrain::aggregate(w, &received)?;
        let scored: Vec<ModelVector> = match config.deviation_source {
            DeviationSource::Received => received,
            DeviationSource::Raw => uploads.into_iter().map(|u| u.0).collect(),
        };
        let report = privacy::deviation_factors(&new_global, &scored)?;
        let mut deviations = vec![1.0; k_all];
        for (&k, e) in active.iter().zip(report.per_device) {
            deviations[k] = e;
        }
        (new_global, deviations)
    };

    let base_sigma = config.dp.base_sigma()?;
    let scheme = state.scheme;
    let records = par::map_indexed(exec, k_all, |k| -> Result<RoundRecord> {
        let sigma = match scheme {
            SchemeKind::Proposed => privacy::adaptive_sigma(&config.dp, deviations[k])?,
            SchemeKind::Benchmark => base_sigma,
        };
        let mut r = rng::stream(config.seed, Purpose::Downlink, &[m as u64, k as u64]);
        let received = privacy::perturb_model(&new_global, sigma, base_sigma, config.dp.sensitivity, &mut r)?;
        let loss = localtrain::local_loss(&received, &env.datasets[k], &env.task)?;
        let plan = &plans[k];
        Ok(RoundRecord {
            round: m,
            device: k,
            scheme,
            loss,
            deviation: deviations[k],
            sigma,
            energy: plan.energy,
            decision: plan.decision,
            utility: policy::utility(&plan.params, plan.energy.compute, plan.energy.total),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    for &k in &active {
        let h = &mut state.history[k];
        h.push_back(FitSample {
            compute_energy: plans[k].energy.compute,
            deviation: deviations[k],
        });
        while h.len() > config.utility.history_window {
            h.pop_front();
        }
    }
    state.global = new_global;
    Ok(records)
}

/// Run every configured scheme for `config.rounds` rounds. Records are
/// ordered by scheme (proposed first), then round, then device.
pub fn run_simulation(config: &SimulationConfig) -> Result<Vec<RoundRecord>> {
    config.validate()?;
    if config.rounds == 0 {
        return Ok(Vec::new());
    }
    let env = Environment::build(config)?;
    let mut records = Vec::with_capacity(config.scheme.kinds().len() * config.rounds * config.num_devices);
    for kind in config.scheme.kinds() {
        let mut state = SchemeState::new(kind, &env);
        for m in 0..config.rounds {
            records.extend(run_round(&mut state, config, &env, m)?);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(extra: &str) -> SimulationConfig {
        parse_config(&format!("rounds = 6\n[devices]\ncount = 4\n{extra}")).unwrap()
    }

    #[test]
    fn zero_rounds_is_empty() {
        let mut c = small("");
        c.rounds = 0;
        assert!(run_simulation(&c).unwrap().is_empty());
    }

    #[test]
    fn record_layout_and_accounting() {
        let c = small("");
        let recs = run_simulation(&c).unwrap();
        assert_eq!(recs.len(), 2 * 6 * 4);
        assert_eq!(recs[0].scheme, SchemeKind::Proposed);
        assert_eq!(recs[24].scheme, SchemeKind::Benchmark);
        for r in &recs {
            assert_eq!(r.energy.total, r.energy.compute + r.energy.transmit);
            assert!((0.0..=1.0).contains(&r.deviation));
            assert!(r.loss.is_finite());
        }
    }

    #[test]
    fn single_device_never_deviates() {
        let c = small("");
        let c = SimulationConfig {
            num_devices: 1,
            ..c
        };
        for r in run_simulation(&c).unwrap() {
            assert_eq!(r.deviation, 0.0);
        }
    }

    #[test]
    fn round_zero_uses_benchmark_policy_for_both() {
        let c = small("");
        let recs = run_simulation(&c).unwrap();
        for k in 0..4 {
            let p = recs.iter().find(|r| r.round == 0 && r.device == k && r.scheme == SchemeKind::Proposed);
            let b = recs.iter().find(|r| r.round == 0 && r.device == k && r.scheme == SchemeKind::Benchmark);
            assert_eq!(p.unwrap().decision, b.unwrap().decision);
            assert_eq!(p.unwrap().energy, b.unwrap().energy);
        }
    }

    #[test]
    fn channels_replay_across_schemes() {
        let c = small("");
        let env = Environment::build(&c).unwrap();
        for m in 0..3 {
            for p in &env.profiles {
                assert_eq!(channel_for(&c, p, m), channel_for(&c, p, m));
            }
        }
        assert_ne!(channel_for(&c, &env.profiles[0], 0), channel_for(&c, &env.profiles[0], 1));
        assert_ne!(channel_for(&c, &env.profiles[0], 0), channel_for(&c, &env.profiles[1], 0));
    }

    #[test]
    fn deep_fade_skips_device() {
        // a device so far away that it can never meet the deadline
        let c = small("distance_policy = \"explicit\"\ndistance_range_m = [50.0, 2000.0]\ndistances_m = [50.0, 60.0, 70.0, 2000.0]");
        let recs = run_simulation(&c).unwrap();
        assert!(recs.iter().filter(|r| r.device == 3).all(|r| r.skipped()));
        assert!(recs.iter().filter(|r| r.device == 0).all(|r| !r.skipped()));
        for r in recs.iter().filter(|r| r.skipped()) {
            assert_eq!(r.energy, Energy::zero());
            assert_eq!(r.deviation, 1.0);
        }
    }

    #[test]
    fn distances_follow_policy() {
        let c = small("distance_policy = \"evenly-spaced\"");
        assert_eq!(c.distances(), vec![50.0, 100.0, 150.0, 200.0]);
        let u = small("");
        let d = u.distances();
        assert_eq!(d, small("").distances());
        assert!(d.iter().all(|r| (50.0..=200.0).contains(r)));
        assert_eq!(u.normalized_path_loss(50.0), 0.0);
        assert_eq!(u.normalized_path_loss(200.0), 1.0);
    }

    #[test]
    fn execution_modes_agree() {
        let mut c = small("");
        c.execution = Execution::Sequential;
        let a = run_simulation(&c).unwrap();
        c.execution = Execution::Parallel;
        assert_eq!(a, run_simulation(&c).unwrap());
    }
}
