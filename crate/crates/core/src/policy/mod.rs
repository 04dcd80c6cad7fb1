//! Per-device computation and transmission policy.
//!
//! A device values a round by how little deviation it expects for the
//! compute energy it invests, minus a concave penalty on its total energy.
//! The deviation-versus-energy curve is refitted each round from the
//! device's own history. Given the curve and the current channel, the
//! device picks iterations and transmit power by maximizing that utility
//! under the round's delay bound.
//!
//! Working in spectral efficiency Z = ln(1 + snr) instead of power makes the
//! transmit energy convex in Z. When the delay bound is active the problem
//! reduces to a scalar stationarity condition in Z which is solved
//! numerically ([`closed_form`]). [`solve_policy`] combines that point with
//! the remaining KKT cases (slack delay bound, iteration bounds) and keeps
//! the best integer iteration count.

pub mod fit;
pub mod oracle;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelRealization, DeviceProfile, RadioConstants};
use crate::error::{Error, Result};
use crate::localtrain::{accuracy_bound, LearningTask};

pub use fit::{fit_betas, FitConfig, FitSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub beta1: f64,
    /// Energy scale of the deviation curve, J.
    pub beta2: f64,
    /// Energy at which the cost penalty crosses zero, J.
    pub varrho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub iterations: usize,
    /// Radiated transmit power, W.
    pub power: f64,
    /// Uplink rate, bit/s.
    pub rate: f64,
    /// Upper bound on the local-solve accuracy after `iterations` steps.
    pub accuracy: f64,
    /// Spectral efficiency ln(1 + snr), nats.
    pub z: f64,
}

/// Modelled deviation factor for a given compute energy: beta1 exp(-E / beta2).
pub fn deviation_model(params: &UtilityParams, compute_energy: f64) -> f64 {
    params.beta1 * (-compute_energy / params.beta2).exp()
}

/// beta1 - beta1 exp(-E_cp / beta2) - E_tot (E_tot - varrho).
pub fn utility(params: &UtilityParams, compute_energy: f64, total_energy: f64) -> f64 {
    params.beta1 - deviation_model(params, compute_energy) - total_energy * (total_energy - params.varrho)
}

/// One device's view of one round: link state plus the round's time and
/// payload budget.
#[derive(Debug, Clone, Copy)]
pub struct Link<'a> {
    pub profile: &'a DeviceProfile,
    pub real: &'a ChannelRealization,
    pub radio: &'a RadioConstants,
    pub delay_bound: f64,
    pub payload_bits: f64,
    snr_per_watt: f64,
}

impl<'a> Link<'a> {
    pub fn new(
        profile: &'a DeviceProfile,
        real: &'a ChannelRealization,
        radio: &'a RadioConstants,
        delay_bound: f64,
        payload_bits: f64,
    ) -> Self {
        Link {
            profile,
            real,
            radio,
            delay_bound,
            payload_bits,
            snr_per_watt: real.snr_per_watt(profile, radio),
        }
    }

    pub fn iteration_time(&self) -> f64 {
        self.profile.iteration_time()
    }

    /// Upload time at spectral efficiency `z`: V ln 2 / (B z).
    pub fn tx_time(&self, z: f64) -> f64 {
        self.payload_bits * LN_2 / (self.profile.bandwidth * z)
    }

    pub fn z_of_power(&self, p: f64) -> f64 {
        (self.snr_per_watt * p).ln_1p()
    }

    pub fn power_of_z(&self, z: f64) -> f64 {
        z.exp_m1() / self.snr_per_watt
    }

    /// sigma^2 r^alpha Gamma ln 2 / (rho kappa B |h|^2).
    pub fn b(&self) -> f64 {
        LN_2 / (self.radio.amplifier_efficiency * self.profile.bandwidth * self.snr_per_watt)
    }

    /// rho kappa |h|^2 P_cir / (sigma^2 r^alpha Gamma) - 1.
    pub fn c(&self) -> f64 {
        self.radio.amplifier_efficiency * self.snr_per_watt * self.profile.circuit_power - 1.0
    }

    /// Compute energy for a (possibly fractional) iteration count.
    pub fn compute_energy(&self, iterations: f64) -> f64 {
        iterations * self.iteration_time() * self.profile.compute_power
    }

    /// Upload energy at spectral efficiency `z`: V b (e^z + c) / z.
    pub fn tx_energy(&self, z: f64) -> f64 {
        self.payload_bits * self.b() * (z.exp() + self.c()) / z
    }

    /// Smallest spectral efficiency that fits `iterations` into the delay bound.
    pub fn z_for_iterations(&self, iterations: f64) -> f64 {
        let left = self.delay_bound - iterations * self.iteration_time();
        if left <= 0.0 {
            f64::INFINITY
        } else {
            self.payload_bits * LN_2 / (self.profile.bandwidth * left)
        }
    }

    /// Continuous iteration count filling the delay bound at `z`.
    pub fn iterations_for_z(&self, z: f64) -> f64 {
        (self.delay_bound - self.tx_time(z)) / self.iteration_time()
    }

    pub fn z_max(&self) -> f64 {
        self.z_of_power(self.profile.p_max)
    }

    /// Spectral efficiency minimizing upload energy, root of (z - 1) e^z = c.
    pub fn z_energy_efficient(&self) -> f64 {
        let c = self.c();
        let f = |z: f64| (z - 1.0) * z.exp() - c;
        // f(0) = -1 - c < 0 and f is increasing on z > 0
        let mut hi = 1.0;
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
        bisect(f, 0.0, hi, 200).unwrap_or(hi)
    }

    /// Delay-bound check in the form j d tau + V ln 2 / (B z) <= T.
    pub fn meets_deadline(&self, iterations: usize, z: f64, slack: f64) -> bool {
        iterations as f64 * self.iteration_time() + self.tx_time(z) <= self.delay_bound + slack
    }

    /// Utility of running `iterations` steps and uploading at `z`.
    pub fn utility_at(&self, params: &UtilityParams, iterations: f64, z: f64) -> f64 {
        let e_cp = self.compute_energy(iterations);
        utility(params, e_cp, e_cp + self.tx_energy(z))
    }
}

/// Bisection for a sign change of `f` on [lo, hi]; None without one.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, max_iter: usize) -> Option<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Transmit power that lets `j_min` iterations and the upload exactly fill T.
pub fn p_min(
    profile: &DeviceProfile,
    real: &ChannelRealization,
    radio: &RadioConstants,
    j_min: usize,
    delay_bound: f64,
    payload_bits: f64,
) -> Result<f64> {
    let link = Link::new(profile, real, radio, delay_bound, payload_bits);
    let left = delay_bound - j_min as f64 * link.iteration_time();
    if left <= 0.0 {
        return Err(Error::InfeasibleRound(format!(
            "device {}: {j_min} iterations alone exceed the delay bound",
            profile.id
        )));
    }
    let z = payload_bits * LN_2 / (profile.bandwidth * left);
    Ok(link.power_of_z(z))
}

/// Most iterations that fit into T when uploading at P_max, capped by the
/// profile's hard limit.
pub fn j_max(
    profile: &DeviceProfile,
    real: &ChannelRealization,
    radio: &RadioConstants,
    delay_bound: f64,
    payload_bits: f64,
) -> Result<usize> {
    let link = Link::new(profile, real, radio, delay_bound, payload_bits);
    let z = link.z_max();
    if !(z > 0.0) {
        return Err(Error::InfeasibleTransmission { rate: 0.0 });
    }
    let left = delay_bound - link.tx_time(z);
    if left < 0.0 {
        return Err(Error::InfeasibleRound(format!(
            "device {}: upload at full power alone exceeds the delay bound",
            profile.id
        )));
    }
    let j = (left / link.iteration_time()).floor();
    Ok((j as usize).min(profile.j_max_cap))
}

/// Feasible ranges of one round, or the reason the device must sit it out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub j_min: usize,
    pub j_max: usize,
    pub p_min: f64,
    pub z_min: f64,
    pub z_max: f64,
}

pub fn feasibility(link: &Link<'_>) -> Result<Feasibility> {
    let j_lo = link.profile.j_min;
    let j_hi = j_max(link.profile, link.real, link.radio, link.delay_bound, link.payload_bits)?;
    if j_hi < j_lo {
        return Err(Error::InfeasibleRound(format!(
            "device {}: j_max {j_hi} below j_min {j_lo}",
            link.profile.id
        )));
    }
    let p_lo = p_min(link.profile, link.real, link.radio, j_lo, link.delay_bound, link.payload_bits)?;
    Ok(Feasibility {
        j_min: j_lo,
        j_max: j_hi,
        p_min: p_lo,
        z_min: link.z_of_power(p_lo),
        z_max: link.z_max(),
    })
}

/// Both sides of the stationarity condition along the active delay bound,
/// (LHS, RHS), evaluated at spectral efficiency `z`.
pub fn stationarity_sides(params: &UtilityParams, link: &Link<'_>, z: f64) -> (f64, f64) {
    let p_cp = link.profile.compute_power;
    let bw = link.profile.bandwidth;
    let v = link.payload_bits;
    let t = link.delay_bound;
    let (b, c) = (link.b(), link.c());
    let ez = z.exp();
    let first = 2.0 * p_cp * (t - v * LN_2 / (bw * z)) + 2.0 * v * b * (ez + c) / z - params.varrho;
    let second = bw * b / (p_cp * LN_2) * ((z - 1.0) * ez - c) + 1.0;
    let rhs = params.beta1 / params.beta2 * (p_cp / params.beta2 * (v * LN_2 / (bw * z) - t)).exp();
    (first * second, rhs)
}

/// LHS - RHS of [`stationarity_sides`].
pub fn stationarity_residual(params: &UtilityParams, link: &Link<'_>, z: f64) -> f64 {
    let (l, r) = stationarity_sides(params, link, z);
    l - r
}

/// Clamp a stationary point into the feasible band:
/// max(z_min, z_hat) below z_max, z_max otherwise.
pub fn clamp_z(z_hat: f64, z_min: f64, z_max: f64) -> f64 {
    if z_hat < z_max {
        z_min.max(z_hat)
    } else {
        z_max
    }
}

pub const ROOT_SCAN_POINTS: usize = 64;
pub const ROOT_MAX_ITERATIONS: usize = 200;

/// All sign changes of the stationarity residual on [lo, hi], each refined
/// by bisection.
pub fn stationary_points(params: &UtilityParams, link: &Link<'_>, lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return Vec::new();
    }
    let f = |z: f64| stationarity_residual(params, link, z);
    let step = (hi - lo) / ROOT_SCAN_POINTS as f64;
    let mut roots = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=ROOT_SCAN_POINTS {
        let b = if i == ROOT_SCAN_POINTS { hi } else { lo + step * i as f64 };
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa.signum() != fb.signum() && fb != 0.0 {
            if let Some(r) = bisect(f, a, b, ROOT_MAX_ITERATIONS) {
                roots.push(r);
            }
        }
        if i == ROOT_SCAN_POINTS && fb == 0.0 {
            roots.push(b);
        }
        a = b;
        fa = fb;
    }
    roots
}

/// The delay-bound-active solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    /// Best stationary point inside [z_min, z_max], if any exists.
    pub z_hat: Option<f64>,
    pub z_star: f64,
    pub power: f64,
    pub rate: f64,
    /// Iterations filling the delay bound at `z_star`, capped at j_max.
    pub iterations: f64,
}

/// Stationary point of the utility along the active delay bound, clamped to
/// the feasible band. Among several stationary points and the band edges the
/// one with the highest utility wins.
pub fn closed_form(params: &UtilityParams, link: &Link<'_>, feas: &Feasibility) -> ClosedForm {
    let along = |z: f64| {
        let j = link.iterations_for_z(z).min(feas.j_max as f64).max(feas.j_min as f64);
        link.utility_at(params, j, z)
    };
    let roots = stationary_points(params, link, feas.z_min, feas.z_max);
    let z_hat = roots.iter().copied().max_by(|a, b| along(*a).total_cmp(&along(*b)));
    let mut best = z_hat.map(|z| clamp_z(z, feas.z_min, feas.z_max));
    for edge in [feas.z_min, feas.z_max] {
        if best.is_none_or(|z| along(edge) > along(z)) {
            best = Some(edge);
        }
    }
    let z_star = best.expect("edges always provide a candidate");
    let power = link.power_of_z(z_star);
    ClosedForm {
        z_hat,
        z_star,
        power,
        rate: channel::transmission_rate(power, link.real, link.profile, link.radio),
        iterations: link.iterations_for_z(z_star).min(feas.j_max as f64),
    }
}

/// Best spectral efficiency for a fixed integer iteration count, or None if
/// that count cannot meet the deadline.
///
/// With j fixed only the cost penalty depends on z. Upload energy is convex
/// in z, so the best z either minimizes it or brings total energy to
/// varrho / 2 where the penalty peaks.
pub fn best_z_for_iterations(params: &UtilityParams, link: &Link<'_>, feas: &Feasibility, j: usize) -> Option<f64> {
    if j < feas.j_min || j > feas.j_max {
        return None;
    }
    let lo = link.z_for_iterations(j as f64).max(feas.z_min);
    let hi = feas.z_max;
    if lo > hi {
        return None;
    }
    let e_cp = link.compute_energy(j as f64);
    let z_ee = link.z_energy_efficient().clamp(lo, hi);
    let target = 0.5 * params.varrho;
    if e_cp + link.tx_energy(z_ee) >= target {
        return Some(z_ee);
    }
    if e_cp + link.tx_energy(hi) <= target {
        return Some(hi);
    }
    bisect(|z| e_cp + link.tx_energy(z) - target, z_ee, hi, ROOT_MAX_ITERATIONS).or(Some(z_ee))
}

/// Continuous iteration count where the marginal learning gain equals the
/// marginal energy penalty with the upload at its energy-efficient rate.
fn slack_iterations(params: &UtilityParams, link: &Link<'_>, feas: &Feasibility) -> f64 {
    let e_tx = link.tx_energy(link.z_energy_efficient().clamp(feas.z_min, feas.z_max));
    let grad = |j: f64| {
        let e_cp = link.compute_energy(j);
        params.beta1 / params.beta2 * (-e_cp / params.beta2).exp() - (2.0 * (e_cp + e_tx) - params.varrho)
    };
    let (lo, hi) = (feas.j_min as f64, feas.j_max as f64);
    if grad(lo) <= 0.0 {
        lo
    } else if grad(hi) >= 0.0 {
        hi
    } else {
        bisect(grad, lo, hi, ROOT_MAX_ITERATIONS).unwrap_or(lo)
    }
}

fn decision(link: &Link<'_>, task: &LearningTask, j: usize, z: f64) -> PolicyDecision {
    let power = link.power_of_z(z);
    PolicyDecision {
        iterations: j,
        power,
        rate: channel::transmission_rate(power, link.real, link.profile, link.radio),
        accuracy: accuracy_bound(j as f64, task).min(1.0),
        z,
    }
}

/// Detailed solver output: the chosen decision plus the delay-active point it
/// was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySolution {
    pub decision: PolicyDecision,
    pub closed_form: ClosedForm,
    pub feasibility: Feasibility,
    pub utility: f64,
}

pub fn solve_policy_detailed(params: &UtilityParams, link: &Link<'_>, task: &LearningTask) -> Result<PolicySolution> {
    let feas = feasibility(link)?;
    let cf = closed_form(params, link, &feas);
    let slack = slack_iterations(params, link, &feas);

    let mut js: Vec<usize> = [cf.iterations.floor(), cf.iterations.floor() + 1.0, slack.floor(), slack.ceil()]
        .into_iter()
        .map(|j| (j.max(0.0) as usize).clamp(feas.j_min, feas.j_max))
        .chain([feas.j_min, feas.j_max])
        .collect();
    js.sort_unstable();
    js.dedup();

    let mut best: Option<(usize, f64, f64)> = None;
    for j in js {
        if let Some(z) = best_z_for_iterations(params, link, &feas, j) {
            let u = link.utility_at(params, j as f64, z);
            if best.is_none_or(|(_, _, bu)| u > bu) {
                best = Some((j, z, u));
            }
        }
    }
    let (j, z, u) = best.ok_or_else(|| {
        Error::InfeasibleRound(format!("device {}: no iteration count meets the deadline", link.profile.id))
    })?;
    Ok(PolicySolution {
        decision: decision(link, task, j, z),
        closed_form: cf,
        feasibility: feas,
        utility: u,
    })
}

/// Utility-maximizing (iterations, power, rate, accuracy) for this round.
#[allow(clippy::too_many_arguments)]
pub fn solve_policy(
    params: &UtilityParams,
    profile: &DeviceProfile,
    real: &ChannelRealization,
    radio: &RadioConstants,
    task: &LearningTask,
    delay_bound: f64,
    payload_bits: f64,
) -> Result<PolicyDecision> {
    let link = Link::new(profile, real, radio, delay_bound, payload_bits);
    solve_policy_detailed(params, &link, task).map(|s| s.decision)
}

/// Vanilla policy: as many iterations as fit at full power.
pub fn benchmark_policy(
    profile: &DeviceProfile,
    real: &ChannelRealization,
    radio: &RadioConstants,
    task: &LearningTask,
    delay_bound: f64,
    payload_bits: f64,
) -> Result<PolicyDecision> {
    let link = Link::new(profile, real, radio, delay_bound, payload_bits);
    let feas = feasibility(&link)?;
    Ok(decision(&link, task, feas.j_max, feas.z_max))
}
