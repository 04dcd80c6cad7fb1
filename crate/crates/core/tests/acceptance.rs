//! End-to-end acceptance checks.
//!
//! Runs as a plain binary so every criterion prints one PASS/FAIL line even
//! when all pass. Exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use fairfl::channel::{ChannelRealization, DeviceProfile, RadioConstants};
use fairfl::cli::{run_experiment, ExperimentSpec};
use fairfl::config::ConfigFile;
use fairfl::engine::{run_simulation, RoundRecord, SchemeKind};
use fairfl::localtrain::data::regression_with_spectrum;
use fairfl::localtrain::{local_gradient, min_iterations, solve_local, LearningTask, LossKind, ModelVector};
use fairfl::policy::oracle::{grid_optimum, GRID_POINTS};
use fairfl::policy::{closed_form, feasibility, solve_policy_detailed, stationarity_sides, Link, UtilityParams};
use fairfl::privacy::{adaptive_sigma, min_sigma, perturb_model, DpParams};
use fairfl::rng::seeded;
use fairfl::summary::summarize;

const OPTIMALITY_TOL: f64 = 1e-3;
const RESIDUAL_TOL: f64 = 1e-8;
const VARIANCE_TOL: f64 = 0.05;
const VARIANCE_SAMPLES: usize = 100_000;
const SIGMA_TOL: f64 = 1e-12;
const STD_RATIO_MAX: f64 = 0.10;
const STD_RATIO_TARGET: f64 = 0.05;
const MEAN_REDUCTION_MIN: f64 = 5.0;
const LOSS_RATIO_MAX: f64 = 1.15;
const LOSS_STD_MAX: f64 = 0.2;
const INSTANCES: usize = 100;
const ROUNDS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn radio() -> RadioConstants {
    RadioConstants {
        path_loss_exponent: 4.0,
        center_frequency_hz: 32e6,
        modulation_gap: fairfl::channel::db_to_linear(9.8),
        noise_psd_w_per_hz: fairfl::channel::dbm_to_watts(-174.0),
        amplifier_efficiency: 0.45,
        rayleigh_scale: 1.0,
    }
}

fn profile(distance: f64) -> DeviceProfile {
    DeviceProfile {
        id: 0,
        dataset_size: 200,
        per_sample_time: 4.704e-5,
        compute_power: 0.096,
        circuit_power: 0.0825,
        bandwidth: 250e3,
        distance,
        p_max: 1.0,
        j_min: 10,
        j_max_cap: 1000,
    }
}

fn policy_task() -> LearningTask {
    LearningTask {
        loss: LossKind::Quadratic,
        regularization: 0.0,
        strong_convexity: 0.5,
        smoothness: 1.0,
        surrogate_weight: 1.0,
        step_size: 1.0,
    }
}

/// A random feasible device/channel/utility instance.
struct Instance {
    profile: DeviceProfile,
    real: ChannelRealization,
    params: UtilityParams,
}

fn instances(seed: u64, n: usize) -> Vec<Instance> {
    let r = radio();
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let pr = profile(rng.random_range(50.0..200.0));
        // unit-mean exponential fading power
        let fading = -(1.0 - rng.random::<f64>()).ln();
        let real = ChannelRealization {
            fading: fading.max(1e-3),
            awgn_variance: r.noise_psd_w_per_hz * pr.bandwidth,
        };
        let params = UtilityParams {
            beta1: 10f64.powf(rng.random_range(-2.0..0.0)),
            beta2: 10f64.powf(rng.random_range(-2.5..0.0)),
            varrho: 0.5,
        };
        let link = Link::new(&pr, &real, &r, 0.75, 875e3);
        if feasibility(&link).is_ok() {
            out.push(Instance { profile: pr, real, params });
        }
    }
    out
}

fn closed_form_optimality() -> Outcome {
    let r = radio();
    let task = policy_task();
    let (mut worst, mut failures) = (f64::NEG_INFINITY, 0);
    for inst in instances(101, INSTANCES) {
        let link = Link::new(&inst.profile, &inst.real, &r, 0.75, 875e3);
        let sol = solve_policy_detailed(&inst.params, &link, &task).expect("feasible instance");
        let grid = grid_optimum(&inst.params, &link, GRID_POINTS).expect("grid").expect("grid point");
        let gap = (grid.utility - sol.utility) / grid.utility.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(gap);
        if gap > OPTIMALITY_TOL {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{INSTANCES} instances vs {GRID_POINTS}x{GRID_POINTS} grid, worst shortfall {worst:.2e} (tol {OPTIMALITY_TOL:.0e}), {failures} over"),
    )
}

fn root_contract() -> Outcome {
    let r = radio();
    let (mut interior, mut failures, mut worst) = (0, 0, 0.0f64);
    for inst in instances(202, INSTANCES) {
        let link = Link::new(&inst.profile, &inst.real, &r, 0.75, 875e3);
        let feas = feasibility(&link).expect("feasible instance");
        let cf = closed_form(&inst.params, &link, &feas);
        let Some(z) = cf.z_hat else { continue };
        if !(z > feas.z_min && z < feas.z_max) {
            continue;
        }
        interior += 1;
        let (lhs, rhs) = stationarity_sides(&inst.params, &link, z);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        worst = worst.max(rel);
        if rel > RESIDUAL_TOL {
            failures += 1;
        }
    }
    outcome(
        interior > 0 && failures == 0,
        format!("{interior} interior roots, worst relative residual {worst:.2e} (tol {RESIDUAL_TOL:.0e}), {failures} over"),
    )
}

fn dp_mechanism() -> Outcome {
    let dp = DpParams { epsilon: 0.95, delta: 1e-5, theta: 0.6, sensitivity: 0.01 };
    let expected0 = (2.0 * (1.25f64 / 1e-5).ln()).sqrt() / 0.95;
    let s0 = adaptive_sigma(&dp, 0.0).expect("sigma");
    let sigma_ok = (s0 - expected0).abs() <= SIGMA_TOL * expected0;
    let base = min_sigma(dp.epsilon, dp.delta).expect("sigma");
    let mut rng = seeded(303);
    let mut worst = 0.0f64;
    for e in [0.0, 0.5, 1.0] {
        let sigma = adaptive_sigma(&dp, e).expect("sigma");
        let w = ModelVector::zeros(VARIANCE_SAMPLES);
        let noisy = perturb_model(&w, sigma, base, dp.sensitivity, &mut rng).expect("perturb");
        let n = VARIANCE_SAMPLES as f64;
        let m = noisy.0.iter().sum::<f64>() / n;
        let var = noisy.0.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (dp.sensitivity * sigma).powi(2);
        worst = worst.max((var / target - 1.0).abs());
    }
    outcome(
        sigma_ok && worst <= VARIANCE_TOL,
        format!("sigma(0) = {s0:.6} vs {expected0:.6}; worst variance error {:.2}% at n={VARIANCE_SAMPLES} (tol 5%)", 100.0 * worst),
    )
}

fn iteration_bound() -> Outcome {
    let spectrum = [1.0, 1.2, 1.5, 1.8, 2.0];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (seed, eta_l) in [(401, 0.5), (402, 1.0), (403, 1.5)] {
        let mut rng = seeded(seed);
        let labels: Vec<f64> = (0..spectrum.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = regression_with_spectrum(&mut rng, &spectrum, &labels).expect("data");
        let task = LearningTask {
            loss: LossKind::Quadratic,
            regularization: 0.0,
            strong_convexity: 1.0,
            smoothness: 2.0,
            surrogate_weight: 1.0,
            step_size: eta_l / 2.0,
        };
        let w = ModelVector((0..spectrum.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let lg = local_gradient(&w, &data, &task).expect("gradient");
        let gg = lg.add_scaled(1.0, &ModelVector(vec![0.3; spectrum.len()])).scaled(0.5);
        for phi in [0.25, 0.1, 0.01] {
            let j = min_iterations(phi, &task).expect("iterations");
            let sol = solve_local(&w, &lg, &gg, &data, &task, j).expect("solve");
            worst = worst.max(sol.achieved_accuracy / phi);
            if sol.achieved_accuracy > phi {
                failures.push(format!("eta L {eta_l} phi {phi}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("9 (eta L, phi) cases, worst achieved/target {worst:.3}; failing: {failures:?}"),
    )
}

struct RunStats {
    std_ratio: f64,
    mean_reduction: f64,
    loss_ratio: f64,
    loss_std: f64,
    records: Vec<RoundRecord>,
}

fn default_run() -> RunStats {
    let file = ConfigFile { rounds: ROUNDS, ..ConfigFile::default() };
    let config = file.resolve().expect("default config");
    let records = run_simulation(&config).expect("simulation");
    let s = summarize(&records).expect("summary");
    let p = s.scheme(SchemeKind::Proposed).expect("proposed");
    let b = s.scheme(SchemeKind::Benchmark).expect("benchmark");
    RunStats {
        std_ratio: p.energy_std / b.energy_std,
        mean_reduction: 100.0 * (1.0 - p.mean_energy / b.mean_energy),
        loss_ratio: p.final_average_loss / b.final_average_loss,
        loss_std: p.loss_std,
        records,
    }
}

fn fairness(run: &RunStats) -> Outcome {
    let target = if run.std_ratio <= STD_RATIO_TARGET { "met" } else { "missed" };
    outcome(
        run.std_ratio <= STD_RATIO_MAX,
        format!(
            "energy std ratio {:.4} ({:.2}% reduction; bound {STD_RATIO_MAX}, target {STD_RATIO_TARGET} {target})",
            run.std_ratio,
            100.0 * (1.0 - run.std_ratio)
        ),
    )
}

fn mean_saving(run: &RunStats) -> Outcome {
    outcome(
        run.mean_reduction >= MEAN_REDUCTION_MIN,
        format!("mean energy reduction {:.2}% (min {MEAN_REDUCTION_MIN}%)", run.mean_reduction),
    )
}

fn learning_parity(run: &RunStats) -> Outcome {
    outcome(
        run.loss_ratio <= LOSS_RATIO_MAX && run.loss_std <= LOSS_STD_MAX,
        format!(
            "final loss ratio {:.4} (max {LOSS_RATIO_MAX}), loss std across devices {:.4} (max {LOSS_STD_MAX})",
            run.loss_ratio, run.loss_std
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).expect("read")))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, format!("rounds = {ROUNDS}\n")).expect("config");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&ExperimentSpec::new(&cfg, &a)).expect("first run");
    run_experiment(&ExperimentSpec::new(&cfg, &b)).expect("second run");
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    outcome(
        !fa.is_empty() && fa == fb,
        format!("{} CSV files compared byte for byte", fa.len()),
    )
}

fn deviation_structure(run: &RunStats) -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for scheme in [SchemeKind::Proposed, SchemeKind::Benchmark] {
        for m in 0..ROUNDS {
            let devs: Vec<f64> = run
                .records
                .iter()
                .filter(|r| r.scheme == scheme && r.round == m)
                .map(|r| r.deviation)
                .collect();
            checked += 1;
            let min = devs.iter().copied().fold(f64::INFINITY, f64::min);
            if min != 0.0 || devs.iter().any(|e| !(0.0..=1.0).contains(e)) {
                bad.push((scheme.as_str(), m));
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} scheme-rounds checked, {} violating: {bad:?}", bad.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "policy optimality vs grid oracle", closed_form_optimality()),
        (2, "stationary root residual", root_contract()),
        (3, "privacy noise calibration", dp_mechanism()),
        (4, "local iteration bound", iteration_bound()),
    ];
    let run = default_run();
    results.push((5, "energy fairness", fairness(&run)));
    results.push((6, "mean energy saving", mean_saving(&run)));
    results.push((7, "learning parity", learning_parity(&run)));
    results.push((8, "replay determinism", determinism()));
    results.push((9, "deviation factor structure", deviation_structure(&run)));
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed in {:.1?}", results.len() - failed, results.len(), start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
