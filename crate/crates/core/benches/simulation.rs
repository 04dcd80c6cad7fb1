use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use fairfl::channel::{db_to_linear, dbm_to_watts, ChannelRealization, DeviceProfile, RadioConstants};
use fairfl::config::ConfigFile;
use fairfl::engine::run_simulation;
use fairfl::par::{map_slice, Execution};
use fairfl::policy::oracle::grid_optimum;
use fairfl::policy::{Link, UtilityParams};
use fairfl::rng::seeded;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    for devices in [10, 40] {
        let mut file = ConfigFile { rounds: 20, ..ConfigFile::default() };
        file.devices.count = devices;
        for (name, exec) in MODES {
            let mut config = file.resolve().unwrap();
            config.execution = exec;
            group.bench_with_input(BenchmarkId::new(name, devices), &config, |b, cfg| {
                b.iter(|| run_simulation(black_box(cfg)).unwrap())
            });
        }
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let radio = RadioConstants {
        path_loss_exponent: 4.0,
        center_frequency_hz: 32e6,
        modulation_gap: db_to_linear(9.8),
        noise_psd_w_per_hz: dbm_to_watts(-174.0),
        amplifier_efficiency: 0.45,
        rayleigh_scale: 1.0,
    };
    let mut rng = seeded(7);
    let cases: Vec<(DeviceProfile, ChannelRealization)> = (0..16)
        .map(|i| {
            let p = DeviceProfile {
                id: i,
                dataset_size: 200,
                per_sample_time: 4.704e-5,
                compute_power: 0.096,
                circuit_power: 0.0825,
                bandwidth: 250e3,
                distance: rng.random_range(50.0..200.0),
                p_max: 1.0,
                j_min: 10,
                j_max_cap: 1000,
            };
            let real = ChannelRealization {
                fading: rng.random_range(0.5..2.0),
                awgn_variance: radio.noise_psd_w_per_hz * p.bandwidth,
            };
            (p, real)
        })
        .collect();
    let params = UtilityParams { beta1: 0.5, beta2: 0.05, varrho: 0.5 };
    let mut group = c.benchmark_group("grid_oracle");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                map_slice(exec, &cases, |(p, r)| {
                    let link = Link::new(p, r, &radio, 0.75, 875e3);
                    grid_optimum(&params, &link, 200).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, simulation, oracle);
criterion_main!(benches);
