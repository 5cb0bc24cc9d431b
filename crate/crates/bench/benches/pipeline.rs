use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gyromag::gyrocal::{init_least_squares, run_calibration, CalibrationOptions};
use gyromag::magcal;
use gyromag::observability::gramian;
use gyromag::simulator::{generate_trajectory, synthesize, TrajectoryProfile, TruthConfig};
use gyromag::RawLog;

fn reference_log() -> (TruthConfig, RawLog) {
    let cfg = TruthConfig::reference();
    let traj = generate_trajectory(&TrajectoryProfile::default_for(cfg.duration), &cfg).unwrap();
    let log = synthesize(&traj, &cfg, 1).unwrap();
    (cfg, log)
}

fn benches(c: &mut Criterion) {
    let (cfg, log) = reference_log();
    let mag = cfg.mag_intrinsics().apply_all(&log.mag());
    let (times, gyro, raw_mag) = (log.times(), log.gyro(), log.mag());

    c.bench_function("magcal_100s", |b| {
        b.iter(|| magcal::calibrate(black_box(&raw_mag)).unwrap())
    });
    c.bench_function("init_least_squares_100s", |b| {
        b.iter(|| init_least_squares(black_box(&times), &mag, &gyro, 1.0).unwrap())
    });
    c.bench_function("gramian_100s", |b| {
        b.iter(|| gramian(black_box(&times), &mag, &gyro, None).unwrap())
    });

    let options = CalibrationOptions {
        record_trace: false,
        ..CalibrationOptions::default()
    };
    let noise = cfg.matched_noise();
    let intrinsics = cfg.mag_intrinsics();
    let mut group = c.benchmark_group("ekf");
    group.sample_size(20);
    group.bench_function("calibrate_100s", |b| {
        b.iter(|| run_calibration(black_box(&log), &intrinsics, &noise, &options).unwrap())
    });
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
