use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Point3;

use ctrkit::config::RobotConfig;
use ctrkit::evacuation::registration_trials;
use ctrkit::kinematics::{tip_position, JointConfig};
use ctrkit::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batch_ik(c: &mut Criterion) {
    let config = RobotConfig::default();
    let planner = config.planner().unwrap();
    let shape = config.shape().unwrap();
    let targets: Vec<Point3<f64>> = (0..256)
        .map(|i| {
            let q = JointConfig::new(5.0 + (i % 7) as f64, 2.0 + (i % 23) as f64 * 1.2, i as f64 * 0.37);
            tip_position(&shape, &q, 200).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("batch_ik_256");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| planner.solve_batch(&targets, exec))
        });
    }
    group.finish();
}

fn torsion_sweep(c: &mut Criterion) {
    let config = RobotConfig::default();
    let model = config.torsion_model(&config.shape().unwrap());
    let s_max = model.s_max();
    let s: Vec<f64> = (0..=64).map(|i| s_max * i as f64 / 64.0).collect();
    let mut group = c.benchmark_group("torsion_sweep_65");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exec.map(&s, |&s| (model.straightening_force(s).unwrap().force, model.deflection(s).unwrap())))
        });
    }
    group.finish();
}

fn registration(c: &mut Criterion) {
    let mut group = c.benchmark_group("registration_trials_2000");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| registration_trials(2000, 4, 0.5, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_ik, torsion_sweep, registration);
criterion_main!(benches);
