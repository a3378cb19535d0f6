use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use sodsim::fleet::{balance_load, LoadCandidate, Task};
use sodsim::drone::EnergyModel;
use sodsim::ids::NodeId;
use sodsim::kernel::SimTime;
use sodsim::sim::run;
use sodsim_bench::{grid_world, shipped_scenario};

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    for name in ["rescue_sweep", "capture_master", "free_rider"] {
        let spec = shipped_scenario(name);
        g.bench_function(name, |b| b.iter(|| run(black_box(&spec), &[]).unwrap()));
    }
    let perf = shipped_scenario("perf_hybrid_10");
    g.bench_function("perf_hybrid_10", |b| b.iter(|| run(black_box(&perf), &[]).unwrap()));
    g.finish();
}

fn routing(c: &mut Criterion) {
    let world = grid_world(100);
    c.bench_function("route_100_nodes_corner_to_corner", |b| {
        b.iter(|| world.route(black_box(NodeId(0)), black_box(NodeId(99)), SimTime(0)).unwrap())
    });
}

fn load_balance(c: &mut Criterion) {
    let fleet: Vec<LoadCandidate> = (0..10).map(|i| LoadCandidate::new(NodeId(i), 1.0 + i as f64 % 3.0)).collect();
    let model = EnergyModel::default();
    c.bench_function("balance_200_tasks_10_drones", |b| {
        b.iter_batched(
            || (0..200).map(|i| Task::new(i, 1.0 + (i * 7919 % 97) as f64)).collect::<Vec<_>>(),
            |tasks| balance_load(&tasks, &fleet, &model).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, scenarios, routing, load_balance);
criterion_main!(benches);
