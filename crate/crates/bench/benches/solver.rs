use std::hint::black_box;

use atom_core::game::solve_ilq;
use atom_core::model::AgentParams;
use atom_core::sim::ScenarioConfig;
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_ilq");
    for name in ScenarioConfig::PRESETS {
        let cfg = ScenarioConfig::preset(name).unwrap();
        let spec = cfg.game_spec();
        let joint = cfg.world().initial_state();
        let params =
            atom_core::model::BehaviorParams::uniform(cfg.n_agents(), AgentParams::new(0.8, 1.5));
        group.bench_function(format!("{name}/cold"), |b| {
            b.iter(|| solve_ilq(black_box(&joint), &spec, &params, None).unwrap())
        });
        let warm = solve_ilq(&joint, &spec, &params, None).unwrap();
        group.bench_function(format!("{name}/warm"), |b| {
            b.iter(|| solve_ilq(black_box(&joint), &spec, &params, Some(&warm)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_solve);
criterion_main!(benches);
