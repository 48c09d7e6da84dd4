use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use blockloop::eval::{all_tasks, run_eval, EvalConfig, Execution, Perturb, Split};
use blockloop::planners::Oracle;

fn oracle_eval(c: &mut Criterion) {
    let tasks = all_tasks();
    let seeds: Vec<u64> = (0..2).collect();
    let mut group = c.benchmark_group("oracle_eval_35x2");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let cfg = EvalConfig {
            split: Split::All,
            perturb: Perturb::Random,
            execution: exec,
            timing: false,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| run_eval(&Oracle, &tasks, cfg, &seeds).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, oracle_eval);
criterion_main!(benches);
