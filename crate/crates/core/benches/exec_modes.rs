use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand_distr::{Distribution, StandardNormal};
use temperflow::exec::Exec;
use temperflow::flows::{Architecture, Base, Flow};
use temperflow::metrics::{cost_matrix, mmd_with, solve_assignment, Rbf};
use temperflow::rng::{stream, Purpose};
use temperflow::samplers::{kl_sampler, TrainConfig};
use temperflow::targets::make_gmm2d;
use temperflow::Tensor;

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Exec)> {
    vec![("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Exec)> {
    vec![("sequential", Exec::Sequential)]
}

fn trained_flow() -> Flow {
    let mut flow = Flow::init_identity(Architecture::default(), 2, Base::StandardNormal, 1).unwrap();
    flow.perturb(0.05, &mut stream(1, Purpose::Init, 9));
    flow
}

fn normal(n: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Eval, 0);
    Tensor::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng))
}

fn flow_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("flow_sample_4096");
    g.sample_size(10);
    for (name, exec) in modes() {
        let flow = trained_flow().with_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| flow.sample_with_log_prob(4096, &mut stream(3, Purpose::Eval, 0)).unwrap())
        });
    }
    g.finish();
}

fn kl_steps(c: &mut Criterion) {
    let target = make_gmm2d("circle").unwrap();
    let cfg = TrainConfig {
        batch: 1024,
        max_iters: 5,
        window: 0,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("kl_5_steps_batch_1024");
    g.sample_size(10);
    for (name, exec) in modes() {
        let flow = trained_flow().with_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut f = flow.clone();
                kl_sampler(&target, &mut f, &cfg).unwrap()
            })
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (x, y) = (normal(1000, 1), normal(1000, 2));
    let k = Rbf::new(1.0).unwrap();
    let mut g = c.benchmark_group("metrics_1000");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::new("w1", name), |b| {
            b.iter(|| solve_assignment(&cost_matrix(&x, &y, exec).unwrap()).unwrap())
        });
        g.bench_function(BenchmarkId::new("mmd", name), |b| {
            b.iter(|| mmd_with(&x, &y, |p, q| k.eval(p, q), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, flow_sampling, kl_steps, metrics);
criterion_main!(benches);
