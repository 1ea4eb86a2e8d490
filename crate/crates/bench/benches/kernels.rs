use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use indian_core::autodiff::{loss_and_grad, Activation, Loss, MlpSpec, OutputTransform, Sample};
use indian_core::dynamics::euler_flow;
use indian_core::objective::{Objective, Quadratic, RosenbrockNs};
use indian_core::{indian_init, indian_step, HyperParams, OptimState, ParamVector, Rng};

fn bench_step(c: &mut Criterion) {
    let hp = HyperParams::default();
    let mut group = c.benchmark_group("indian_step");
    for n in [10usize, 1_000, 100_000] {
        let mut rng = Rng::new(1);
        let theta = ParamVector::new((0..n).map(|_| rng.normal()).collect());
        let v = ParamVector::new((0..n).map(|_| rng.normal()).collect());
        let s = OptimState::new(theta.clone(), hp.steady_psi(&theta)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| indian_step(black_box(&s), black_box(&v), 1e-3, &hp).unwrap())
        });
    }
    group.finish();
}

fn bench_mlp(c: &mut Criterion) {
    let spec = MlpSpec::uniform(vec![784, 128, 10], Activation::Relu, OutputTransform::SoftmaxClamped { eps: 1e-12 })
        .unwrap();
    let mut rng = Rng::new(2);
    let theta = spec.init_params(&mut rng);
    let batch: Vec<Sample> = (0..32)
        .map(|i| Sample::classified((0..784).map(|_| rng.uniform()).collect(), i % 10, 10))
        .collect();
    c.bench_function("mlp_784_128_10_batch32_loss_and_grad", |b| {
        b.iter(|| loss_and_grad(&spec, black_box(&theta), black_box(&batch), Loss::CrossEntropy).unwrap())
    });
}

fn bench_flow(c: &mut Criterion) {
    let hp = HyperParams::default();
    let mut group = c.benchmark_group("euler_flow_10k_steps");
    let quad = Quadratic::diagonal(&[1.0, 0.3, 0.1, 0.03, 0.01], vec![0.0; 5]).unwrap();
    let cases: [(&str, &dyn Objective, Vec<f64>); 2] =
        [("quadratic5", &quad, vec![1.0; 5]), ("rosenbrock_ns", &RosenbrockNs, vec![-1.0, 1.5])];
    for (name, f, t0) in cases {
        let theta0 = ParamVector::new(t0);
        let g0 = f.eval_full(&theta0).unwrap().subgrad;
        let s = indian_init(&theta0, &g0, &hp).unwrap();
        group.bench_function(name, |b| b.iter(|| euler_flow(f, &s.theta, &s.psi, &hp, 1e-4, 1.0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_step, bench_mlp, bench_flow);
criterion_main!(benches);
