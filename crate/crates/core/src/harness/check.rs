//! Quick numerical self-checks of the library's core identities.

use std::sync::Arc;

use super::runner::{run_deterministic, run_stochastic, LoopSettings, TrainTask};
use super::config::Sampling;
use crate::autodiff::{grad_check, loss_and_grad, Activation, Loss, MlpSpec, OutputTransform, Sample};
use crate::dynamics::{euler_flow, linear_flow_exact};
use crate::numkit::{ParamVector, Rng};
use crate::objective::{Objective, Quadratic};
use crate::optim::{check_schedule_admissible, indian_init, indian_step, HyperParams, OptimState, OptimizerKind, StepSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn random_hp(rng: &mut Rng) -> HyperParams {
    HyperParams::new(rng.uniform_range(0.1, 2.0), rng.uniform_range(0.05, 1.0)).expect("positive")
}

fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..n).map(|_| rng.uniform_range(-scale, scale)).collect())
}

pub fn steady_state_fixed_point(rng: &mut Rng) -> CheckOutcome {
    let mut moved = 0;
    for _ in 0..100 {
        let hp = random_hp(rng);
        let theta = random_vec(rng, 5, 10.0);
        let s = OptimState::new(theta.clone(), hp.steady_psi(&theta)).expect("finite");
        let n = indian_step(&s, &ParamVector::zeros(5), rng.uniform_range(1e-4, 1.0), &hp).expect("finite");
        if n.theta != s.theta || n.psi != s.psi {
            moved += 1;
        }
    }
    outcome("steady states are fixed points", moved == 0, format!("{moved}/100 moved"))
}

pub fn initial_velocity(rng: &mut Rng) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let hp = random_hp(rng);
        let theta = random_vec(rng, 4, 1.0);
        let g = random_vec(rng, 4, 1.0);
        let gamma = rng.uniform_range(1e-3, 0.1);
        let s = indian_init(&theta, &g, &hp).expect("finite");
        let n = indian_step(&s, &g, gamma, &hp).expect("finite");
        let d = crate::numkit::axpby(1.0, &n.theta, -1.0, &theta).expect("finite");
        let want = g.scale(-gamma);
        let err = crate::numkit::axpby(1.0, &d, -1.0, &want).expect("finite").norm2() / want.norm2();
        worst = worst.max(err);
    }
    outcome("first displacement is -gamma * grad", worst <= 1e-12, format!("max relative error {worst:.3e}"))
}

pub fn energy_decrease() -> CheckOutcome {
    let q = Quadratic::diagonal(&[1.0, 0.3, 0.1], vec![0.0; 3]).expect("diagonal");
    let hp = HyperParams::default();
    let theta0 = ParamVector::new(vec![1.0; 3]);
    let g0 = q.eval_full(&theta0).expect("dims").subgrad;
    let s = indian_init(&theta0, &g0, &hp).expect("finite");
    let traj = euler_flow(&q, &s.theta, &s.psi, &hp, 1e-3, 5.0).expect("flow");
    let (a, b, c) = traj.max_energy_increase();
    let worst = a.max(b).max(c);
    outcome("energies non-increasing on a quadratic flow", worst <= 1e-8, format!("max increase {worst:.3e}"))
}

pub fn euler_vs_exact() -> CheckOutcome {
    let h = 1e-3;
    let hp = HyperParams::default();
    let q = Quadratic::identity(1);
    let theta0 = ParamVector::new(vec![1.0]);
    let s = indian_init(&theta0, &theta0, &hp).expect("finite");
    let traj = euler_flow(&q, &s.theta, &s.psi, &hp, h, 1.0).expect("flow");
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        let (t, p) = linear_flow_exact(1.0, &hp, s.theta[0], s.psi[0], traj.times[i]);
        worst = worst.max((traj.theta(i)[0] - t).abs()).max((traj.psi(i)[0] - p).abs());
    }
    outcome("Euler tracks the closed-form linear flow", worst <= 10.0 * h, format!("sup deviation {worst:.3e}"))
}

pub fn autodiff(rng: &mut Rng) -> CheckOutcome {
    let spec = MlpSpec::uniform(vec![3, 5, 4], Activation::Tanh, OutputTransform::SoftmaxClamped { eps: 1e-12 })
        .expect("spec");
    let theta = spec.init_params(rng);
    let batch: Vec<Sample> = (0..4)
        .map(|i| Sample::classified((0..3).map(|_| rng.normal()).collect(), i % 4, 4))
        .collect();
    let err = grad_check(&spec, &theta, &batch, Loss::CrossEntropy, 1e-5).expect("dims");
    let (v, g) = loss_and_grad(&spec, &theta, &batch, Loss::CrossEntropy).expect("dims");
    let mut gv = ParamVector::zeros(spec.n_params());
    let mut vv = 0.0;
    for s in &batch {
        let (a, b) = loss_and_grad(&spec, &theta, std::slice::from_ref(s), Loss::CrossEntropy).expect("dims");
        vv += a;
        gv = crate::numkit::axpby(1.0, &gv, 1.0, &b).expect("finite");
    }
    let additive = v == vv && g == gv;
    outcome(
        "reverse mode matches finite differences and is additive",
        err <= 1e-6 && additive,
        format!("max relative error {err:.3e}, additive {additive}"),
    )
}

pub fn full_batch_equivalence() -> CheckOutcome {
    let q = Quadratic::diagonal(&[1.0, 3.0], vec![0.5, 0.0]).expect("diagonal");
    let task = TrainTask::new(Arc::new(q));
    let settings = LoopSettings {
        batch_size: 1,
        steps_per_epoch: 1,
        total_steps: 1000,
        log_every: 50,
        log_epochs: false,
        sampling: Sampling::Full,
        residual: true,
        wall_time: false,
    };
    let kind = OptimizerKind::indian(0.5, 0.1);
    let sched = StepSchedule::PowerDecay { gamma0: 0.05, q: 0.5 };
    let theta0 = ParamVector::new(vec![1.0, -1.0]);
    let a = run_stochastic(&task, None, &kind, &sched, &theta0, 7, &settings);
    let b = run_deterministic(&task, &kind, &sched, &theta0, &settings);
    let same = matches!((&a, &b), (Ok(x), Ok(y)) if x.rows == y.rows && x.final_theta == y.final_theta);
    outcome("full-batch stochastic run equals deterministic run", same, format!("bitwise equal {same}"))
}

pub fn schedule_classes() -> CheckOutcome {
    let mut wrong = Vec::new();
    for q in [1.0 / 16.0, 0.125, 0.25, 0.5, 1.0] {
        if !check_schedule_admissible(&StepSchedule::PowerDecay { gamma0: 0.1, q }).is_admissible() {
            wrong.push(format!("q={q}"));
        }
    }
    for s in [StepSchedule::Constant { gamma: 0.1 }, StepSchedule::PowerDecay { gamma0: 0.1, q: 1.5 }] {
        if check_schedule_admissible(&s).is_admissible() {
            wrong.push(format!("{s:?}"));
        }
    }
    outcome("step schedule admissibility", wrong.is_empty(), format!("misclassified: {wrong:?}"))
}

/// Every check, seeded deterministically.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = Rng::new(seed);
    vec![
        steady_state_fixed_point(&mut rng),
        initial_velocity(&mut rng),
        energy_decrease(),
        euler_vs_exact(),
        autodiff(&mut rng),
        full_batch_equivalence(),
        schedule_classes(),
    ]
}
