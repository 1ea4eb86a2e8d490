//! Training loops, multi-seed experiments and the γ₀ grid search.

use std::sync::Arc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{DataConfig, ExperimentConfig, ObjectiveConfig, RunConfig, Sampling};
use super::data::{hex, load_idx_split, make_blobs, Dataset};
use super::HarnessError;
use crate::autodiff::{accuracy, loss_value, MlpObjective, MlpSpec, OutputTransform, Sample};
use crate::dynamics::lyapunov;
use crate::numkit::{ParamVector, Rng};
use crate::objective::{epoch_batches, residual_to_s, sample_batch, Batch, Objective, PowerAbs, Quadratic, RosenbrockNs};
use crate::optim::{OptimError, Optimizer, OptimizerKind, StepSchedule};

/// Random stream ids derived from each run seed.
const INIT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;

/// How starting points are produced when none is configured.
#[derive(Debug, Clone)]
pub enum InitRule {
    /// Independent standard normal coordinates.
    Normal(usize),
    /// Network weights `N(0, 1/fan_in)`, zero biases.
    Mlp(MlpSpec),
}

/// The training objective and nothing else, so that code handed a task can
/// never look at held-out data.
#[derive(Clone)]
pub struct TrainTask {
    pub objective: Arc<dyn Objective>,
    pub init: InitRule,
    /// Present for network objectives; used for cheap loss-only evaluation.
    pub mlp: Option<MlpObjective>,
}

impl TrainTask {
    pub fn new(objective: Arc<dyn Objective>) -> Self {
        let dim = objective.dim();
        TrainTask {
            objective,
            init: InitRule::Normal(dim),
            mlp: None,
        }
    }

    pub fn from_mlp(mlp: MlpObjective) -> Self {
        TrainTask {
            init: InitRule::Mlp(mlp.spec().clone()),
            objective: Arc::new(mlp.clone()),
            mlp: Some(mlp),
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn n_terms(&self) -> usize {
        self.objective.n_terms()
    }

    /// Mean of the per-term values.
    pub fn mean_value(&self, theta: &ParamVector) -> Result<f64, HarnessError> {
        let total = match &self.mlp {
            Some(m) => loss_value(m.spec(), theta, m.samples(), m.loss())?,
            None => self.objective.value_full(theta)?,
        };
        Ok(total / self.n_terms() as f64)
    }

    /// Mean value and mean selection over every term.
    pub fn mean_eval(&self, theta: &ParamVector) -> Result<(f64, ParamVector), HarnessError> {
        let ev = self.objective.eval_full(theta)?;
        let n = self.n_terms() as f64;
        Ok((ev.value / n, mean_scale(ev.subgrad, n)))
    }

    pub fn initial_point(&self, seed: u64) -> ParamVector {
        let mut rng = Rng::new(seed).split(INIT_STREAM);
        match &self.init {
            InitRule::Normal(dim) => ParamVector::new((0..*dim).map(|_| rng.normal()).collect()),
            InitRule::Mlp(spec) => spec.init_params(&mut rng),
        }
    }
}

fn mean_scale(v: ParamVector, n: f64) -> ParamVector {
    ParamVector::new(v.into_inner().into_iter().map(|g| g / n).collect())
}

/// Held-out classification samples and the network that reads them.
#[derive(Clone)]
pub struct TestSet {
    pub spec: MlpSpec,
    pub samples: Arc<Vec<Sample>>,
}

impl TestSet {
    pub fn accuracy(&self, theta: &ParamVector) -> Result<f64, HarnessError> {
        Ok(accuracy(&self.spec, theta, &self.samples)?)
    }
}

#[derive(Clone)]
pub struct Problem {
    pub train: TrainTask,
    pub test: Option<TestSet>,
}

impl Problem {
    pub fn from_config(cfg: &ObjectiveConfig) -> Result<Self, HarnessError> {
        let objective: Arc<dyn Objective> = match cfg {
            ObjectiveConfig::RosenbrockNs => Arc::new(RosenbrockNs),
            ObjectiveConfig::PowerAbs { c } => Arc::new(PowerAbs::new(*c)?),
            ObjectiveConfig::Quadratic { diag, rows, b } => {
                let q = if let Some(d) = diag {
                    let b = b.clone().unwrap_or_else(|| vec![0.0; d.len()]);
                    Quadratic::diagonal(d, b)?
                } else {
                    let rows = rows.as_ref().expect("validated");
                    let n = rows.len();
                    let b = b.clone().unwrap_or_else(|| vec![0.0; n]);
                    if rows.iter().any(|r| r.len() != n) {
                        return Err(HarnessError::Config("quadratic rows must form a square matrix".into()));
                    }
                    Quadratic::new(rows.concat(), b)?
                };
                Arc::new(q)
            }
            ObjectiveConfig::Mlp {
                hidden,
                activation,
                loss,
                clamp,
                data,
            } => {
                let ds = load_data(data)?;
                return Problem::from_dataset(&ds, hidden, *activation, *loss, *clamp);
            }
        };
        Ok(Problem {
            train: TrainTask::new(objective),
            test: None,
        })
    }

    pub fn from_dataset(
        ds: &Dataset,
        hidden: &[usize],
        activation: crate::autodiff::Activation,
        loss: crate::autodiff::Loss,
        clamp: f64,
    ) -> Result<Self, HarnessError> {
        let mut widths = vec![ds.input_dim()];
        widths.extend_from_slice(hidden);
        widths.push(ds.classes());
        let output = match loss {
            crate::autodiff::Loss::CrossEntropy => OutputTransform::SoftmaxClamped { eps: clamp },
            crate::autodiff::Loss::Mse => OutputTransform::Identity,
        };
        let spec = MlpSpec::uniform(widths, activation, output)?;
        let mlp = MlpObjective::new(spec.clone(), loss, ds.train().clone())?;
        let test = (ds.n_test() > 0).then(|| TestSet {
            spec,
            samples: ds.test().clone(),
        });
        Ok(Problem {
            train: TrainTask::from_mlp(mlp),
            test,
        })
    }
}

pub fn load_data(cfg: &DataConfig) -> Result<Dataset, HarnessError> {
    match cfg {
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            n_train,
            n_test,
        } => load_idx_split((train_images, train_labels), (test_images, test_labels), *n_train, *n_test),
        DataConfig::Blobs {
            n_train,
            n_test,
            classes,
            dim,
            seed,
        } => make_blobs(n_train + n_test, *classes, *dim, &mut Rng::new(*seed))?.split_test(*n_test),
    }
}

/// One logged state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub epoch: u64,
    /// Step size of the update leaving iterate `k`.
    pub gamma: f64,
    /// Mean training loss.
    pub j_train: f64,
    pub e_min: Option<f64>,
    pub e_max: Option<f64>,
    pub e: Option<f64>,
    pub residual_s: Option<f64>,
    pub test_acc: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub label: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub gamma0: f64,
    /// SHA-256 of the starting point's little-endian bytes.
    pub theta0_hash: String,
    pub rows: Vec<TraceRow>,
    /// Reason the run stopped early.
    pub failed: Option<String>,
    pub final_theta: ParamVector,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_j(&self) -> Option<f64> {
        self.last().map(|r| r.j_train)
    }

    /// Row at the end of epoch `epoch`, if it was logged.
    pub fn at_epoch_end(&self, epoch: u64, steps_per_epoch: u64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.k == epoch * steps_per_epoch)
    }
}

pub fn hash_params(theta: &ParamVector) -> String {
    let mut h = Sha256::new();
    for v in theta.iter() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Loop settings resolved against a task.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub batch_size: usize,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    pub log_every: u64,
    pub log_epochs: bool,
    pub sampling: Sampling,
    pub residual: bool,
    pub wall_time: bool,
}

impl LoopSettings {
    pub fn resolve(run: &RunConfig, n_terms: usize) -> Result<Self, HarnessError> {
        let batch_size = match run.sampling {
            Sampling::Full => n_terms,
            _ => run.batch_size.unwrap_or(n_terms),
        };
        if batch_size == 0 {
            return Err(HarnessError::Config("batch size must be positive".into()));
        }
        let steps_per_epoch = n_terms.div_ceil(batch_size) as u64;
        let total_steps = match (run.iterations, run.epochs) {
            (Some(i), _) => i,
            (None, Some(e)) => e * steps_per_epoch,
            (None, None) => return Err(HarnessError::Config("run length unset".into())),
        };
        Ok(LoopSettings {
            batch_size,
            steps_per_epoch,
            total_steps,
            log_every: run.log_every,
            log_epochs: run.log_epochs,
            sampling: run.sampling,
            residual: run.residual,
            wall_time: run.record_wall_time,
        })
    }

    /// Logged iterates: 0, multiples of `log_every`, epoch ends when an epoch
    /// spans more than one step, and the final iterate.
    pub fn logs_at(&self, k: u64) -> bool {
        k == 0
            || k == self.total_steps
            || (self.log_every > 0 && k.is_multiple_of(self.log_every))
            || (self.log_epochs && self.steps_per_epoch > 1 && k.is_multiple_of(self.steps_per_epoch))
    }

    pub fn with_total_steps(&self, total_steps: u64) -> Self {
        LoopSettings {
            total_steps,
            ..self.clone()
        }
    }

    /// Logs only the first and last iterate, without diagnostics.
    pub fn quiet(&self) -> Self {
        LoopSettings {
            log_every: 0,
            log_epochs: false,
            residual: false,
            wall_time: false,
            ..self.clone()
        }
    }
}

struct BatchSource {
    sampling: Sampling,
    rng: Rng,
    n_terms: usize,
    batch_size: usize,
    queue: std::vec::IntoIter<Batch>,
}

impl BatchSource {
    fn new(sampling: Sampling, seed: u64, n_terms: usize, batch_size: usize) -> Self {
        BatchSource {
            sampling,
            rng: Rng::new(seed).split(BATCH_STREAM),
            n_terms,
            batch_size,
            queue: Vec::new().into_iter(),
        }
    }

    fn next(&mut self) -> Result<Batch, HarnessError> {
        Ok(match self.sampling {
            Sampling::Full => Batch::full(self.n_terms),
            Sampling::WithReplacement => sample_batch(&mut self.rng, self.n_terms, self.batch_size)?,
            Sampling::WithoutReplacement => match self.queue.next() {
                Some(b) => b,
                None => {
                    self.queue = epoch_batches(&mut self.rng, self.n_terms, self.batch_size)?.into_iter();
                    self.queue.next().expect("nonempty epoch")
                }
            },
        })
    }
}

struct Logger<'a> {
    task: &'a TrainTask,
    test: Option<&'a TestSet>,
    schedule: &'a StepSchedule,
    settings: &'a LoopSettings,
    start: Instant,
}

impl Logger<'_> {
    fn row(&self, opt: &Optimizer, k: u64) -> Result<TraceRow, HarnessError> {
        let theta = opt.theta();
        let (j, sub_norm) = if self.settings.residual {
            let (j, g) = self.task.mean_eval(theta)?;
            (j, Some(g.norm2()))
        } else {
            (self.task.mean_value(theta)?, None)
        };
        let (mut e_min, mut e_max, mut e, mut residual_s) = (None, None, None, None);
        if let (Some(psi), Some(hp)) = (opt.psi(), opt.hyper_params()) {
            let en = lyapunov(theta, psi, j, &hp);
            (e_min, e_max, e) = (Some(en.e_min), Some(en.e_max), Some(en.e));
            residual_s = sub_norm.map(|g| residual_to_s(theta, psi, g, hp.alpha, hp.beta));
        }
        let test_acc = match self.test {
            Some(t) => Some(t.accuracy(theta)?),
            None => None,
        };
        Ok(TraceRow {
            k,
            epoch: k / self.settings.steps_per_epoch,
            gamma: self.schedule.gamma_at(k),
            j_train: j,
            e_min,
            e_max,
            e,
            residual_s,
            test_acc,
            wall_ms: self
                .settings
                .wall_time
                .then(|| self.start.elapsed().as_secs_f64() * 1e3),
        })
    }
}

fn new_trace(kind: &OptimizerKind, schedule: &StepSchedule, seed: u64, theta0: &ParamVector) -> RunTrace {
    RunTrace {
        label: kind.label(),
        optimizer: *kind,
        seed,
        gamma0: schedule.gamma0(),
        theta0_hash: hash_params(theta0),
        rows: Vec::new(),
        failed: None,
        final_theta: theta0.clone(),
    }
}

fn overflow_message(e: &OptimError, k: u64) -> Option<String> {
    match e {
        OptimError::Overflow { index } => Some(format!("non-finite iterate at step {k}, coordinate {index}")),
        _ => None,
    }
}

/// Stochastic loop: each step draws a batch, averages its selection and
/// hands it to the optimizer. The first batch also initializes the state.
pub fn run_stochastic(
    task: &TrainTask,
    test: Option<&TestSet>,
    kind: &OptimizerKind,
    schedule: &StepSchedule,
    theta0: &ParamVector,
    seed: u64,
    settings: &LoopSettings,
) -> Result<RunTrace, HarnessError> {
    let mut trace = new_trace(kind, schedule, seed, theta0);
    let logger = Logger {
        task,
        test,
        schedule,
        settings,
        start: Instant::now(),
    };
    let mut batches = BatchSource::new(settings.sampling, seed, task.n_terms(), settings.batch_size);
    let batch_selection = |batch: &Batch, theta: &ParamVector| -> Result<ParamVector, HarnessError> {
        let ev = task.objective.eval(theta, batch)?;
        Ok(mean_scale(ev.subgrad, batch.len() as f64))
    };
    let mut v = batch_selection(&batches.next()?, theta0)?;
    let mut opt = Optimizer::start(kind, theta0.clone(), &v)?;
    trace.rows.push(logger.row(&opt, 0)?);
    for k in 0..settings.total_steps {
        if k > 0 {
            v = batch_selection(&batches.next()?, opt.theta())?;
        }
        if let Err(e) = opt.step(&v, schedule.gamma_at(k)) {
            match overflow_message(&e, k) {
                Some(m) => {
                    trace.failed = Some(m);
                    break;
                }
                None => return Err(e.into()),
            }
        }
        if settings.logs_at(k + 1) {
            let row = logger.row(&opt, k + 1)?;
            if !row.j_train.is_finite() {
                trace.failed = Some(format!("non-finite training loss at step {}", k + 1));
                break;
            }
            trace.rows.push(row);
        }
    }
    trace.final_theta = opt.theta().clone();
    Ok(trace)
}

/// Full-gradient loop with no batch machinery.
pub fn run_deterministic(
    task: &TrainTask,
    kind: &OptimizerKind,
    schedule: &StepSchedule,
    theta0: &ParamVector,
    settings: &LoopSettings,
) -> Result<RunTrace, HarnessError> {
    let mut trace = new_trace(kind, schedule, 0, theta0);
    let logger = Logger {
        task,
        test: None,
        schedule,
        settings,
        start: Instant::now(),
    };
    let (_, grad0) = task.mean_eval(theta0)?;
    let mut opt = Optimizer::start(kind, theta0.clone(), &grad0)?;
    trace.rows.push(logger.row(&opt, 0)?);
    for k in 0..settings.total_steps {
        let (_, v) = task.mean_eval(opt.theta())?;
        if let Err(e) = opt.step(&v, schedule.gamma_at(k)) {
            match overflow_message(&e, k) {
                Some(m) => {
                    trace.failed = Some(m);
                    break;
                }
                None => return Err(e.into()),
            }
        }
        if settings.logs_at(k + 1) {
            trace.rows.push(logger.row(&opt, k + 1)?);
        }
    }
    trace.final_theta = opt.theta().clone();
    Ok(trace)
}

/// Applies `f` to every item on up to `available_parallelism` threads and
/// returns the results in input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        mine.push((i, f(&items[i])));
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Starting point shared by every optimizer for `seed`.
pub fn theta0_for(task: &TrainTask, run: &RunConfig, seed: u64) -> Result<ParamVector, HarnessError> {
    match &run.theta0 {
        Some(t) if t.len() != task.dim() => Err(HarnessError::Config(format!(
            "run.theta0 has {} coordinates, objective has {}",
            t.len(),
            task.dim()
        ))),
        Some(t) => Ok(ParamVector::from(t.as_slice())),
        None => Ok(task.initial_point(seed)),
    }
}

/// Every (optimizer, seed) pair of the configuration, optimizer-major.
/// A run that overflows is recorded as failed and the others proceed.
pub fn run_experiment(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<RunTrace>, HarnessError> {
    run_with_schedules(cfg, problem, &vec![cfg.schedule; cfg.optimizers.len()])
}

/// [`run_experiment`] with one schedule per optimizer, e.g. after a grid search.
pub fn run_with_schedules(
    cfg: &ExperimentConfig,
    problem: &Problem,
    schedules: &[StepSchedule],
) -> Result<Vec<RunTrace>, HarnessError> {
    let settings = LoopSettings::resolve(&cfg.run, problem.train.n_terms())?;
    let starts = cfg
        .run
        .seeds
        .iter()
        .map(|&s| theta0_for(&problem.train, &cfg.run, s))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.optimizers.len())
        .flat_map(|o| (0..cfg.run.seeds.len()).map(move |s| (o, s)))
        .collect();
    let traces = par_map(&jobs, |&(o, s)| {
        run_stochastic(
            &problem.train,
            problem.test.as_ref(),
            &cfg.optimizers[o],
            &schedules[o],
            &starts[s],
            cfg.run.seeds[s],
            &settings,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    for t in &traces {
        if let Some(m) = &t.failed {
            log::warn!("{} seed {}: {m}", t.label, t.seed);
        }
    }
    check_shared_starts(&traces)?;
    Ok(traces)
}

/// Fails unless every trace with a given seed started from the same point.
pub fn check_shared_starts(traces: &[RunTrace]) -> Result<(), HarnessError> {
    for a in traces {
        for b in traces {
            if a.seed == b.seed && a.theta0_hash != b.theta0_hash {
                return Err(HarnessError::Data(format!(
                    "seed {} started from different points for {} and {}",
                    a.seed, a.label, b.label
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub label: String,
    pub best_gamma0: f64,
    /// Final mean training loss per candidate, `None` when it overflowed.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Runs each candidate γ₀ for `budget_steps` steps from the same start and
/// picks the one with the lowest final training loss; ties go to the smaller
/// candidate. Only the training task is visible here.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_gamma0(
    task: &TrainTask,
    kind: &OptimizerKind,
    schedule: &StepSchedule,
    grid: &[f64],
    budget_steps: u64,
    seed: u64,
    theta0: &ParamVector,
    settings: &LoopSettings,
) -> Result<GridOutcome, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("empty grid".into()));
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let quiet = settings.quiet().with_total_steps(budget_steps);
    let scores: Vec<(f64, Option<f64>)> = par_map(&candidates, |&g| {
        let trace = run_stochastic(task, None, kind, &schedule.with_gamma0(g), theta0, seed, &quiet)?;
        let score = match (&trace.failed, trace.final_j()) {
            (None, Some(j)) if j.is_finite() => Some(j),
            _ => None,
        };
        Ok::<_, HarnessError>((g, score))
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut best: Option<(f64, f64)> = None;
    for &(g, s) in &scores {
        if let Some(j) = s {
            if best.is_none_or(|(_, bj)| j < bj) {
                best = Some((g, j));
            }
        }
    }
    match best {
        Some((g, _)) => Ok(GridOutcome {
            label: kind.label(),
            best_gamma0: g,
            scores,
        }),
        None => Err(HarnessError::GridExhausted { label: kind.label() }),
    }
}

/// Grid search for every optimizer of the configuration.
pub fn run_grid(cfg: &ExperimentConfig, task: &TrainTask) -> Result<Vec<GridOutcome>, HarnessError> {
    let grid = cfg.grid.clone().unwrap_or_default();
    let settings = LoopSettings::resolve(&cfg.run, task.n_terms())?;
    let budget = match (grid.budget_iterations, grid.budget_epochs) {
        (Some(i), _) => i,
        (None, Some(e)) => e * settings.steps_per_epoch,
        (None, None) => settings.total_steps,
    };
    let seed = grid.seed.unwrap_or(cfg.run.seeds[0]);
    let theta0 = theta0_for(task, &cfg.run, seed)?;
    cfg.optimizers
        .iter()
        .map(|kind| grid_search_gamma0(task, kind, &cfg.schedule, &grid.gamma0, budget, seed, &theta0, &settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    fn quad_task() -> TrainTask {
        TrainTask::new(Arc::new(Quadratic::identity(2)))
    }

    fn settings(total: u64) -> LoopSettings {
        LoopSettings {
            batch_size: 1,
            steps_per_epoch: 1,
            total_steps: total,
            log_every: 10,
            log_epochs: true,
            sampling: Sampling::Full,
            residual: true,
            wall_time: false,
        }
    }

    const BLOBS: &str = r#"
[objective]
kind = "mlp"
hidden = [8]
data = { kind = "blobs", n_train = 60, n_test = 20, classes = 3, dim = 4, seed = 5 }

[[optimizers]]
name = "indian"

[[optimizers]]
name = "sgd"

[schedule]
kind = "power_decay"
gamma0 = 0.05
q = 0.5

[run]
batch_size = 8
epochs = 3
seeds = [1, 2]
log_every = 5
"#;

    #[test]
    fn logging_schedule() {
        let s = LoopSettings {
            steps_per_epoch: 7,
            total_steps: 23,
            ..settings(23)
        };
        let ks: Vec<u64> = (0..=23).filter(|&k| s.logs_at(k)).collect();
        assert_eq!(ks, vec![0, 7, 10, 14, 20, 21, 23]);
        let single = settings(25);
        assert_eq!((0..=25).filter(|&k| single.logs_at(k)).count(), 4);
    }

    #[test]
    fn rows_strictly_increasing_in_k() {
        let cfg = ExperimentConfig::from_toml_str(BLOBS).unwrap();
        let p = Problem::from_config(&cfg.objective).unwrap();
        let traces = run_experiment(&cfg, &p).unwrap();
        assert_eq!(traces.len(), 4);
        for t in &traces {
            assert!(t.rows.windows(2).all(|w| w[0].k < w[1].k));
            assert!(t.rows.iter().all(|r| r.test_acc.is_some()));
            assert_eq!(t.last().unwrap().k, 24);
        }
    }

    #[test]
    fn optimizers_share_start_per_seed() {
        let cfg = ExperimentConfig::from_toml_str(BLOBS).unwrap();
        let p = Problem::from_config(&cfg.objective).unwrap();
        let traces = run_experiment(&cfg, &p).unwrap();
        assert_eq!(traces[0].theta0_hash, traces[2].theta0_hash);
        assert_eq!(traces[1].theta0_hash, traces[3].theta0_hash);
        assert_ne!(traces[0].theta0_hash, traces[1].theta0_hash);
        let mut bad = traces.clone();
        bad[2].theta0_hash = "x".into();
        assert!(check_shared_starts(&bad).is_err());
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let cfg = ExperimentConfig::from_toml_str(BLOBS).unwrap();
        let p = Problem::from_config(&cfg.objective).unwrap();
        assert_eq!(run_experiment(&cfg, &p).unwrap(), run_experiment(&cfg, &p).unwrap());
    }

    #[test]
    fn full_batch_matches_deterministic_runner() {
        let task = quad_task();
        let kind = OptimizerKind::indian(0.5, 0.1);
        let sched = StepSchedule::PowerDecay { gamma0: 0.1, q: 0.5 };
        let theta0 = ParamVector::new(vec![1.0, -2.0]);
        let s = settings(1000);
        let a = run_stochastic(&task, None, &kind, &sched, &theta0, 0, &s).unwrap();
        let b = run_deterministic(&task, &kind, &sched, &theta0, &s).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_theta, b.final_theta);
    }

    #[test]
    fn overflow_is_recorded_not_raised() {
        let task = quad_task();
        let s = settings(5000);
        let t = run_stochastic(
            &task,
            None,
            &OptimizerKind::Sgd,
            &StepSchedule::Constant { gamma: 10.0 },
            &ParamVector::new(vec![1.0, 1.0]),
            0,
            &s,
        )
        .unwrap();
        assert!(t.failed.is_some());
        assert!(t.rows.iter().all(|r| r.j_train.is_finite()));
    }

    #[test]
    fn grid_single_element() {
        let task = quad_task();
        let t0 = ParamVector::new(vec![1.0, 1.0]);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let out = grid_search_gamma0(&task, &OptimizerKind::Sgd, &sched, &[0.3], 10, 0, &t0, &settings(10)).unwrap();
        assert_eq!(out.best_gamma0, 0.3);
    }

    #[test]
    fn grid_rejects_divergent_step() {
        let task = quad_task();
        let t0 = ParamVector::new(vec![1.0, 1.0]);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let out =
            grid_search_gamma0(&task, &OptimizerKind::Sgd, &sched, &[10.0, 1e-3, 1e-1], 1000, 0, &t0, &settings(1000))
                .unwrap();
        assert_eq!(out.best_gamma0, 1e-1);
        assert_eq!(out.scores[2], (10.0, None));
    }

    #[test]
    fn grid_tie_prefers_smaller_step() {
        // a steady start never moves, so every candidate scores the same
        let task = quad_task();
        let t0 = ParamVector::zeros(2);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let out = grid_search_gamma0(&task, &OptimizerKind::Sgd, &sched, &[0.5, 0.2, 0.9], 10, 0, &t0, &settings(10))
            .unwrap();
        assert_eq!(out.best_gamma0, 0.2);
    }

    #[test]
    fn grid_all_overflow_is_an_error() {
        let task = quad_task();
        let t0 = ParamVector::new(vec![1.0, 1.0]);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let err = grid_search_gamma0(&task, &OptimizerKind::Sgd, &sched, &[50.0, 100.0], 2000, 0, &t0, &settings(2000))
            .unwrap_err();
        assert!(matches!(err, HarnessError::GridExhausted { .. }));
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..37).collect();
        assert_eq!(par_map(&xs, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
    }
}
