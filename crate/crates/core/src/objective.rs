//! Finite-sum objectives and their subgradient oracles.
//!
//! An objective is a sum of `N` terms `J = J_1 + ... + J_N`. Evaluating it on a
//! batch returns the sum of the selected terms' values together with the sum
//! of one subgradient selection per term. That per-term sum is what
//! backpropagation computes on a mini-batch, and it can be strictly larger
//! than the Clarke subdifferential of the sum at nonsmooth points.
//!
//! Kinks use the selection `sign(0) = 0` (and `relu'(0) = 0` in [`crate::autodiff`]).

use std::sync::Arc;

use thiserror::Error;

use crate::numkit::{norm2_slice, NumError, ParamVector, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("expected parameter dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("batch index {index} out of range for {n_terms} terms")]
    IndexOutOfRange { index: usize, n_terms: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Value and one selected subgradient of an objective on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub subgrad: ParamVector,
}

/// Ordered multiset of term indices, `0..n_terms`. Duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch(Vec<usize>);

impl Batch {
    pub fn new(indices: Vec<usize>, n_terms: usize) -> Result<Self, ObjectiveError> {
        if indices.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= n_terms) {
            return Err(ObjectiveError::IndexOutOfRange { index, n_terms });
        }
        Ok(Batch(indices))
    }

    /// Every index exactly once, in increasing order.
    pub fn full(n_terms: usize) -> Self {
        Batch((0..n_terms).collect())
    }

    pub fn singleton(index: usize) -> Self {
        Batch(vec![index])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `batch_size` independent uniform draws from `0..n_total`, with replacement,
/// kept in draw order.
pub fn sample_batch(rng: &mut Rng, n_total: usize, batch_size: usize) -> Result<Batch, ObjectiveError> {
    if n_total == 0 || batch_size == 0 {
        return Err(ObjectiveError::Argument(format!(
            "n_total and batch_size must be positive (got {n_total}, {batch_size})"
        )));
    }
    let indices = (0..batch_size).map(|_| rng.below(n_total)).collect();
    Ok(Batch(indices))
}

/// Shuffled pass over `0..n_total` cut into consecutive batches. The last batch
/// may be short.
pub fn epoch_batches(rng: &mut Rng, n_total: usize, batch_size: usize) -> Result<Vec<Batch>, ObjectiveError> {
    if n_total == 0 || batch_size == 0 {
        return Err(ObjectiveError::Argument(format!(
            "n_total and batch_size must be positive (got {n_total}, {batch_size})"
        )));
    }
    let mut order: Vec<usize> = (0..n_total).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).map(|c| Batch(c.to_vec())).collect())
}

/// Subgradient oracle of a finite-sum objective.
pub trait Objective: Send + Sync {
    /// Parameter dimension `P`.
    fn dim(&self) -> usize;

    /// Number of terms `N`.
    fn n_terms(&self) -> usize;

    /// Adds the selection of term `n` at `theta` into `grad` and returns the
    /// term's value. Implementations must add exactly one contribution per
    /// parameter coordinate.
    fn accumulate_term(&self, n: usize, theta: &[f64], grad: &mut [f64]) -> f64;

    /// Analytic minimum of the full objective, when known.
    fn known_minimum(&self) -> Option<f64> {
        None
    }

    fn eval(&self, theta: &ParamVector, batch: &Batch) -> Result<Evaluation, ObjectiveError> {
        check_dim(self.dim(), theta)?;
        let n_terms = self.n_terms();
        let mut grad = vec![0.0; self.dim()];
        let mut value = 0.0;
        for &n in batch.indices() {
            if n >= n_terms {
                return Err(ObjectiveError::IndexOutOfRange { index: n, n_terms });
            }
            value += self.accumulate_term(n, theta.as_slice(), &mut grad);
        }
        Ok(Evaluation {
            value,
            subgrad: ParamVector::new(grad),
        })
    }

    /// Deterministic full objective, every term once in index order.
    fn eval_full(&self, theta: &ParamVector) -> Result<Evaluation, ObjectiveError> {
        self.eval(theta, &Batch::full(self.n_terms()))
    }

    fn value_full(&self, theta: &ParamVector) -> Result<f64, ObjectiveError> {
        Ok(self.eval_full(theta)?.value)
    }
}

impl<T: Objective + ?Sized> Objective for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_terms(&self) -> usize {
        (**self).n_terms()
    }
    fn accumulate_term(&self, n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).accumulate_term(n, theta, grad)
    }
    fn known_minimum(&self) -> Option<f64> {
        (**self).known_minimum()
    }
    fn eval(&self, theta: &ParamVector, batch: &Batch) -> Result<Evaluation, ObjectiveError> {
        (**self).eval(theta, batch)
    }
}

fn check_dim(expected: usize, theta: &ParamVector) -> Result<(), ObjectiveError> {
    if theta.len() != expected {
        return Err(ObjectiveError::Dimension {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

/// `sign` with the selection `sign(0) = 0`.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of single-term objectives sharing a dimension.
pub struct FiniteSum {
    dim: usize,
    terms: Vec<Arc<dyn Objective>>,
}

impl FiniteSum {
    pub fn new(terms: Vec<Arc<dyn Objective>>) -> Result<Self, ObjectiveError> {
        let first = terms
            .first()
            .ok_or_else(|| ObjectiveError::Argument("finite sum needs at least one term".into()))?;
        let dim = first.dim();
        for t in &terms {
            if t.dim() != dim {
                return Err(ObjectiveError::Dimension {
                    expected: dim,
                    got: t.dim(),
                });
            }
            if t.n_terms() != 1 {
                return Err(ObjectiveError::Argument("finite sum terms must be single-term objectives".into()));
            }
        }
        Ok(FiniteSum { dim, terms })
    }
}

impl Objective for FiniteSum {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_terms(&self) -> usize {
        self.terms.len()
    }
    fn accumulate_term(&self, n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.terms[n].accumulate_term(0, theta, grad)
    }
}

/// `J(θ₁, θ₂) = 100 (θ₂ − |θ₁|)² + |1 − θ₁|`, a V-shaped valley with its only
/// critical point, the global minimum, at `(1, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RosenbrockNs;

impl RosenbrockNs {
    pub fn value_at(theta: &[f64]) -> f64 {
        let gap = theta[1] - theta[0].abs();
        100.0 * gap * gap + (1.0 - theta[0]).abs()
    }

    /// Single-shot evaluation; rejects anything but a 2-vector.
    pub fn evaluate(theta: &ParamVector) -> Result<Evaluation, ObjectiveError> {
        RosenbrockNs.eval(theta, &Batch::singleton(0))
    }
}

impl Objective for RosenbrockNs {
    fn dim(&self) -> usize {
        2
    }
    fn n_terms(&self) -> usize {
        1
    }
    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }
    fn accumulate_term(&self, _n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (t1, t2) = (theta[0], theta[1]);
        let gap = t2 - t1.abs();
        grad[0] += -200.0 * gap * sign0(t1) - sign0(1.0 - t1);
        grad[1] += 200.0 * gap;
        Self::value_at(theta)
    }
}

/// One-dimensional `J(t) = |t|^c` with `c > 1`.
#[derive(Debug, Clone, Copy)]
pub struct PowerAbs {
    c: f64,
}

impl PowerAbs {
    pub fn new(c: f64) -> Result<Self, ObjectiveError> {
        if !(c > 1.0) || !c.is_finite() {
            return Err(ObjectiveError::Argument(format!("power_abs needs c > 1, got {c}")));
        }
        Ok(PowerAbs { c })
    }

    pub fn exponent(&self) -> f64 {
        self.c
    }
}

impl Objective for PowerAbs {
    fn dim(&self) -> usize {
        1
    }
    fn n_terms(&self) -> usize {
        1
    }
    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }
    fn accumulate_term(&self, _n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        let t = theta[0];
        let a = t.abs();
        grad[0] += self.c * a.powf(self.c - 1.0) * sign0(t);
        a.powf(self.c)
    }
}

/// `J(θ) = ½ θᵀQθ − bᵀθ` with dense symmetric `Q`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    n: usize,
    q: Vec<f64>,
    b: Vec<f64>,
    minimum: Option<f64>,
}

impl Quadratic {
    /// `q` is row-major `n × n`. Only symmetry is checked; positive
    /// semidefiniteness is the caller's responsibility.
    pub fn new(q: Vec<f64>, b: Vec<f64>) -> Result<Self, ObjectiveError> {
        let n = b.len();
        if q.len() != n * n {
            return Err(ObjectiveError::Argument(format!(
                "Q has {} entries, expected {}",
                q.len(),
                n * n
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if q[i * n + j] != q[j * n + i] {
                    return Err(ObjectiveError::Argument(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || q[i * n + j] == 0.0));
        // -½ bᵀQ⁻¹b, only tracked for positive diagonal Q
        let minimum = if is_diag && (0..n).all(|i| q[i * n + i] > 0.0) {
            Some(-0.5 * (0..n).map(|i| b[i] * b[i] / q[i * n + i]).sum::<f64>())
        } else {
            None
        };
        Ok(Quadratic { n, q, b, minimum })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Result<Self, ObjectiveError> {
        let n = diag.len();
        let mut q = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            q[i * n + i] = *d;
        }
        Self::new(q, b)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n], vec![0.0; n]).expect("identity is symmetric")
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }
    fn n_terms(&self) -> usize {
        1
    }
    fn known_minimum(&self) -> Option<f64> {
        self.minimum
    }
    fn accumulate_term(&self, _n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n;
        let mut value = 0.0;
        for i in 0..n {
            let row = &self.q[i * n..(i + 1) * n];
            let mut qx = 0.0;
            for (qij, xj) in row.iter().zip(theta) {
                qx += qij * xj;
            }
            grad[i] += qx - self.b[i];
            value += 0.5 * theta[i] * qx - self.b[i] * theta[i];
        }
        value
    }
}

/// Distance of `(θ, ψ)` to the steady-state set, given the norm of a
/// subgradient selection at `θ`: `‖v‖ + ‖ψ − (1 − αβ)θ‖`.
pub fn residual_to_s(theta: &ParamVector, psi: &ParamVector, subgrad_norm: f64, alpha: f64, beta: f64) -> f64 {
    let shift = 1.0 - alpha * beta;
    let offset: Vec<f64> = psi.iter().zip(theta.iter()).map(|(p, t)| p - shift * t).collect();
    subgrad_norm + norm2_slice(&offset)
}
