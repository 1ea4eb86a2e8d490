//! Dense vector arithmetic and a reproducible random stream.
//!
//! All reductions run strictly left to right so that two runs which perform
//! the same sequence of operations produce bitwise identical results.

use std::fmt;
use std::ops::Index;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite value at coordinate {index}")]
    Overflow { index: usize },
}

/// Flat vector of optimization parameters.
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(data: Vec<f64>) -> Self {
        ParamVector(data)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    /// The `index`-th canonical basis vector of length `len`.
    pub fn basis(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        ParamVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// First non-finite coordinate, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|x| !x.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), NumError> {
        match self.first_non_finite() {
            Some(index) => Err(NumError::Overflow { index }),
            None => Ok(()),
        }
    }

    pub fn neg(&self) -> ParamVector {
        ParamVector(self.0.iter().map(|x| -x).collect())
    }

    pub fn scale(&self, a: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| a * x).collect())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64, NumError> {
        dot(self, other)
    }

    pub fn norm2(&self) -> f64 {
        norm2(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(v: &[f64]) -> Self {
        ParamVector(v.to_vec())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), NumError> {
    if a.len() != b.len() {
        return Err(NumError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Sequential sum of products.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64, NumError> {
    dot_slices(a.as_slice(), b.as_slice())
}

pub fn dot_slices(a: &[f64], b: &[f64]) -> Result<f64, NumError> {
    same_len(a, b)?;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    Ok(acc)
}

/// Elementwise `a * x + b * y`.
pub fn axpby(a: f64, x: &ParamVector, b: f64, y: &ParamVector) -> Result<ParamVector, NumError> {
    same_len(x.as_slice(), y.as_slice())?;
    let out: Vec<f64> = x.iter().zip(y.iter()).map(|(xi, yi)| a * xi + b * yi).collect();
    let out = ParamVector(out);
    out.check_finite()?;
    Ok(out)
}

/// Euclidean norm, accumulated left to right.
pub fn norm2(x: &ParamVector) -> f64 {
    norm2_slice(x.as_slice())
}

pub fn norm2_slice(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
    }
    acc.sqrt()
}

/// Seeded random stream backed by a counter-mode ChaCha generator.
///
/// Independent streams are derived with [`Rng::split`]; a child depends only
/// on the parent seed and the stream id, never on how many draws the parent
/// has made.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `stream` of this seed.
    pub fn split(&self, stream: u64) -> Rng {
        let mut inner = ChaCha12Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
