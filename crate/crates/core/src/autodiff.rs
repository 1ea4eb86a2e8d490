//! Reverse-mode differentiation for small multilayer perceptrons.
//!
//! A forward pass records a [`Tape`] of vector-valued nodes (affine maps,
//! activations, output transform and loss). The backward pass walks the tape
//! in reverse and accumulates the parameter selection. Nonsmooth points use
//! `relu'(0) = 0` and zero slope on clamped softmax coordinates.
//!
//! Parameters are packed layer by layer; each layer stores its weight matrix
//! (`out × in`, row-major) followed by its bias vector.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{ParamVector, Rng};
use crate::objective::{Batch, Objective};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("expected {expected} values for {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputTransform {
    /// Softmax with every coordinate clamped below at `eps`.
    SoftmaxClamped { eps: f64 },
    Identity,
}

pub const DEFAULT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `−log f_d` at the hot index `d` of a one-hot target.
    CrossEntropy,
    /// `Σ_d (f_d − y_d)²`
    Mse,
}

/// Layer widths `[M, h₁, …, D]` with one activation per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    output: OutputTransform,
    offsets: Vec<usize>,
    n_params: usize,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, output: OutputTransform) -> Result<Self, AutodiffError> {
        if widths.len() < 2 {
            return Err(AutodiffError::Spec("need at least input and output widths".into()));
        }
        if widths.contains(&0) {
            return Err(AutodiffError::Spec("layer widths must be positive".into()));
        }
        if activations.len() != widths.len() - 2 {
            return Err(AutodiffError::Spec(format!(
                "{} hidden layers but {} activations",
                widths.len() - 2,
                activations.len()
            )));
        }
        if let OutputTransform::SoftmaxClamped { eps } = output {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(AutodiffError::Spec(format!("clamp must lie in (0, 1), got {eps}")));
            }
        }
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut n = 0;
        for w in widths.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Ok(MlpSpec {
            widths,
            activations,
            output,
            offsets,
            n_params: n,
        })
    }

    /// `M → hidden → D` with one shared hidden activation.
    pub fn uniform(widths: Vec<usize>, activation: Activation, output: OutputTransform) -> Result<Self, AutodiffError> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![activation; hidden], output)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output(&self) -> OutputTransform {
        self.output
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }

    /// `(weights, bias)` ranges of `layer` inside the packed parameter vector.
    pub fn layer_ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let w0 = self.offsets[layer];
        let b0 = w0 + fan_in * fan_out;
        (w0..b0, b0..b0 + fan_out)
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut theta = vec![0.0; self.n_params];
        for layer in 0..self.n_layers() {
            let (w, _) = self.layer_ranges(layer);
            let std = 1.0 / (self.widths[layer] as f64).sqrt();
            for x in &mut theta[w] {
                *x = std * rng.normal();
            }
        }
        ParamVector::new(theta)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), AutodiffError> {
        if theta.len() != self.n_params {
            return Err(AutodiffError::Dimension {
                what: "parameters",
                expected: self.n_params,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// One (features, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Sample { x, y }
    }

    /// One-hot target of length `classes`.
    pub fn classified(x: Vec<f64>, label: usize, classes: usize) -> Self {
        let mut y = vec![0.0; classes];
        y[label] = 1.0;
        Sample { x, y }
    }

    /// Index of the largest target coordinate.
    pub fn label(&self) -> usize {
        argmax(&self.y)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Affine { layer: usize },
    Act(Activation),
    SoftmaxClamped { eps: f64 },
    CrossEntropy { hot: usize },
    Mse { target: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub input: Option<usize>,
    pub value: Vec<f64>,
    /// Unclamped softmax probabilities for `SoftmaxClamped`.
    aux: Vec<f64>,
}

/// Topologically ordered record of a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Vec<f64>>,
}

impl Tape {
    fn push(&mut self, op: Op, input: Option<usize>, value: Vec<f64>, aux: Vec<f64>) -> usize {
        self.nodes.push(Node { op, input, value, aux });
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> &[f64] {
        &self.nodes.last().expect("tape has nodes").value
    }

    /// Adjoint of each node after the last backward pass (empty before).
    pub fn adjoints(&self) -> &[Vec<f64>] {
        &self.adjoints
    }

    /// Pre-activation values feeding each rectifier, in forward order.
    pub fn relu_preactivations(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.iter().filter_map(move |n| match n.op {
            Op::Act(Activation::Relu) => n.input.map(|i| self.nodes[i].value.as_slice()),
            _ => None,
        })
    }

    /// Reverse sweep seeded with `seed` at the last node. Parameter
    /// contributions are added into `grad`; the input adjoint is not formed.
    pub fn backward(&mut self, spec: &MlpSpec, theta: &[f64], seed: &[f64], grad: &mut [f64]) {
        let n = self.nodes.len();
        self.adjoints = self.nodes.iter().map(|node| vec![0.0; node.value.len()]).collect();
        self.adjoints[n - 1].copy_from_slice(seed);
        for id in (0..n).rev() {
            let Some(src) = self.nodes[id].input else {
                continue;
            };
            let (before, after) = self.adjoints.split_at_mut(id);
            let g_out = &after[0];
            let g_in = &mut before[src];
            let node = &self.nodes[id];
            let x = &self.nodes[src].value;
            match &node.op {
                Op::Input => {}
                Op::Affine { layer } => {
                    let (wr, br) = spec.layer_ranges(*layer);
                    let fan_in = x.len();
                    let w = &theta[wr.clone()];
                    let (gw_all, gb_all) = grad.split_at_mut(br.start);
                    let gw = &mut gw_all[wr.start..];
                    let gb = &mut gb_all[..br.len()];
                    let need_input = src != 0;
                    for (i, &gi) in g_out.iter().enumerate() {
                        gb[i] += gi;
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * fan_in..(i + 1) * fan_in];
                        for (r, xj) in row.iter_mut().zip(x) {
                            *r += gi * xj;
                        }
                        if need_input {
                            let wrow = &w[i * fan_in..(i + 1) * fan_in];
                            for (a, wij) in g_in.iter_mut().zip(wrow) {
                                *a += gi * wij;
                            }
                        }
                    }
                }
                Op::Act(act) => {
                    let y = &node.value;
                    for j in 0..g_in.len() {
                        g_in[j] += g_out[j]
                            * match act {
                                Activation::Relu => {
                                    if x[j] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Activation::Tanh => 1.0 - y[j] * y[j],
                                Activation::Sigmoid => y[j] * (1.0 - y[j]),
                                Activation::Identity => 1.0,
                            };
                    }
                }
                Op::SoftmaxClamped { eps } => {
                    let p = &node.aux;
                    let mut gp = vec![0.0; p.len()];
                    for j in 0..p.len() {
                        if p[j] >= *eps {
                            gp[j] = g_out[j];
                        }
                    }
                    let mut inner = 0.0;
                    for j in 0..p.len() {
                        inner += gp[j] * p[j];
                    }
                    for j in 0..p.len() {
                        g_in[j] += p[j] * (gp[j] - inner);
                    }
                }
                Op::CrossEntropy { hot } => {
                    g_in[*hot] += -g_out[0] / x[*hot];
                }
                Op::Mse { target } => {
                    for j in 0..g_in.len() {
                        g_in[j] += g_out[0] * 2.0 * (x[j] - target[j]);
                    }
                }
            }
        }
    }
}

fn affine(spec: &MlpSpec, theta: &[f64], layer: usize, x: &[f64]) -> Vec<f64> {
    let (wr, br) = spec.layer_ranges(layer);
    let fan_in = x.len();
    let w = &theta[wr];
    let b = &theta[br];
    let mut y = b.to_vec();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * fan_in..(i + 1) * fan_in];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x) {
            acc += wij * xj;
        }
        *yi += acc;
    }
    y
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|&v| match act {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let mut s = 0.0;
    for v in &e {
        s += v;
    }
    e.into_iter().map(|v| v / s).collect()
}

/// Forward pass recording a tape. The last tape node is the network output.
pub fn forward(spec: &MlpSpec, theta: &ParamVector, x: &[f64]) -> Result<(Vec<f64>, Tape), AutodiffError> {
    spec.check_theta(theta.as_slice())?;
    if x.len() != spec.input_dim() {
        return Err(AutodiffError::Dimension {
            what: "features",
            expected: spec.input_dim(),
            got: x.len(),
        });
    }
    let tape = record(spec, theta.as_slice(), x);
    Ok((tape.output().to_vec(), tape))
}

fn record(spec: &MlpSpec, theta: &[f64], x: &[f64]) -> Tape {
    let mut tape = Tape::default();
    let mut cur = tape.push(Op::Input, None, x.to_vec(), Vec::new());
    for layer in 0..spec.n_layers() {
        let z = affine(spec, theta, layer, &tape.nodes[cur].value);
        cur = tape.push(Op::Affine { layer }, Some(cur), z, Vec::new());
        if layer < spec.activations.len() {
            let act = spec.activations[layer];
            let y = activate(act, &tape.nodes[cur].value);
            cur = tape.push(Op::Act(act), Some(cur), y, Vec::new());
        }
    }
    if let OutputTransform::SoftmaxClamped { eps } = spec.output {
        let p = softmax(&tape.nodes[cur].value);
        let out = p.iter().map(|&v| v.max(eps)).collect();
        tape.push(Op::SoftmaxClamped { eps }, Some(cur), out, p);
    }
    tape
}

fn check_sample(spec: &MlpSpec, s: &Sample) -> Result<(), AutodiffError> {
    if s.x.len() != spec.input_dim() {
        return Err(AutodiffError::Dimension {
            what: "features",
            expected: spec.input_dim(),
            got: s.x.len(),
        });
    }
    if s.y.len() != spec.output_dim() {
        return Err(AutodiffError::Dimension {
            what: "target",
            expected: spec.output_dim(),
            got: s.y.len(),
        });
    }
    Ok(())
}

/// Loss of one sample; its selection is added into `grad`.
pub fn sample_loss_into(spec: &MlpSpec, theta: &[f64], sample: &Sample, loss: Loss, grad: &mut [f64]) -> f64 {
    let mut tape = record(spec, theta, &sample.x);
    let out = tape.nodes.len() - 1;
    let (op, value) = match loss {
        Loss::CrossEntropy => {
            let hot = sample.label();
            (Op::CrossEntropy { hot }, -tape.nodes[out].value[hot].ln())
        }
        Loss::Mse => {
            let mut acc = 0.0;
            for (f, y) in tape.nodes[out].value.iter().zip(&sample.y) {
                acc += (f - y) * (f - y);
            }
            (Op::Mse { target: sample.y.clone() }, acc)
        }
    };
    tape.push(op, Some(out), vec![value], Vec::new());
    tape.backward(spec, theta, &[1.0], grad);
    value
}

/// Sum of per-sample losses and sum of per-sample selections, in batch order.
pub fn loss_and_grad(
    spec: &MlpSpec,
    theta: &ParamVector,
    batch: &[Sample],
    loss: Loss,
) -> Result<(f64, ParamVector), AutodiffError> {
    spec.check_theta(theta.as_slice())?;
    if batch.is_empty() {
        return Err(AutodiffError::EmptyBatch);
    }
    let mut grad = vec![0.0; spec.n_params()];
    let mut value = 0.0;
    for s in batch {
        check_sample(spec, s)?;
        value += sample_loss_into(spec, theta.as_slice(), s, loss, &mut grad);
    }
    Ok((value, ParamVector::new(grad)))
}

/// Loss without gradient.
pub fn loss_value(spec: &MlpSpec, theta: &ParamVector, batch: &[Sample], loss: Loss) -> Result<f64, AutodiffError> {
    spec.check_theta(theta.as_slice())?;
    let mut value = 0.0;
    for s in batch {
        check_sample(spec, s)?;
        let tape = record(spec, theta.as_slice(), &s.x);
        let f = tape.output();
        value += match loss {
            Loss::CrossEntropy => -f[s.label()].ln(),
            Loss::Mse => f.iter().zip(&s.y).map(|(a, b)| (a - b) * (a - b)).sum(),
        };
    }
    Ok(value)
}

/// Smallest |pre-activation| over every rectifier unit and sample.
pub fn relu_margin(spec: &MlpSpec, theta: &ParamVector, batch: &[Sample]) -> f64 {
    let mut m = f64::INFINITY;
    for s in batch {
        let tape = record(spec, theta.as_slice(), &s.x);
        for z in tape.relu_preactivations() {
            for v in z {
                m = m.min(v.abs());
            }
        }
    }
    m
}

/// Largest coordinate-wise relative gap between the reverse-mode selection
/// and a central difference with step `h`. Coordinates whose gradient is
/// below `1e-6` in magnitude are compared on an absolute `1e-6` scale.
pub fn grad_check(spec: &MlpSpec, theta: &ParamVector, batch: &[Sample], loss: Loss, h: f64) -> Result<f64, AutodiffError> {
    let (_, g) = loss_and_grad(spec, theta, batch, loss)?;
    let mut probe = theta.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = theta[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = loss_value(spec, &probe, batch, loss)?;
        probe.as_mut_slice()[i] = orig - h;
        let down = loss_value(spec, &probe, batch, loss)?;
        probe.as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((g[i] - fd).abs() / denom);
    }
    Ok(worst)
}

/// Fraction of samples whose largest output matches the target label.
pub fn accuracy(spec: &MlpSpec, theta: &ParamVector, samples: &[Sample]) -> Result<f64, AutodiffError> {
    spec.check_theta(theta.as_slice())?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in samples {
        check_sample(spec, s)?;
        let tape = record(spec, theta.as_slice(), &s.x);
        if argmax(tape.output()) == s.label() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Empirical loss of a network over a sample set, one term per sample.
#[derive(Clone)]
pub struct MlpObjective {
    spec: MlpSpec,
    loss: Loss,
    samples: Arc<Vec<Sample>>,
}

impl MlpObjective {
    pub fn new(spec: MlpSpec, loss: Loss, samples: Arc<Vec<Sample>>) -> Result<Self, AutodiffError> {
        for s in samples.iter() {
            check_sample(&spec, s)?;
        }
        Ok(MlpObjective { spec, loss, samples })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn batch_samples(&self, batch: &Batch) -> Vec<Sample> {
        batch.indices().iter().map(|&i| self.samples[i].clone()).collect()
    }
}

impl Objective for MlpObjective {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }
    fn n_terms(&self) -> usize {
        self.samples.len()
    }
    fn accumulate_term(&self, n: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        sample_loss_into(&self.spec, theta, &self.samples[n], self.loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], vec![], OutputTransform::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], vec![Activation::Relu], OutputTransform::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 4, 2], vec![], OutputTransform::Identity).is_err());
        assert!(MlpSpec::uniform(vec![3, 4, 2], Activation::Relu, OutputTransform::SoftmaxClamped { eps: 1.0 }).is_err());
        let s = MlpSpec::uniform(vec![3, 4, 2], Activation::Relu, OutputTransform::Identity).unwrap();
        assert_eq!(s.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(s.layer_ranges(1), (16..24, 24..26));
    }

    #[test]
    fn identity_network_reproduces_input() {
        let spec = MlpSpec::uniform(vec![3, 3, 3], Activation::Identity, OutputTransform::Identity).unwrap();
        let mut theta = vec![0.0; spec.n_params()];
        for layer in 0..2 {
            let (w, _) = spec.layer_ranges(layer);
            for i in 0..3 {
                theta[w.start + i * 3 + i] = 1.0;
            }
        }
        let x = [0.5, -2.0, 7.25];
        let (out, _) = forward(&spec, &pv(&theta), &x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn dead_relu_layer_outputs_zeros() {
        let spec = MlpSpec::uniform(vec![2, 3, 1], Activation::Relu, OutputTransform::Identity).unwrap();
        let mut theta = vec![0.0; spec.n_params()];
        let (_, b) = spec.layer_ranges(0);
        for i in b {
            theta[i] = -1.0;
        }
        let (_, tape) = forward(&spec, &pv(&theta), &[0.1, 0.2]).unwrap();
        let hidden = &tape.nodes()[2];
        assert_eq!(hidden.op, Op::Act(Activation::Relu));
        assert_eq!(hidden.value, vec![0.0; 3]);
    }

    #[test]
    fn hand_evaluated_tanh_network() {
        // 2-2-2 tanh, identity output
        let spec = MlpSpec::uniform(vec![2, 2, 2], Activation::Tanh, OutputTransform::Identity).unwrap();
        let theta = [0.5, -0.25, 1.0, 0.75, 0.1, -0.2, 1.5, -1.0, 0.3, 2.0, 0.05, -0.05];
        let x = [0.4, -0.8];
        let h0 = (0.5 * 0.4 + -0.25 * -0.8 + 0.1f64).tanh();
        let h1 = (1.0 * 0.4 + 0.75 * -0.8 - 0.2f64).tanh();
        let o0 = 1.5 * h0 - 1.0 * h1 + 0.05;
        let o1 = 0.3 * h0 + 2.0 * h1 - 0.05;
        let (out, _) = forward(&spec, &pv(&theta), &x).unwrap();
        assert!((out[0] - o0).abs() < 1e-12 && (out[1] - o1).abs() < 1e-12);
    }

    #[test]
    fn forward_dimension_errors() {
        let spec = MlpSpec::uniform(vec![2, 2, 2], Activation::Tanh, OutputTransform::Identity).unwrap();
        assert!(forward(&spec, &pv(&[0.0; 3]), &[0.0, 0.0]).is_err());
        assert!(forward(&spec, &ParamVector::zeros(12), &[0.0]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_cross_entropy() {
        // zero hidden layer, huge logit on class 1
        let spec = MlpSpec::new(vec![1, 2], vec![], OutputTransform::SoftmaxClamped { eps: 1e-12 }).unwrap();
        let theta = pv(&[0.0, 0.0, -800.0, 800.0]);
        let s = Sample::classified(vec![1.0], 1, 2);
        let (v, g) = loss_and_grad(&spec, &theta, &[s], Loss::CrossEntropy).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn mse_at_target_is_zero() {
        let spec = MlpSpec::new(vec![2, 2], vec![], OutputTransform::Identity).unwrap();
        let theta = pv(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = Sample::new(vec![0.3, -0.6], vec![0.3, -0.6]);
        let (v, g) = loss_and_grad(&spec, &theta, &[s], Loss::Mse).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn scalar_linear_mse_hand_gradient() {
        let spec = MlpSpec::new(vec![1, 1], vec![], OutputTransform::Identity).unwrap();
        let (w, b, x, y) = (0.7, -0.2, 1.5, 2.0);
        let r: f64 = w * x + b - y;
        let (v, g) = loss_and_grad(&spec, &pv(&[w, b]), &[Sample::new(vec![x], vec![y])], Loss::Mse).unwrap();
        assert!((v - r * r).abs() < 1e-15);
        assert!((g[0] - 2.0 * x * r).abs() < 1e-15);
        assert!((g[1] - 2.0 * r).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let spec = MlpSpec::new(vec![1, 1], vec![], OutputTransform::Identity).unwrap();
        assert_eq!(loss_and_grad(&spec, &pv(&[0.0, 0.0]), &[], Loss::Mse), Err(AutodiffError::EmptyBatch));
    }

    #[test]
    fn relu_at_zero_contributes_nothing() {
        // every pre-activation exactly zero: zero weights and biases in layer 0
        let spec = MlpSpec::uniform(vec![2, 3, 1], Activation::Relu, OutputTransform::Identity).unwrap();
        let mut theta = vec![0.0; spec.n_params()];
        let (w1, b1) = spec.layer_ranges(1);
        for i in w1 {
            theta[i] = 1.0;
        }
        theta[b1.start] = 0.5;
        let s = Sample::new(vec![0.7, -1.1], vec![3.0]);
        let (_, g) = loss_and_grad(&spec, &pv(&theta), &[s], Loss::Mse).unwrap();
        let (w0, b0) = spec.layer_ranges(0);
        assert!(g.as_slice()[w0.start..b0.end].iter().all(|x| *x == 0.0));
        // the output bias still sees the residual 2·(0.5 − 3)
        assert_eq!(g[b1.start], -5.0);
    }

    #[test]
    fn clamped_softmax_bounds() {
        let eps = 1e-3;
        let spec = MlpSpec::uniform(vec![3, 4, 5], Activation::Tanh, OutputTransform::SoftmaxClamped { eps }).unwrap();
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let theta = spec.init_params(&mut rng).scale(20.0);
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let (out, _) = forward(&spec, &theta, &x).unwrap();
            assert!(out.iter().all(|&p| (eps..=1.0).contains(&p)));
            assert!(out.iter().sum::<f64>() <= 1.0 + 5.0 * eps + 1e-15);
        }
    }

    #[test]
    fn grad_check_linear_mse() {
        let spec = MlpSpec::new(vec![3, 2], vec![], OutputTransform::Identity).unwrap();
        let mut rng = Rng::new(3);
        let theta = spec.init_params(&mut rng);
        let batch: Vec<Sample> = (0..4)
            .map(|_| Sample::new((0..3).map(|_| rng.normal()).collect(), vec![rng.normal(), rng.normal()]))
            .collect();
        let err = grad_check(&spec, &theta, &batch, Loss::Mse, 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn grad_check_tanh_cross_entropy() {
        let spec = MlpSpec::uniform(vec![4, 5, 3], Activation::Tanh, OutputTransform::SoftmaxClamped { eps: DEFAULT_CLAMP }).unwrap();
        let mut rng = Rng::new(8);
        let theta = spec.init_params(&mut rng);
        let batch: Vec<Sample> = (0..6)
            .map(|i| Sample::classified((0..4).map(|_| rng.normal()).collect(), i % 3, 3))
            .collect();
        let err = grad_check(&spec, &theta, &batch, Loss::CrossEntropy, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn grad_check_relu_away_from_kinks() {
        let spec = MlpSpec::uniform(vec![4, 6, 3], Activation::Relu, OutputTransform::SoftmaxClamped { eps: DEFAULT_CLAMP }).unwrap();
        let mut rng = Rng::new(21);
        let batch: Vec<Sample> = (0..5)
            .map(|i| Sample::classified((0..4).map(|_| rng.normal()).collect(), i % 3, 3))
            .collect();
        let theta = loop {
            let t = spec.init_params(&mut rng);
            if relu_margin(&spec, &t, &batch) >= 1e-3 {
                break t;
            }
        };
        let err = grad_check(&spec, &theta, &batch, Loss::CrossEntropy, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn batch_is_sum_of_singletons_bitwise() {
        let spec = MlpSpec::uniform(vec![3, 4, 2], Activation::Relu, OutputTransform::SoftmaxClamped { eps: DEFAULT_CLAMP }).unwrap();
        let mut rng = Rng::new(4);
        let theta = spec.init_params(&mut rng);
        let batch: Vec<Sample> = (0..7)
            .map(|i| Sample::classified((0..3).map(|_| rng.normal()).collect(), i % 2, 2))
            .collect();
        let (v, g) = loss_and_grad(&spec, &theta, &batch, Loss::CrossEntropy).unwrap();
        let mut vs = 0.0;
        let mut gs = vec![0.0; spec.n_params()];
        for s in &batch {
            let (vi, gi) = loss_and_grad(&spec, &theta, std::slice::from_ref(s), Loss::CrossEntropy).unwrap();
            vs += vi;
            for (a, b) in gs.iter_mut().zip(gi.iter()) {
                *a += b;
            }
        }
        assert_eq!(v.to_bits(), vs.to_bits());
        assert!(g.iter().zip(&gs).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn backward_leaves_input_adjoint_zero_and_reverses_every_node() {
        let spec = MlpSpec::uniform(vec![2, 3, 2], Activation::Sigmoid, OutputTransform::Identity).unwrap();
        let theta = spec.init_params(&mut Rng::new(2));
        let (_, mut tape) = forward(&spec, &theta, &[0.3, 0.4]).unwrap();
        let mut grad = vec![0.0; spec.n_params()];
        tape.backward(&spec, theta.as_slice(), &[1.0, -1.0], &mut grad);
        assert_eq!(tape.adjoints().len(), tape.nodes().len());
        assert!(tape.adjoints()[0].iter().all(|x| *x == 0.0));
        assert!(grad.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn mlp_objective_matches_loss_and_grad() {
        let spec = MlpSpec::uniform(vec![2, 3, 2], Activation::Tanh, OutputTransform::SoftmaxClamped { eps: DEFAULT_CLAMP }).unwrap();
        let mut rng = Rng::new(6);
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample::classified(vec![rng.normal(), rng.normal()], i % 2, 2))
            .collect();
        let obj = MlpObjective::new(spec.clone(), Loss::CrossEntropy, Arc::new(samples.clone())).unwrap();
        let theta = spec.init_params(&mut rng);
        let batch = Batch::new(vec![4, 0, 4], 5).unwrap();
        let e = obj.eval(&theta, &batch).unwrap();
        let (v, g) = loss_and_grad(&spec, &theta, &obj.batch_samples(&batch), Loss::CrossEntropy).unwrap();
        assert_eq!(e.value, v);
        assert_eq!(e.subgrad, g);
    }
}
