//! Categorical sampling and the Gumbel-softmax relaxation.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::Rng;

use super::graph::softmax_in_place;
use super::{Graph, Matrix, NodeId};

/// Gumbel-softmax temperature used for mask sampling.
pub const GUMBEL_TEMPERATURE: f64 = 1.0;

/// Standard Gumbel draws `-ln(-ln u)`, `u ~ U(0, 1)`.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -libm::log(-libm::log(u))
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(index: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

/// One-hot rows at the row-wise argmax.
pub fn one_hot_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let j = argmax(m.row(r));
        out.set(r, j, 1.0);
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Draws `(hard, soft)`: `soft = softmax((logits + g) / temperature)` and
/// `hard` is one-hot at the argmax of the same perturbed logits.
pub fn gumbel_softmax_sample(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let noise = gumbel_noise(1, logits.len(), rng);
    let perturbed: Vec<f64> = logits.iter().zip(noise.as_slice()).map(|(l, g)| (l + g) / temperature).collect();
    let hard = one_hot(argmax(&perturbed), logits.len());
    (hard, softmax(&perturbed))
}

/// Samples an index from the categorical distribution `softmax(logits)`
/// (Gumbel-max trick).
pub fn sample_logits(logits: &[f64], rng: &mut impl Rng) -> usize {
    let noise = gumbel_noise(1, logits.len(), rng);
    let perturbed: Vec<f64> = logits.iter().zip(noise.as_slice()).map(|(l, g)| l + g).collect();
    argmax(&perturbed)
}

/// How a sampled mask enters the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskEstimator {
    /// One-hot forward value, gradient through the soft sample.
    StraightThrough,
    /// The soft sample itself; differentiable end to end, used by
    /// finite-difference checks.
    Soft,
}

/// Gumbel-softmax over graph logits with pre-drawn (frozen) noise.
/// Returns the mask node according to `estimator`.
pub fn gumbel_softmax_node<'p>(
    g: &mut Graph<'p>,
    logits: NodeId,
    noise: &Matrix,
    temperature: f64,
    estimator: MaskEstimator,
) -> NodeId {
    let n = g.input(noise.clone());
    let perturbed = g.add(logits, n);
    let scaled = g.scale(perturbed, 1.0 / temperature);
    let soft = g.softmax(scaled);
    match estimator {
        MaskEstimator::Soft => soft,
        MaskEstimator::StraightThrough => {
            let hard = one_hot_rows(g.value(scaled));
            g.straight_through(hard, soft)
        }
    }
}
