use super::{Graph, NodeId};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// `KL(p || q) = sum_k p_k ln(p_k / q_k)`; terms with `p_k = 0` contribute 0.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_categorical", p.len(), q.len()));
    }
    for d in [p, q] {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) || (d.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution("not a probability vector"));
        }
    }
    let mut kl = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            if qk <= 0.0 {
                return Err(Error::Distribution("q has no mass where p does"));
            }
            kl += pk * libm::log(pk / qk);
        }
    }
    Ok(kl.max(0.0))
}

/// Mean of squared differences.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("mse", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Batch mean of the per-row MSE between two `B x d` nodes.
pub fn mse_node<'p>(g: &mut Graph<'p>, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.mean(sq)
}

/// Per-row `KL(p || q)` from row-wise log-probabilities, `B x K -> B x 1`.
pub fn kl_rows_node<'p>(g: &mut Graph<'p>, log_p: NodeId, log_q: NodeId) -> NodeId {
    let p = g.exp(log_p);
    let diff = g.sub(log_p, log_q);
    let terms = g.mul(p, diff);
    g.sum_cols(terms)
}
