//! Uniform experience replay over joint transitions.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Matrix;
use crate::{Error, Result};

/// One joint transition; per-agent vectors in agent order.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    /// True termination; time-limit truncation is not terminal.
    pub terminal: bool,
}

/// Minibatch with one `B x d` matrix per agent and field.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Vec<Matrix>,
    pub actions: Vec<Matrix>,
    pub rewards: Vec<Matrix>,
    pub next_obs: Vec<Matrix>,
    /// `1 - terminal`, `B x 1`.
    pub not_terminal: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.not_terminal.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }
}

/// Ring buffer; when full, the oldest transition is overwritten first.
/// Values are stored as `f32`.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dims: Vec<usize>,
    act_dims: Vec<usize>,
    stride: usize,
    data: Vec<f32>,
    len: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dims: &[usize], act_dims: &[usize]) -> Self {
        assert_eq!(obs_dims.len(), act_dims.len());
        let n = obs_dims.len();
        let stride = 2 * obs_dims.iter().sum::<usize>() + act_dims.iter().sum::<usize>() + n + 1;
        Self {
            capacity,
            obs_dims: obs_dims.to_vec(),
            act_dims: act_dims.to_vec(),
            stride,
            data: Vec::new(),
            len: 0,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn check(&self, t: &Transition) -> Result<()> {
        let n = self.obs_dims.len();
        if t.obs.len() != n || t.next_obs.len() != n || t.actions.len() != n || t.rewards.len() != n {
            return Err(Error::shape("transition agents", n, t.obs.len()));
        }
        for i in 0..n {
            if t.obs[i].len() != self.obs_dims[i] || t.next_obs[i].len() != self.obs_dims[i] {
                return Err(Error::shape("transition observation", self.obs_dims[i], t.obs[i].len()));
            }
            if t.actions[i].len() != self.act_dims[i] {
                return Err(Error::shape("transition action", self.act_dims[i], t.actions[i].len()));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        self.check(t)?;
        let mut row = Vec::with_capacity(self.stride);
        for o in &t.obs {
            row.extend(o.iter().map(|&v| v as f32));
        }
        for a in &t.actions {
            row.extend(a.iter().map(|&v| v as f32));
        }
        row.extend(t.rewards.iter().map(|&v| v as f32));
        for o in &t.next_obs {
            row.extend(o.iter().map(|&v| v as f32));
        }
        row.push(if t.terminal { 1.0 } else { 0.0 });
        if self.len < self.capacity {
            self.data.extend_from_slice(&row);
            self.len += 1;
        } else {
            let start = self.cursor * self.stride;
            self.data[start..start + self.stride].copy_from_slice(&row);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn get(&self, index: usize) -> Transition {
        let row = &self.data[index * self.stride..(index + 1) * self.stride];
        let mut off = 0;
        let mut take = |d: usize| {
            let v: Vec<f64> = row[off..off + d].iter().map(|&x| f64::from(x)).collect();
            off += d;
            v
        };
        let obs = self.obs_dims.iter().map(|&d| take(d)).collect();
        let actions = self.act_dims.iter().map(|&d| take(d)).collect();
        let rewards = take(self.obs_dims.len());
        let next_obs = self.obs_dims.iter().map(|&d| take(d)).collect();
        let terminal = take(1)[0] != 0.0;
        Transition { obs, actions, rewards, next_obs, terminal }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let n = self.obs_dims.len();
        let mut obs: Vec<Matrix> = self.obs_dims.iter().map(|&d| Matrix::zeros(b, d)).collect();
        let mut actions: Vec<Matrix> = self.act_dims.iter().map(|&d| Matrix::zeros(b, d)).collect();
        let mut rewards: Vec<Matrix> = (0..n).map(|_| Matrix::zeros(b, 1)).collect();
        let mut next_obs: Vec<Matrix> = self.obs_dims.iter().map(|&d| Matrix::zeros(b, d)).collect();
        let mut not_terminal = Matrix::zeros(b, 1);
        for (r, &idx) in indices.iter().enumerate() {
            let row = &self.data[idx * self.stride..(idx + 1) * self.stride];
            let mut off = 0;
            let mut fill = |m: &mut Matrix| {
                let d = m.cols();
                for (dst, &src) in m.row_mut(r).iter_mut().zip(&row[off..off + d]) {
                    *dst = f64::from(src);
                }
                off += d;
            };
            obs.iter_mut().for_each(&mut fill);
            actions.iter_mut().for_each(&mut fill);
            rewards.iter_mut().for_each(&mut fill);
            next_obs.iter_mut().for_each(&mut fill);
            not_terminal.set(r, 0, 1.0 - f64::from(row[self.stride - 1]));
        }
        Batch { obs, actions, rewards, next_obs, not_terminal }
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Batch {
        let idx = self.sample_indices(batch, rng);
        self.batch(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use alloc::vec;

    fn tr(tag: f64) -> Transition {
        Transition {
            obs: vec![vec![tag, 1.0], vec![tag]],
            actions: vec![vec![0.5], vec![-0.5]],
            rewards: vec![tag, -tag],
            next_obs: vec![vec![tag + 1.0, 0.0], vec![2.0]],
            terminal: tag == 3.0,
        }
    }

    #[test]
    fn round_trip_and_batch_layout() {
        let mut buf = ReplayBuffer::new(8, &[2, 1], &[1, 1]);
        for k in 0..4 {
            buf.push(&tr(k as f64)).unwrap();
        }
        assert_eq!(buf.get(2), tr(2.0));
        let b = buf.batch(&[3, 1]);
        assert_eq!(b.obs[0].row(0), &[3.0, 1.0]);
        assert_eq!(b.rewards[1].as_slice(), &[-3.0, -1.0]);
        assert_eq!(b.next_obs[1].as_slice(), &[2.0, 2.0]);
        assert_eq!(b.not_terminal.as_slice(), &[0.0, 1.0]);
        assert!(buf.push(&Transition { obs: vec![vec![1.0], vec![1.0]], ..tr(0.0) }).is_err());
    }

    #[test]
    fn overwrites_oldest_first() {
        let mut buf = ReplayBuffer::new(3, &[2, 1], &[1, 1]);
        for k in 0..5 {
            buf.push(&tr(k as f64)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let tags: Vec<f64> = (0..3).map(|i| buf.get(i).rewards[0]).collect();
        // slots 0 and 1 were rewritten by transitions 3 and 4, in that order
        assert_eq!(tags, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn sampling_is_uniform_within_three_sigma() {
        let mut buf = ReplayBuffer::new(10, &[2, 1], &[1, 1]);
        for k in 0..10 {
            buf.push(&tr(k as f64)).unwrap();
        }
        let mut rng = seed::stream(0, seed::labels::BUFFER);
        let draws = 1_000_000;
        let mut counts = [0usize; 10];
        for i in buf.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let p = 0.1;
        let mean = draws as f64 * p;
        let sd = libm::sqrt(draws as f64 * p * (1.0 - p));
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
