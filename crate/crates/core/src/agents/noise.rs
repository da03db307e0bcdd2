use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

/// Ornstein-Uhlenbeck process `dx = theta (mu - x) dt + sigma dW` with
/// `mu = 0`, `dt = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuNoise {
    state: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64) -> Self {
        Self { state: vec![0.0; dim], theta, sigma }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn sample(&mut self, rng: &mut impl Rng) -> &[f64] {
        for x in &mut self.state {
            let w: f64 = rng.sample(StandardNormal);
            *x += -self.theta * *x + self.sigma * w;
        }
        &self.state
    }
}

/// Constant `eta` for the first half of training, then linear decay to 0
/// at the last episode.
pub fn noise_schedule(eta: f64, episode: usize, total_episodes: usize) -> f64 {
    let half = total_episodes / 2;
    if episode < half {
        return eta;
    }
    let span = (total_episodes - half) as f64;
    eta * ((total_episodes - episode) as f64 / span).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn schedule_shape() {
        assert_eq!(noise_schedule(1.2, 0, 100), 1.2);
        assert_eq!(noise_schedule(1.2, 49, 100), 1.2);
        assert_eq!(noise_schedule(1.2, 50, 100), 1.2);
        assert!((noise_schedule(1.2, 75, 100) - 0.6).abs() < 1e-12);
        assert_eq!(noise_schedule(1.2, 100, 100), 0.0);
        let mut prev = f64::INFINITY;
        for e in 0..=100 {
            let s = noise_schedule(1.0, e, 100);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn stationary_variance() {
        // Var = sigma^2 / (1 - (1 - theta)^2) for the discrete recursion.
        let mut ou = OuNoise::new(1, 0.15, 0.2);
        let mut rng = seed::stream(0, seed::labels::NOISE);
        let n = 200_000;
        let mut sum_sq = 0.0;
        for _ in 0..1000 {
            ou.sample(&mut rng);
        }
        for _ in 0..n {
            let x = ou.sample(&mut rng)[0];
            sum_sq += x * x;
        }
        let expected = 0.04 / (1.0 - 0.85f64 * 0.85);
        assert!((sum_sq / n as f64 - expected).abs() / expected < 0.05);
    }

    #[test]
    fn reset_zeroes_state() {
        let mut ou = OuNoise::new(2, 0.15, 0.2);
        let mut rng = seed::stream(1, seed::labels::NOISE);
        ou.sample(&mut rng);
        ou.reset();
        assert_eq!(ou.state, vec![0.0, 0.0]);
    }
}
