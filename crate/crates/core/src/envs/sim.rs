//! Sampling simulator over a tabular MDP.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::TabularMdp;

/// Independent RNG stream `stream` of the master `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws an index from sparse `(index, probability)` pairs.
pub fn sample_sparse<R: Rng + ?Sized>(rng: &mut R, row: &[(usize, f64)]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in row {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.last().map(|&(i, _)| i).expect("non-empty distribution")
}

/// Draws an index from a dense probability vector.
pub fn sample_dense<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// Episode simulator. Rewards are the model's expected `R(s, a)`.
#[derive(Debug, Clone)]
pub struct Simulator {
    mdp: Arc<TabularMdp<f64>>,
    rng: ChaCha8Rng,
    current_state: usize,
    step_count: u64,
    initial: Vec<(usize, f64)>,
}

impl Simulator {
    pub fn new(mdp: Arc<TabularMdp<f64>>, seed: u64) -> Self {
        Self::with_rng(mdp, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(mdp: Arc<TabularMdp<f64>>, rng: ChaCha8Rng) -> Self {
        let initial: Vec<(usize, f64)> =
            mdp.initial_distribution().iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
        let mut sim = Self { mdp, rng, current_state: 0, step_count: 0, initial };
        sim.reset();
        sim
    }

    pub fn mdp(&self) -> &TabularMdp<f64> {
        &self.mdp
    }

    pub fn shared_mdp(&self) -> Arc<TabularMdp<f64>> {
        Arc::clone(&self.mdp)
    }

    pub fn state(&self) -> usize {
        self.current_state
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Same MDP, fresh RNG: used for evaluation rollouts.
    pub fn fork(&self, rng: ChaCha8Rng) -> Self {
        Self::with_rng(Arc::clone(&self.mdp), rng)
    }

    pub fn reset(&mut self) -> usize {
        self.current_state = sample_sparse(&mut self.rng, &self.initial);
        self.current_state
    }

    /// Places the agent in `state` (testing and analysis).
    pub fn set_state(&mut self, state: usize) {
        assert!(state < self.mdp.num_states());
        self.current_state = state;
    }

    pub fn step(&mut self, action: usize) -> Step {
        let s = self.current_state;
        let reward = self.mdp.reward(s, action);
        let next_state = sample_sparse(&mut self.rng, self.mdp.row(s, action));
        self.current_state = next_state;
        self.step_count += 1;
        Step { next_state, reward, terminal: self.mdp.is_terminal(next_state) }
    }
}
