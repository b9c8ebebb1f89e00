//! Behavioural policies: the four baselines, the transfer-guided softmax and
//! the four composites that mix it into a baseline.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::sample_dense;
use crate::error::{Error, Result};
use crate::mdp::QFunction;
use crate::scalar::{argmax_random_tie, softmax, Scalar};
use crate::transfer::TransferTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    EpsGreedyUniform,
    Boltzmann,
    MbieEb,
    Pursuit,
    ExtraEpsGreedy,
    ExtraPlusUniform,
    ExtraPlusSoftmax,
    ExtraPlusPursuit,
    ExtraPlusMbie,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::EpsGreedyUniform,
        Strategy::Boltzmann,
        Strategy::MbieEb,
        Strategy::Pursuit,
        Strategy::ExtraEpsGreedy,
        Strategy::ExtraPlusUniform,
        Strategy::ExtraPlusSoftmax,
        Strategy::ExtraPlusPursuit,
        Strategy::ExtraPlusMbie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::EpsGreedyUniform => "eps_greedy_uniform",
            Strategy::Boltzmann => "boltzmann",
            Strategy::MbieEb => "mbie_eb",
            Strategy::Pursuit => "pursuit",
            Strategy::ExtraEpsGreedy => "extra_eps_greedy",
            Strategy::ExtraPlusUniform => "extra_plus_uniform",
            Strategy::ExtraPlusSoftmax => "extra_plus_softmax",
            Strategy::ExtraPlusPursuit => "extra_plus_pursuit",
            Strategy::ExtraPlusMbie => "extra_plus_mbie",
        }
    }

    pub fn uses_transfer(self) -> bool {
        matches!(
            self,
            Strategy::ExtraEpsGreedy
                | Strategy::ExtraPlusUniform
                | Strategy::ExtraPlusSoftmax
                | Strategy::ExtraPlusPursuit
                | Strategy::ExtraPlusMbie
        )
    }

    /// Whether the count bonus is added to observed rewards.
    pub fn uses_bonus(self) -> bool {
        matches!(self, Strategy::MbieEb | Strategy::ExtraPlusMbie)
    }

    /// The baseline a composite extends, if any.
    pub fn baseline(self) -> Option<Strategy> {
        match self {
            Strategy::ExtraPlusUniform => Some(Strategy::EpsGreedyUniform),
            Strategy::ExtraPlusSoftmax => Some(Strategy::Boltzmann),
            Strategy::ExtraPlusPursuit => Some(Strategy::Pursuit),
            Strategy::ExtraPlusMbie => Some(Strategy::MbieEb),
            _ => None,
        }
    }

    /// Q-learning rate used unless overridden.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Strategy::ExtraEpsGreedy => 0.5,
            _ => 0.2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
            Error::config(format!("unknown strategy `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

/// How the step counter flattens the transfer-guided distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annealing {
    /// Temperature grows as `tau0 * (1 + alpha * n)`.
    #[default]
    Temperature,
    /// Subtracts `alpha * n` from every logit. Softmax ignores the shift,
    /// so this mode never anneals; kept for comparison.
    LiteralShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub epsilon: f64,
    pub epsilon_bisim: f64,
    pub temperature: f64,
    pub pursuit_beta: f64,
    pub mbie_beta: f64,
    pub extra_alpha: f64,
    pub extra_tau0: f64,
    pub annealing: Annealing,
}

pub const DEFAULT_EXTRA_TAU0: f64 = 1e-5;

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            epsilon_bisim: 0.5,
            temperature: 8.1,
            pursuit_beta: 0.007,
            mbie_beta: 0.005,
            extra_alpha: 1e-6,
            extra_tau0: DEFAULT_EXTRA_TAU0,
            annealing: Annealing::Temperature,
        }
    }
}

impl StrategyConfig {
    /// Defaults with the exploration rate each strategy was tuned with.
    pub fn for_strategy(strategy: Strategy) -> Self {
        let epsilon = match strategy {
            Strategy::MbieEb | Strategy::ExtraEpsGreedy => 0.2,
            Strategy::Boltzmann | Strategy::Pursuit => 0.0,
            _ => 0.5,
        };
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("epsilon", self.epsilon)?;
        unit("epsilon_bisim", self.epsilon_bisim)?;
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.pursuit_beta > 0.0 && self.pursuit_beta < 1.0) {
            return Err(Error::config(format!("pursuit_beta must lie in (0, 1), got {}", self.pursuit_beta)));
        }
        if !(self.mbie_beta >= 0.0) {
            return Err(Error::config(format!("mbie_beta must be non-negative, got {}", self.mbie_beta)));
        }
        if !(self.extra_alpha >= 0.0) {
            return Err(Error::config(format!("extra_alpha must be non-negative, got {}", self.extra_alpha)));
        }
        if !(self.extra_tau0 > 0.0) {
            return Err(Error::config(format!("extra_tau0 must be positive, got {}", self.extra_tau0)));
        }
        Ok(())
    }
}

pub fn boltzmann_policy<T: Scalar>(q_row: &[T], temperature: T) -> Vec<T> {
    softmax(q_row, temperature)
}

/// `beta / sqrt(n)`, with an unvisited pair counted as visited once.
pub fn mbie_eb_bonus(count: u64, beta: f64) -> f64 {
    beta / (count.max(1) as f64).sqrt()
}

/// Moves `pi_row` a fraction `beta` of the way towards the point mass on
/// `greedy`.
pub fn pursuit_update(pi_row: &mut [f64], greedy: usize, beta: f64) {
    for (a, p) in pi_row.iter_mut().enumerate() {
        let target = if a == greedy { 1.0 } else { 0.0 };
        *p += beta * (target - *p);
    }
}

/// Softmax over the bisimulation advantages of `state` at step `step`.
pub fn extra_policy(state: usize, transfer: &TransferTable<f64>, step: u64, cfg: &StrategyConfig) -> Vec<f64> {
    let advantages = transfer.advantages(state);
    let n = step as f64;
    match cfg.annealing {
        Annealing::Temperature => softmax(advantages, cfg.extra_tau0 * (1.0 + cfg.extra_alpha * n)),
        Annealing::LiteralShift => {
            let shifted: Vec<f64> = advantages.iter().map(|&a| a - cfg.extra_alpha * n).collect();
            softmax(&shifted, cfg.extra_tau0)
        }
    }
}

/// Per-run mutable state of a behavioural policy.
#[derive(Debug, Clone)]
pub struct ExplorationState {
    pub q: QFunction<f64>,
    /// Visit counts indexed `s * A + a`.
    pub counts: Vec<u64>,
    /// Pursuit distributions indexed `s * A + a`.
    pub pursuit_pi: Vec<f64>,
    pub global_step: u64,
    pub rng: ChaCha8Rng,
}

impl ExplorationState {
    pub fn new(q: QFunction<f64>, rng: ChaCha8Rng) -> Self {
        let (ns, na) = (q.num_states(), q.num_actions());
        Self { counts: vec![0; ns * na], pursuit_pi: vec![1.0 / na as f64; ns * na], global_step: 0, q, rng }
    }

    pub fn num_actions(&self) -> usize {
        self.q.num_actions()
    }

    pub fn count(&self, state: usize, action: usize) -> u64 {
        self.counts[state * self.num_actions() + action]
    }

    /// Bumps `n(s, a)` and returns the new count.
    pub fn record_visit(&mut self, state: usize, action: usize) -> u64 {
        let idx = state * self.num_actions() + action;
        self.counts[idx] += 1;
        self.counts[idx]
    }

    pub fn pursuit_row(&self, state: usize) -> &[f64] {
        let na = self.num_actions();
        &self.pursuit_pi[state * na..(state + 1) * na]
    }

    fn uniform(&mut self) -> usize {
        self.rng.random_range(0..self.num_actions())
    }

    /// Greedy on `Q` with ties broken uniformly.
    fn greedy(&mut self, state: usize) -> usize {
        argmax_random_tie(self.q.row(state), &mut self.rng)
    }

    fn boltzmann(&mut self, state: usize, temperature: f64) -> usize {
        let probs = boltzmann_policy(self.q.row(state), temperature);
        sample_dense(&mut self.rng, &probs)
    }

    fn pursuit(&mut self, state: usize, beta: f64) -> usize {
        let greedy = self.greedy(state);
        let na = self.num_actions();
        let row = &mut self.pursuit_pi[state * na..(state + 1) * na];
        pursuit_update(row, greedy, beta);
        let row = &self.pursuit_pi[state * na..(state + 1) * na];
        sample_dense(&mut self.rng, row)
    }

    fn extra(&mut self, state: usize, transfer: &TransferTable<f64>, cfg: &StrategyConfig) -> usize {
        let probs = extra_policy(state, transfer, self.global_step, cfg);
        sample_dense(&mut self.rng, &probs)
    }

    fn explore(&mut self, epsilon: f64) -> bool {
        epsilon > 0.0 && self.rng.random::<f64>() < epsilon
    }
}

/// Samples the behaviour action for `state`. Does not advance the step
/// counter; the learner does that after the environment step.
pub fn select_action(
    strategy: Strategy,
    st: &mut ExplorationState,
    transfer: Option<&TransferTable<f64>>,
    state: usize,
    cfg: &StrategyConfig,
) -> Result<usize> {
    let transfer = match (strategy.uses_transfer(), transfer) {
        (true, None) => return Err(Error::config(format!("strategy {strategy} needs a transfer table"))),
        (_, t) => t,
    };
    let action = match strategy {
        Strategy::EpsGreedyUniform | Strategy::MbieEb => {
            if st.explore(cfg.epsilon) {
                st.uniform()
            } else {
                st.greedy(state)
            }
        }
        Strategy::Boltzmann => st.boltzmann(state, cfg.temperature),
        Strategy::Pursuit => st.pursuit(state, cfg.pursuit_beta),
        Strategy::ExtraEpsGreedy | Strategy::ExtraPlusMbie => {
            if st.explore(cfg.epsilon) {
                st.extra(state, transfer.expect("checked above"), cfg)
            } else {
                st.greedy(state)
            }
        }
        Strategy::ExtraPlusUniform => {
            if st.explore(cfg.epsilon) {
                if st.explore(cfg.epsilon_bisim) {
                    st.extra(state, transfer.expect("checked above"), cfg)
                } else {
                    st.uniform()
                }
            } else {
                st.greedy(state)
            }
        }
        Strategy::ExtraPlusSoftmax => {
            if st.explore(cfg.epsilon) {
                st.extra(state, transfer.expect("checked above"), cfg)
            } else {
                st.boltzmann(state, cfg.temperature)
            }
        }
        Strategy::ExtraPlusPursuit => {
            if st.explore(cfg.epsilon) {
                st.extra(state, transfer.expect("checked above"), cfg)
            } else {
                st.pursuit(state, cfg.pursuit_beta)
            }
        }
    };
    Ok(action)
}
