//! Finite MDPs and exact dynamic programming.

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

const STOCHASTIC_TOL: f64 = 1e-9;

/// Sparse distribution over next states: `(state, probability)` pairs sorted
/// by state, strictly positive probabilities only.
pub type Row<T> = Vec<(usize, T)>;

/// A finite MDP `<S, A, P, R>` with discount, terminal mask and start
/// distribution.
///
/// Terminal states are absorbing zero-reward self-loops, so solvers never
/// need to special-case them.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Row<T>>,
    reward: Vec<T>,
    discount: T,
    terminal: Vec<bool>,
    initial: Vec<T>,
}

impl<T: Scalar> TabularMdp<T> {
    /// Builds and validates an MDP. `transitions` and `reward` are indexed by
    /// `state * num_actions + action`; transition rows may list states in any
    /// order and may contain zeros or repeated states (they are merged).
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<(usize, T)>>,
        reward: Vec<T>,
        discount: T,
        terminal: Vec<bool>,
        initial: Vec<T>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        let pairs = num_states * num_actions;
        if transitions.len() != pairs || reward.len() != pairs {
            return Err(Error::Dimension(format!(
                "expected {pairs} transition rows and rewards, got {} and {}",
                transitions.len(),
                reward.len()
            )));
        }
        if terminal.len() != num_states || initial.len() != num_states {
            return Err(Error::Dimension("terminal mask and initial distribution must cover every state".into()));
        }
        if !(discount >= T::zero() && discount < T::one()) {
            return Err(Error::InvalidMdp(format!("discount {discount} outside [0, 1)")));
        }

        let tol = T::lit(STOCHASTIC_TOL);
        let mut rows = Vec::with_capacity(pairs);
        for (idx, raw) in transitions.into_iter().enumerate() {
            let (state, action) = (idx / num_actions, idx % num_actions);
            let mut row: Row<T> = Vec::with_capacity(raw.len());
            for (next, p) in raw {
                if next >= num_states {
                    return Err(Error::InvalidMdp(format!(
                        "transition from ({state}, {action}) to out-of-range state {next}"
                    )));
                }
                if !p.is_finite() || p < T::zero() {
                    return Err(Error::BadProbability { state, action, value: p.as_f64() });
                }
                if p > T::zero() {
                    row.push((next, p));
                }
            }
            row.sort_by_key(|&(s, _)| s);
            row.dedup_by(|later, earlier| {
                if later.0 == earlier.0 {
                    earlier.1 = earlier.1 + later.1;
                    true
                } else {
                    false
                }
            });
            let sum: T = row.iter().map(|&(_, p)| p).sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::NonStochastic { state, action, sum: sum.as_f64() });
            }
            rows.push(row);
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("non-finite reward {r}")));
        }

        for s in (0..num_states).filter(|&s| terminal[s]) {
            for a in 0..num_actions {
                let idx = s * num_actions + a;
                if rows[idx] != [(s, T::one())] || reward[idx] != T::zero() {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} must self-loop with reward 0 under action {a}"
                    )));
                }
            }
        }

        let init_sum: T = initial.iter().copied().sum();
        if (init_sum - T::one()).abs() > tol || initial.iter().any(|&p| p < T::zero() || !p.is_finite()) {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {init_sum}")));
        }
        if (0..num_states).any(|s| terminal[s] && initial[s] > T::zero()) {
            return Err(Error::InvalidMdp("initial distribution puts mass on a terminal state".into()));
        }

        Ok(Self { num_states, num_actions, transitions: rows, reward, discount, terminal, initial })
    }

    /// Builds an MDP from a dense `[s][a][s']` tensor and `[s][a]` rewards.
    pub fn from_dense(
        transition: &[Vec<Vec<T>>],
        reward: &[Vec<T>],
        discount: T,
        terminal: Vec<bool>,
        initial: Vec<T>,
    ) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(num_states * num_actions);
        let mut rewards = Vec::with_capacity(num_states * num_actions);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != num_actions || reward.get(s).map_or(true, |r| r.len() != num_actions) {
                return Err(Error::Dimension(format!("ragged action dimension at state {s}")));
            }
            for (a, dense) in per_action.iter().enumerate() {
                if dense.len() != num_states {
                    return Err(Error::Dimension(format!("row ({s}, {a}) has {} entries", dense.len())));
                }
                rows.push(dense.iter().copied().enumerate().collect());
                rewards.push(reward[s][a]);
            }
        }
        Self::new(num_states, num_actions, rows, rewards, discount, terminal, initial)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    /// Copy of this MDP with another discount factor.
    pub fn with_discount(&self, discount: T) -> Result<Self> {
        if !(discount >= T::zero() && discount < T::one()) {
            return Err(Error::InvalidMdp(format!("discount {discount} outside [0, 1)")));
        }
        Ok(Self { discount, ..self.clone() })
    }

    pub fn row(&self, state: usize, action: usize) -> &[(usize, T)] {
        &self.transitions[state * self.num_actions + action]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> T {
        let row = self.row(state, action);
        row.binary_search_by_key(&next, |&(s, _)| s).map_or(T::zero(), |i| row[i].1)
    }

    pub fn reward(&self, state: usize, action: usize) -> T {
        self.reward[state * self.num_actions + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn initial_distribution(&self) -> &[T] {
        &self.initial
    }

    /// Smallest and largest reward over all state-action pairs.
    pub fn reward_span(&self) -> (T, T) {
        let lo = self.reward.iter().copied().fold(T::infinity(), T::min);
        let hi = self.reward.iter().copied().fold(T::neg_infinity(), T::max);
        (lo, hi)
    }

    fn expected<F: Fn(usize) -> T>(&self, state: usize, action: usize, value: F) -> T {
        self.row(state, action).iter().map(|&(next, p)| p * value(next)).sum()
    }
}

/// A deterministic policy `S -> A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    action_of: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(action_of: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some((s, &a)) = action_of.iter().enumerate().find(|(_, &a)| a >= num_actions) {
            return Err(Error::InvalidMdp(format!("policy picks action {a} at state {s}, only {num_actions} exist")));
        }
        Ok(Self { action_of })
    }

    pub fn action(&self, state: usize) -> usize {
        self.action_of[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }

    pub fn len(&self) -> usize {
        self.action_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_of.is_empty()
    }
}

/// Tabular state-action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction<T> {
    num_states: usize,
    num_actions: usize,
    values: Vec<T>,
}

impl<T: Scalar> QFunction<T> {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, values: vec![T::zero(); num_states * num_actions] }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Dimension(format!("{} values for a {num_states}x{num_actions} table", values.len())));
        }
        Ok(Self { num_states, num_actions, values })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> T {
        self.values[state * self.num_actions + action]
    }

    #[inline]
    pub fn set(&mut self, state: usize, action: usize, value: T) {
        self.values[state * self.num_actions + action] = value;
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[T] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn state_value(&self, state: usize) -> T {
        self.row(state).iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn state_values(&self) -> Vec<T> {
        (0..self.num_states).map(|s| self.state_value(s)).collect()
    }

    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    /// `A(s, a) = Q(s, a) - V(s)`, always `<= 0` for the greedy values.
    pub fn advantage(&self, state: usize, action: usize) -> T {
        self.get(state, action) - self.state_value(state)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub q: QFunction<T>,
    pub sweeps: usize,
    /// Sup-norm change of the final sweep.
    pub last_change: T,
    pub converged: bool,
}

/// Sweeps stop once the iterate is provably within `tolerance` of the fixed
/// point: `change * gamma / (1 - gamma) <= tolerance`.
fn within_tolerance<T: Scalar>(change: T, discount: T, tolerance: T) -> bool {
    change * discount <= tolerance * (T::one() - discount)
}

/// Q-value iteration `Q(s,a) <- sum_s' P(s,a,s') (R(s,a) + gamma max_b Q(s',b))`
/// from the zero table.
pub fn value_iteration<T: Scalar>(mdp: &TabularMdp<T>, tolerance: T, max_sweeps: usize) -> Result<SolveReport<T>> {
    if !(tolerance > T::zero()) {
        return Err(Error::config("value iteration tolerance must be positive"));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.discount();
    let mut q = QFunction::zeros(ns, na);
    let mut v = vec![T::zero(); ns];
    let mut next = q.values.clone();
    let mut change = T::infinity();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        change = T::zero();
        for s in 0..ns {
            for a in 0..na {
                let backed = mdp.reward(s, a) + gamma * mdp.expected(s, a, |n| v[n]);
                let idx = s * na + a;
                change = change.max((backed - q.values[idx]).abs());
                next[idx] = backed;
            }
        }
        std::mem::swap(&mut q.values, &mut next);
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q.state_value(s);
        }
        if within_tolerance(change, gamma, tolerance) {
            break;
        }
    }
    let converged = within_tolerance(change, gamma, tolerance);
    Ok(SolveReport { q, sweeps, last_change: change, converged })
}

/// Greedy policy of `q`, ties to the lowest action index.
pub fn greedy_policy<T: Scalar>(q: &QFunction<T>) -> DeterministicPolicy {
    DeterministicPolicy { action_of: (0..q.num_states()).map(|s| q.greedy_action(s)).collect() }
}

/// Q-function of a fixed deterministic policy by iterating its Bellman
/// equation to within `tolerance` of the fixed point.
pub fn policy_evaluation<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &DeterministicPolicy,
    tolerance: T,
) -> Result<QFunction<T>> {
    if !(tolerance > T::zero()) {
        return Err(Error::config("policy evaluation tolerance must be positive"));
    }
    if policy.len() != mdp.num_states() {
        return Err(Error::Dimension(format!("policy covers {} states, MDP has {}", policy.len(), mdp.num_states())));
    }
    if let Some(&a) = policy.actions().iter().find(|&&a| a >= mdp.num_actions()) {
        return Err(Error::Dimension(format!("policy action {a} out of range")));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.discount();
    let mut q = QFunction::zeros(ns, na);
    let mut next = q.values.clone();
    // Enough sweeps for any tolerance above f64 round-off.
    let max_sweeps = sweep_budget(gamma, tolerance);
    for _ in 0..max_sweeps {
        let mut change = T::zero();
        for s in 0..ns {
            for a in 0..na {
                let backed = mdp.reward(s, a) + gamma * mdp.expected(s, a, |n| q.get(n, policy.action(n)));
                let idx = s * na + a;
                change = change.max((backed - q.values[idx]).abs());
                next[idx] = backed;
            }
        }
        std::mem::swap(&mut q.values, &mut next);
        if within_tolerance(change, gamma, tolerance) {
            break;
        }
    }
    Ok(q)
}

fn sweep_budget<T: Scalar>(gamma: T, tolerance: T) -> usize {
    let g = gamma.as_f64();
    if g <= 0.0 {
        return 2;
    }
    let needed = (tolerance.as_f64() * (1.0 - g) / 1e3).ln() / g.ln();
    (needed.ceil() as usize).clamp(10, 1_000_000) * 4
}

/// Sup-norm Bellman optimality residual of `q`.
pub fn bellman_residual<T: Scalar>(mdp: &TabularMdp<T>, q: &QFunction<T>) -> T {
    let v = q.state_values();
    let gamma = mdp.discount();
    let mut worst = T::zero();
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let backed = mdp.reward(s, a) + gamma * mdp.expected(s, a, |n| v[n]);
            worst = worst.max((backed - q.get(s, a)).abs());
        }
    }
    worst
}

/// True when `policy` is greedy (within `tolerance`) for its own Q-function,
/// i.e. it is an optimal policy of `mdp`.
pub fn is_optimal_policy<T: Scalar>(mdp: &TabularMdp<T>, policy: &DeterministicPolicy, tolerance: T) -> bool {
    let Ok(q) = policy_evaluation(mdp, policy, tolerance) else {
        return false;
    };
    (0..mdp.num_states()).all(|s| q.get(s, policy.action(s)) >= q.state_value(s) - tolerance * T::lit(4.0))
}
