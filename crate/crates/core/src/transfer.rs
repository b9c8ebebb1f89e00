//! Bisimulation policy transfer, bisimulation advantages and checks of the
//! value and advantage bounds the metric certifies.

use serde::{Deserialize, Serialize};

use crate::bisim::{state_metric, MetricVariant, PairwiseMetric};
use crate::error::{Error, Result};
use crate::mdp::{greedy_policy, policy_evaluation, DeterministicPolicy, QFunction, TabularMdp};
use crate::scalar::{argmax, argmin, Scalar};

/// Per-target-state result of matching against the source.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTable<T> {
    source_states: usize,
    target_states: usize,
    target_actions: usize,
    /// Source state maximising the lower bound, per target state.
    pub s_match: Vec<usize>,
    /// `LB(s1, s2) = V1*(s1) - d'(s1, s2)`, indexed `s1 * |S2| + s2`.
    pub lower_bound: Vec<T>,
    pub transferred_action: Vec<usize>,
    /// `-d(s_match(s2), s2, a2)`, indexed `s2 * |A2| + a2`.
    pub advantage: Vec<T>,
    /// `V1*(s_match(s2))`, kept for lower-bound Q initialisation.
    pub matched_value: Vec<T>,
}

impl<T: Scalar> TransferTable<T> {
    pub fn target_states(&self) -> usize {
        self.target_states
    }

    pub fn target_actions(&self) -> usize {
        self.target_actions
    }

    pub fn source_states(&self) -> usize {
        self.source_states
    }

    pub fn lower_bound(&self, s1: usize, s2: usize) -> T {
        self.lower_bound[s1 * self.target_states + s2]
    }

    /// Bisimulation advantage of every action in `s2`, before the
    /// state-constant `beta(s2)` offset.
    pub fn advantages(&self, s2: usize) -> &[T] {
        &self.advantage[s2 * self.target_actions..(s2 + 1) * self.target_actions]
    }

    pub fn transferred_policy(&self) -> DeterministicPolicy {
        DeterministicPolicy::new(self.transferred_action.clone(), self.target_actions)
            .expect("transferred actions are in range")
    }
}

/// Matches every target state to the source state with the best lower
/// bound and picks the target action closest to that state's optimal action.
pub fn compute_transfer<T: Scalar>(
    source_values: &[T],
    metric: &PairwiseMetric<T>,
    variant: MetricVariant,
) -> Result<TransferTable<T>> {
    let (ns1, ns2, na2) = (metric.source_states(), metric.target_states(), metric.target_actions());
    if source_values.len() != ns1 {
        return Err(Error::Dimension(format!(
            "{} source values for a metric over {ns1} source states",
            source_values.len()
        )));
    }
    let dprime = state_metric(metric, variant);
    let mut lower_bound = vec![T::zero(); ns1 * ns2];
    for s1 in 0..ns1 {
        for s2 in 0..ns2 {
            lower_bound[s1 * ns2 + s2] = source_values[s1] - dprime.get(s1, s2);
        }
    }
    let mut s_match = Vec::with_capacity(ns2);
    let mut transferred_action = Vec::with_capacity(ns2);
    let mut advantage = Vec::with_capacity(ns2 * na2);
    let mut matched_value = Vec::with_capacity(ns2);
    let mut column = vec![T::zero(); ns1];
    for s2 in 0..ns2 {
        for (s1, slot) in column.iter_mut().enumerate() {
            *slot = lower_bound[s1 * ns2 + s2];
        }
        let m = argmax(&column);
        let distances = metric.actions(m, s2);
        s_match.push(m);
        transferred_action.push(argmin(distances));
        advantage.extend(distances.iter().map(|&d| -d));
        matched_value.push(source_values[m]);
    }
    Ok(TransferTable {
        source_states: ns1,
        target_states: ns2,
        target_actions: na2,
        s_match,
        lower_bound,
        transferred_action,
        advantage,
        matched_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueBoundViolation {
    pub s1: usize,
    pub s2: usize,
    pub a2: usize,
    /// `|V1*(s1) - Q2*(s2, a2)|`
    pub gap: f64,
    pub distance: f64,
}

/// Every `(s1, s2, a2)` where `|V1*(s1) - Q2*(s2, a2)| > d(s1, s2, a2) + slack`.
pub fn verify_value_bound<T: Scalar>(
    source_values: &[T],
    target_q: &QFunction<T>,
    metric: &PairwiseMetric<T>,
    slack: T,
) -> Vec<ValueBoundViolation> {
    let mut out = Vec::new();
    for (s1, &v1) in source_values.iter().enumerate() {
        for s2 in 0..metric.target_states() {
            for a2 in 0..metric.target_actions() {
                let gap = (v1 - target_q.get(s2, a2)).abs();
                let distance = metric.get(s1, s2, a2);
                if gap > distance + slack {
                    out.push(ValueBoundViolation { s1, s2, a2, gap: gap.as_f64(), distance: distance.as_f64() });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvantageViolation {
    /// `A2*(s2, a2) < -d(s_match, s2, a2) - beta(s2) - slack`.
    LowerBound { s2: usize, a2: usize, advantage: f64, bound: f64 },
    /// The transferred action does not maximise the bisimulation advantage.
    ArgmaxMismatch { s2: usize, transferred: usize, best: usize },
}

/// Checks the optimal-advantage lower bound with `beta(s2)` taken at the
/// target's true optimal action, and that the transferred action is the
/// argmax of the bisimulation advantage.
pub fn verify_advantage_bound<T: Scalar>(
    target_q: &QFunction<T>,
    transfer: &TransferTable<T>,
    metric: &PairwiseMetric<T>,
    slack: T,
) -> Vec<AdvantageViolation> {
    let optimal = greedy_policy(target_q);
    let mut out = Vec::new();
    for s2 in 0..transfer.target_states() {
        let m = transfer.s_match[s2];
        let beta = metric.get(m, s2, optimal.action(s2));
        let shifted: Vec<T> = transfer.advantages(s2).iter().map(|&a| a - beta).collect();
        for (a2, &bound) in shifted.iter().enumerate() {
            let advantage = target_q.advantage(s2, a2);
            if advantage < bound - slack {
                out.push(AdvantageViolation::LowerBound {
                    s2,
                    a2,
                    advantage: advantage.as_f64(),
                    bound: bound.as_f64(),
                });
            }
        }
        let best = argmax(&shifted);
        let transferred = transfer.transferred_action[s2];
        if shifted[transferred] != shifted[best] {
            out.push(AdvantageViolation::ArgmaxMismatch { s2, transferred, best });
        }
    }
    out
}

/// How the transfer baseline seeds the learner's Q-table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QInitMode {
    /// Exact evaluation of the transferred policy in the target model.
    #[default]
    PolicyEvaluation,
    /// `V1*(s_match(s2)) - d(s_match(s2), s2, a2)`, the metric's lower
    /// bound on `Q2*`.
    LowerBound,
}

pub fn q_init_from_transfer<T: Scalar>(
    target: &TabularMdp<T>,
    transfer: &TransferTable<T>,
    tolerance: T,
) -> Result<QFunction<T>> {
    q_init_with_mode(target, transfer, tolerance, QInitMode::PolicyEvaluation)
}

pub fn q_init_with_mode<T: Scalar>(
    target: &TabularMdp<T>,
    transfer: &TransferTable<T>,
    tolerance: T,
    mode: QInitMode,
) -> Result<QFunction<T>> {
    if transfer.target_states() != target.num_states() || transfer.target_actions() != target.num_actions() {
        return Err(Error::Dimension("transfer table does not match the target MDP".into()));
    }
    match mode {
        QInitMode::PolicyEvaluation => policy_evaluation(target, &transfer.transferred_policy(), tolerance),
        QInitMode::LowerBound => {
            let na = target.num_actions();
            let values = (0..target.num_states())
                .flat_map(|s2| (0..na).map(move |a2| (s2, a2)))
                .map(|(s2, a2)| transfer.matched_value[s2] + transfer.advantage[s2 * na + a2])
                .collect();
            QFunction::from_values(target.num_states(), na, values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_bound_arithmetic() {
        let metric = PairwiseMetric::from_values(1, 1, 2, vec![0.3, 0.5]).unwrap();
        let t = compute_transfer(&[1.0], &metric, MetricVariant::Optimistic).unwrap();
        assert!((t.lower_bound(0, 0) - 0.7_f64).abs() < 1e-15);
        assert_eq!(t.transferred_action, vec![0]);
        assert_eq!(t.advantages(0), &[-0.3, -0.5]);
        let t = compute_transfer(&[1.0], &metric, MetricVariant::Pessimistic).unwrap();
        assert!((t.lower_bound(0, 0) - 0.5_f64).abs() < 1e-15);
    }

    #[test]
    fn match_prefers_best_bound() {
        // source state 1 has the higher value but is far from target state 0
        let metric = PairwiseMetric::from_values(2, 1, 2, vec![0.1, 0.2, 0.9, 0.4]).unwrap();
        let t = compute_transfer(&[0.5, 1.0], &metric, MetricVariant::Optimistic).unwrap();
        // LB = [0.4, 0.6]
        assert_eq!(t.s_match, vec![1]);
        assert_eq!(t.transferred_action, vec![1]);
        assert_eq!(t.matched_value, vec![1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let metric = PairwiseMetric::from_values(2, 1, 1, vec![0.0, 0.0]).unwrap();
        assert!(compute_transfer(&[1.0], &metric, MetricVariant::Optimistic).is_err());
    }
}
