//! Mean average reward, its area-under-curve percentage, transfer ratio and
//! aggregation over seeds.

use std::io::Write;

use crate::envs::Simulator;
use crate::error::{Error, Result};
use rand::Rng;

use crate::mdp::{DeterministicPolicy, QFunction, TabularMdp};
use crate::scalar::argmax_random_tie;

/// Average reward of one rollout of at most `horizon` steps from a fresh
/// reset, stopping early on entering a terminal state.
pub fn rollout_average(policy: &DeterministicPolicy, sim: &mut Simulator, horizon: usize) -> f64 {
    rollout_average_with(|s| policy.action(s), sim, horizon)
}

pub fn rollout_average_with(mut act: impl FnMut(usize) -> usize, sim: &mut Simulator, horizon: usize) -> f64 {
    let mut s = sim.reset();
    let mut total = 0.0;
    let mut steps = 0usize;
    while steps < horizon {
        let out = sim.step(act(s));
        total += out.reward;
        steps += 1;
        if out.terminal {
            break;
        }
        s = out.next_state;
    }
    total / steps as f64
}

/// Mean over `num_rollouts` rollouts of the per-trajectory average reward.
pub fn mar(policy: &DeterministicPolicy, sim: &mut Simulator, num_rollouts: usize, horizon: usize) -> f64 {
    mar_with_stats(policy, sim, num_rollouts, horizon).0
}

/// MAR of the greedy policy of `q`, ties broken uniformly with `rng`.
pub fn greedy_mar<R: Rng + ?Sized>(
    q: &QFunction<f64>,
    sim: &mut Simulator,
    rng: &mut R,
    num_rollouts: usize,
    horizon: usize,
) -> f64 {
    assert!(num_rollouts >= 1 && horizon >= 1, "need at least one rollout of one step");
    let total: f64 =
        (0..num_rollouts).map(|_| rollout_average_with(|s| argmax_random_tie(q.row(s), rng), sim, horizon)).sum();
    total / num_rollouts as f64
}

/// `(mean, standard error)` of the per-rollout averages.
pub fn mar_with_stats(
    policy: &DeterministicPolicy,
    sim: &mut Simulator,
    num_rollouts: usize,
    horizon: usize,
) -> (f64, f64) {
    assert!(num_rollouts >= 1 && horizon >= 1, "need at least one rollout of one step");
    let samples: Vec<f64> = (0..num_rollouts).map(|_| rollout_average(policy, sim, horizon)).collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact expectation of [`mar`] under the model.
///
/// `h(s, t)` is the expected reciprocal trajectory length given the agent is
/// alive in `s` before step `t`; the result is
/// `sum_t sum_s P(alive in s at t) * R(s, pi(s)) * h(s, t)`.
pub fn expected_mar(mdp: &TabularMdp<f64>, policy: &DeterministicPolicy, horizon: usize) -> f64 {
    let na = mdp.num_actions();
    let mut probs = vec![0.0; mdp.num_states() * na];
    for s in 0..mdp.num_states() {
        probs[s * na + policy.action(s)] = 1.0;
    }
    expected_mar_stochastic(mdp, &probs, horizon)
}

/// [`expected_mar`] for a stationary stochastic policy given as action
/// probabilities indexed `s * A + a`.
pub fn expected_mar_stochastic(mdp: &TabularMdp<f64>, probs: &[f64], horizon: usize) -> f64 {
    assert!(horizon >= 1);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    assert_eq!(probs.len(), ns * na);
    // h[t][s * A + a]: expected 1/T after taking `a` in `s` at step `t`
    let mut h = vec![vec![0.0; ns * na]; horizon];
    for t in (0..horizon).rev() {
        let len = (t + 1) as f64;
        for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
            for a in 0..na {
                h[t][s * na + a] = mdp
                    .row(s, a)
                    .iter()
                    .map(|&(next, p)| {
                        let stop = mdp.is_terminal(next) || t + 1 == horizon;
                        let rest = if stop {
                            1.0 / len
                        } else {
                            (0..na).map(|b| probs[next * na + b] * h[t + 1][next * na + b]).sum()
                        };
                        p * rest
                    })
                    .sum();
            }
        }
    }
    let mut alive: Vec<f64> = mdp.initial_distribution().to_vec();
    let mut total = 0.0;
    for ht in &h {
        let mut next_alive = vec![0.0; ns];
        for s in (0..ns).filter(|&s| alive[s] > 0.0) {
            for a in (0..na).filter(|&a| probs[s * na + a] > 0.0) {
                let mass = alive[s] * probs[s * na + a];
                total += mass * mdp.reward(s, a) * ht[s * na + a];
                for &(next, p) in mdp.row(s, a) {
                    if !mdp.is_terminal(next) {
                        next_alive[next] += mass * p;
                    }
                }
            }
        }
        alive = next_alive;
    }
    total
}

/// `100 * mean(curve) / optimal_mar` over uniformly spaced checkpoints.
pub fn auc_mar_percent(curve: &[(u64, f64)], optimal_mar: f64) -> Result<f64> {
    if !(optimal_mar > 0.0) {
        return Err(Error::Undefined(format!("AuC-MAR percentage needs a positive optimal MAR, got {optimal_mar}")));
    }
    if curve.is_empty() {
        return Err(Error::Undefined("AuC-MAR of an empty curve".into()));
    }
    if curve.len() > 2 {
        let gap = curve[1].0 - curve[0].0;
        if curve.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].0 - w[0].0 != gap) {
            return Err(Error::Undefined("checkpoints are not uniformly spaced".into()));
        }
    }
    let mean = curve.iter().map(|&(_, m)| m).sum::<f64>() / curve.len() as f64;
    Ok(100.0 * mean / optimal_mar)
}

/// Relative AuC improvement in percent.
pub fn transfer_ratio(auc_with: f64, auc_without: f64) -> Result<f64> {
    if !(auc_without > 0.0) {
        return Err(Error::Undefined(format!("transfer ratio against a baseline AuC of {auc_without}")));
    }
    Ok(100.0 * (auc_with - auc_without) / auc_without)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
}

/// MAR curves of several seeds aggregated pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MarCurve {
    pub points: Vec<CurvePoint>,
    pub num_seeds: usize,
}

impl MarCurve {
    pub fn aggregate(runs: &[Vec<(u64, f64)>]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Undefined("no runs to aggregate".into()))?;
        if runs.iter().any(|r| r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.0 != b.0)) {
            return Err(Error::Dimension("runs use different checkpoints".into()));
        }
        let points = first
            .iter()
            .enumerate()
            .map(|(i, &(step, _))| {
                let values: Vec<f64> = runs.iter().map(|r| r[i].1).collect();
                let (mean, std) = mean_std(&values);
                CurvePoint { step, mean, std }
            })
            .collect();
        Ok(Self { points, num_seeds: runs.len() })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,mean,std,seeds")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{}", p.step, p.mean, p.std, self.num_seeds)?;
        }
        Ok(())
    }
}

pub fn write_run_csv<W: Write>(curve: &[(u64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "step,mar")?;
    for (step, m) in curve {
        writeln!(out, "{step},{m}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::envs::{build_rooms, Variant};
    use crate::mdp::{greedy_policy, value_iteration};

    fn constant_reward_loop(r: f64) -> TabularMdp<f64> {
        TabularMdp::new(1, 1, vec![vec![(0, 1.0)]], vec![r], 0.9, vec![false], vec![1.0]).unwrap()
    }

    #[test]
    fn constant_reward_gives_that_reward() {
        let mdp = Arc::new(constant_reward_loop(0.7));
        let pi = DeterministicPolicy::new(vec![0], 1).unwrap();
        let mut sim = Simulator::new(Arc::clone(&mdp), 3);
        assert!((mar(&pi, &mut sim, 5, 50) - 0.7).abs() < 1e-12);
        assert!((expected_mar(&mdp, &pi, 50) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn two_step_trajectory() {
        // 0 -> 1 -> terminal 2, rewards 0 then 1
        let mdp = TabularMdp::new(
            3,
            1,
            vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(2, 1.0)]],
            vec![0.0, 1.0, 0.0],
            0.9,
            vec![false, false, true],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let pi = DeterministicPolicy::new(vec![0, 0, 0], 1).unwrap();
        let mut sim = Simulator::new(Arc::new(mdp.clone()), 0);
        assert_eq!(mar(&pi, &mut sim, 1, 10), 0.5);
        assert_eq!(expected_mar(&mdp, &pi, 10), 0.5);
        // horizon 1 cuts before the reward
        assert_eq!(expected_mar(&mdp, &pi, 1), 0.0);
    }

    #[test]
    fn monte_carlo_matches_exact_expectation() {
        let (_, mdp) = build_rooms(2, 2, 5, Variant::Default, 0.95).unwrap();
        let pi = greedy_policy(&value_iteration(&mdp, 1e-10, 10_000).unwrap().q);
        let exact = expected_mar(&mdp, &pi, 200);
        let mut sim = Simulator::new(Arc::new(mdp), 17);
        let (mean, se) = mar_with_stats(&pi, &mut sim, 10_000, 200);
        assert!(exact > 0.0);
        assert!((mean - exact).abs() <= 2.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn stochastic_expectation_matches_rollouts() {
        let (_, mdp) = build_rooms(2, 2, 5, Variant::Default, 0.95).unwrap();
        let q = QFunction::<f64>::zeros(mdp.num_states(), mdp.num_actions());
        let uniform = vec![0.25; mdp.num_states() * 4];
        let exact = expected_mar_stochastic(&mdp, &uniform, 60);
        let mut sim = Simulator::new(Arc::new(mdp), 5);
        let mut rng = crate::envs::rng_stream(5, 9);
        let n = 20_000;
        let samples: Vec<f64> =
            (0..n).map(|_| rollout_average_with(|s| argmax_random_tie(q.row(s), &mut rng), &mut sim, 60)).collect();
        let (mean, sd) = mean_std(&samples);
        let se = sd / (n as f64).sqrt();
        assert!((mean - exact).abs() <= 2.0 * se, "{mean} vs {exact} (se {se})");
        assert!(exact > 0.0);
    }

    #[test]
    fn auc_examples() {
        assert!((auc_mar_percent(&[(0, 0.8), (10, 0.8), (20, 0.8)], 0.8).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(auc_mar_percent(&[(0, 0.4), (10, 0.4)], 0.8).unwrap(), 50.0);
        assert!((auc_mar_percent(&[(0, 0.2), (10, 0.6)], 0.8).unwrap() - 50.0).abs() < 1e-12);
        assert!(auc_mar_percent(&[(0, 0.2)], 0.0).is_err());
        assert!(auc_mar_percent(&[(0, 0.2), (10, 0.2), (30, 0.2)], 1.0).is_err());
    }

    #[test]
    fn transfer_ratio_examples() {
        assert_eq!(transfer_ratio(75.0, 60.0).unwrap(), 25.0);
        assert_eq!(transfer_ratio(61.0, 61.0).unwrap(), 0.0);
        assert!(transfer_ratio(1.0, 0.0).is_err());
        let tr = transfer_ratio(76.10, 61.91).unwrap();
        assert!((tr - 22.92).abs() < 0.005);
    }

    #[test]
    fn aggregation_uses_population_std() {
        let runs = vec![vec![(0, 1.0), (5, 2.0)], vec![(0, 3.0), (5, 2.0)]];
        let c = MarCurve::aggregate(&runs).unwrap();
        assert_eq!(c.points[0], CurvePoint { step: 0, mean: 2.0, std: 1.0 });
        assert_eq!(c.points[1].std, 0.0);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,mean,std,seeds\n0,2,1,2\n5,2,0,2\n");
        assert!(MarCurve::aggregate(&[vec![(0, 1.0)], vec![(1, 1.0)]]).is_err());
    }
}
