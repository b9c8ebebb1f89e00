//! Lax-bisimulation distances between a source MDP (with a known optimal
//! policy) and a target MDP.
//!
//! The metric is kept on the restricted table `d(s1, s2, a2)`, the distance
//! between the source pair `(s1, pi1*(s1))` and the target pair `(s2, a2)`.
//! One application of the operator reads only the previous iterate:
//!
//! ```text
//! d'(s1, s2)      = min_a2 d(s1, s2, a2)        (optimistic)
//!                 | max_a2 d(s1, s2, a2)        (pessimistic)
//! d(s1, s2, a2)  <- c_R |R1(s1, pi1(s1)) - R2(s2, a2)|
//!                  + c_T W_{d'}(P1(s1, pi1(s1)), P2(s2, a2))
//! ```
//!
//! where `W_{d'}` is the Kantorovich distance under ground cost `d'`.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, TabularMdp};
use crate::ot::TransportSolver;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricVariant {
    #[default]
    Optimistic,
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisimConfig<T> {
    /// `c_R`
    pub reward_weight: T,
    /// `c_T`
    pub transition_weight: T,
    /// Sup-norm change at which iteration stops.
    pub threshold: T,
    pub max_iterations: usize,
    pub variant: MetricVariant,
}

impl<T: Scalar> BisimConfig<T> {
    /// Transfer weights used for the rooms experiments: `c_T = 0.9`,
    /// threshold 0.01 and five iterations, with the per-environment `c_R`.
    pub fn tuned(reward_weight: f64) -> Self {
        Self {
            reward_weight: T::lit(reward_weight),
            transition_weight: T::lit(0.9),
            threshold: T::lit(0.01),
            max_iterations: 5,
            variant: MetricVariant::Optimistic,
        }
    }

    /// Weights `(1, gamma)` under which the metric bounds value
    /// differences, iterated to a tight fixed point.
    pub fn value_bounding(discount: T, variant: MetricVariant) -> Self {
        Self {
            reward_weight: T::one(),
            transition_weight: discount,
            threshold: T::lit(1e-9),
            max_iterations: 100_000,
            variant,
        }
    }

    pub fn with_variant(mut self, variant: MetricVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reward_weight >= T::zero()) || !(self.transition_weight >= T::zero()) {
            return Err(Error::config("c_R and c_T must be non-negative"));
        }
        if !(self.threshold > T::zero()) {
            return Err(Error::config("bisimulation threshold must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("at least one fixed-point iteration is required"));
        }
        Ok(())
    }

    /// Gap between a stopped iterate and the least fixed point when
    /// `c_T < 1`: `threshold / (1 - c_T)`.
    pub fn slack(&self) -> T {
        if self.transition_weight < T::one() {
            self.threshold / (T::one() - self.transition_weight)
        } else {
            T::infinity()
        }
    }
}

/// `d(s1, s2, a2)` as a dense table plus convergence bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMetric<T> {
    source_states: usize,
    target_states: usize,
    target_actions: usize,
    d: Vec<T>,
    pub iterations_run: usize,
    pub converged: bool,
    pub sup_change_last: T,
}

impl<T: Scalar> PairwiseMetric<T> {
    pub fn from_values(source_states: usize, target_states: usize, target_actions: usize, d: Vec<T>) -> Result<Self> {
        if d.len() != source_states * target_states * target_actions {
            return Err(Error::Dimension(format!(
                "{} entries for a {source_states}x{target_states}x{target_actions} metric",
                d.len()
            )));
        }
        Ok(Self {
            source_states,
            target_states,
            target_actions,
            d,
            iterations_run: 0,
            converged: false,
            sup_change_last: T::infinity(),
        })
    }

    pub fn source_states(&self) -> usize {
        self.source_states
    }

    pub fn target_states(&self) -> usize {
        self.target_states
    }

    pub fn target_actions(&self) -> usize {
        self.target_actions
    }

    #[inline]
    pub fn get(&self, s1: usize, s2: usize, a2: usize) -> T {
        self.d[(s1 * self.target_states + s2) * self.target_actions + a2]
    }

    /// `d(s1, s2, .)` over target actions.
    #[inline]
    pub fn actions(&self, s1: usize, s2: usize) -> &[T] {
        let start = (s1 * self.target_states + s2) * self.target_actions;
        &self.d[start..start + self.target_actions]
    }

    pub fn values(&self) -> &[T] {
        &self.d
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.d.iter().zip(&other.d).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }
}

/// `d'(s1, s2)`, the reduction of a pairwise metric over target actions.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMetric<T> {
    target_states: usize,
    dprime: Vec<T>,
    pub variant: MetricVariant,
}

impl<T: Scalar> StateMetric<T> {
    #[inline]
    pub fn get(&self, s1: usize, s2: usize) -> T {
        self.dprime[s1 * self.target_states + s2]
    }

    pub fn values(&self) -> &[T] {
        &self.dprime
    }
}

pub fn state_metric<T: Scalar>(metric: &PairwiseMetric<T>, variant: MetricVariant) -> StateMetric<T> {
    let mut dprime = Vec::with_capacity(metric.source_states * metric.target_states);
    reduce_into(&metric.d, metric.target_actions, variant, &mut dprime);
    StateMetric { target_states: metric.target_states, dprime, variant }
}

fn reduce_into<T: Scalar>(d: &[T], actions: usize, variant: MetricVariant, out: &mut Vec<T>) {
    out.clear();
    out.extend(d.chunks_exact(actions).map(|row| match variant {
        MetricVariant::Optimistic => row.iter().copied().fold(T::infinity(), T::min),
        MetricVariant::Pessimistic => row.iter().copied().fold(T::neg_infinity(), T::max),
    }));
}

/// Iterates the restricted lax-bisimulation operator from the zero metric
/// until the sup-norm change drops to `config.threshold` or the iteration
/// budget runs out. Non-convergence is reported, not an error.
pub fn lax_bisim_metric<T: Scalar>(
    source: &TabularMdp<T>,
    source_policy: &DeterministicPolicy,
    target: &TabularMdp<T>,
    config: &BisimConfig<T>,
) -> Result<PairwiseMetric<T>> {
    lax_bisim_metric_traced(source, source_policy, target, config, |_, _| {})
}

/// As [`lax_bisim_metric`], calling `observe(iteration, &iterate)` after
/// every application of the operator.
pub fn lax_bisim_metric_traced<T: Scalar>(
    source: &TabularMdp<T>,
    source_policy: &DeterministicPolicy,
    target: &TabularMdp<T>,
    config: &BisimConfig<T>,
    mut observe: impl FnMut(usize, &PairwiseMetric<T>),
) -> Result<PairwiseMetric<T>> {
    config.validate()?;
    if source_policy.len() != source.num_states() || source_policy.actions().iter().any(|&a| a >= source.num_actions())
    {
        return Err(Error::Dimension("source policy does not match the source MDP".into()));
    }
    debug_assert!(
        crate::mdp::is_optimal_policy(source, source_policy, T::lit(1e-6)),
        "source policy is not optimal for the source MDP"
    );

    let (ns1, ns2, na2) = (source.num_states(), target.num_states(), target.num_actions());
    let slab = ns2 * na2;
    let mut reward_term = Vec::with_capacity(ns1 * slab);
    for s1 in 0..ns1 {
        let r1 = source.reward(s1, source_policy.action(s1));
        for s2 in 0..ns2 {
            for a2 in 0..na2 {
                reward_term.push(config.reward_weight * (r1 - target.reward(s2, a2)).abs());
            }
        }
    }

    let mut metric = PairwiseMetric::from_values(ns1, ns2, na2, vec![T::zero(); ns1 * slab])?;
    let mut next = vec![T::zero(); ns1 * slab];
    let mut dprime = Vec::with_capacity(ns1 * ns2);
    let c_t = config.transition_weight;

    for iteration in 1..=config.max_iterations {
        reduce_into(&metric.d, na2, config.variant, &mut dprime);
        let ground = &dprime;
        next.par_chunks_mut(slab).enumerate().for_each_init(TransportSolver::new, |solver, (s1, out)| {
            let p1 = source.row(s1, source_policy.action(s1));
            for s2 in 0..ns2 {
                for a2 in 0..na2 {
                    let k = s2 * na2 + a2;
                    let mut value = reward_term[s1 * slab + k];
                    if c_t > T::zero() {
                        let w = solver.distance(p1, target.row(s2, a2), |x, y| ground[x * ns2 + y]);
                        value = value + c_t * w;
                    }
                    out[k] = value;
                }
            }
        });
        let change = metric.d.iter().zip(&next).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
        std::mem::swap(&mut metric.d, &mut next);
        metric.iterations_run = iteration;
        metric.sup_change_last = change;
        metric.converged = change <= config.threshold;
        observe(iteration, &metric);
        if metric.converged {
            break;
        }
    }
    Ok(metric)
}

/// Content hash of everything the metric depends on, used as cache key.
pub fn cache_key<T: Scalar>(
    source: &TabularMdp<T>,
    source_policy: &DeterministicPolicy,
    target: &TabularMdp<T>,
    config: &BisimConfig<T>,
) -> String {
    fn feed_mdp<T: Scalar>(h: &mut Sha256, mdp: &TabularMdp<T>) {
        h.update((mdp.num_states() as u64).to_le_bytes());
        h.update((mdp.num_actions() as u64).to_le_bytes());
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                h.update(mdp.reward(s, a).as_f64().to_bits().to_le_bytes());
                let row = mdp.row(s, a);
                h.update((row.len() as u64).to_le_bytes());
                for &(n, p) in row {
                    h.update((n as u64).to_le_bytes());
                    h.update(p.as_f64().to_bits().to_le_bytes());
                }
            }
        }
    }
    let mut h = Sha256::new();
    h.update(b"extra-metric-v1");
    feed_mdp(&mut h, source);
    for &a in source_policy.actions() {
        h.update((a as u64).to_le_bytes());
    }
    feed_mdp(&mut h, target);
    for x in [config.reward_weight, config.transition_weight, config.threshold] {
        h.update(x.as_f64().to_bits().to_le_bytes());
    }
    h.update((config.max_iterations as u64).to_le_bytes());
    h.update([config.variant as u8]);
    hex::encode(h.finalize())
}

const CSV_MAGIC: &str = "# extra-metric v1";
const CSV_END: &str = "# end";

/// Writes the metric as CSV (`s1,s2,a2,d`) behind a two-line comment header
/// carrying the dimensions and convergence record.
pub fn write_metric_csv<T: Scalar, W: Write>(metric: &PairwiseMetric<T>, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_MAGIC}")?;
    writeln!(
        out,
        "# source_states={} target_states={} target_actions={} iterations_run={} converged={} sup_change_last={}",
        metric.source_states,
        metric.target_states,
        metric.target_actions,
        metric.iterations_run,
        metric.converged,
        metric.sup_change_last.as_f64()
    )?;
    writeln!(out, "s1,s2,a2,d")?;
    for s1 in 0..metric.source_states {
        for s2 in 0..metric.target_states {
            for (a2, &d) in metric.actions(s1, s2).iter().enumerate() {
                writeln!(out, "{s1},{s2},{a2},{}", d.as_f64())?;
            }
        }
    }
    writeln!(out, "{CSV_END}")?;
    Ok(())
}

pub fn read_metric_csv<T: Scalar, R: BufRead>(input: R, origin: &str) -> Result<PairwiseMetric<T>> {
    let corrupt = |reason: String| Error::CacheCorrupt { path: origin.to_string(), reason };
    let mut lines = input.lines();
    let mut next_line = || -> Result<Option<String>> { lines.next().transpose().map_err(Error::from) };
    if next_line()?.as_deref() != Some(CSV_MAGIC) {
        return Err(corrupt("missing header".into()));
    }
    let meta = next_line()?.ok_or_else(|| corrupt("missing metadata".into()))?;
    let mut fields = std::collections::HashMap::new();
    for kv in meta.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = kv.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let num = |k: &str| -> Result<usize> {
        fields.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| corrupt(format!("bad or missing {k}")))
    };
    let (ns1, ns2, na2) = (num("source_states")?, num("target_states")?, num("target_actions")?);
    let iterations_run = num("iterations_run")?;
    let converged = fields.get("converged").map(|v| v == "true").unwrap_or(false);
    let sup: f64 = fields
        .get("sup_change_last")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("bad sup_change_last".into()))?;
    if next_line()?.as_deref() != Some("s1,s2,a2,d") {
        return Err(corrupt("missing column header".into()));
    }
    let total = ns1 * ns2 * na2;
    let mut d = Vec::with_capacity(total);
    let mut ended = false;
    while let Some(line) = next_line()? {
        if line == CSV_END {
            ended = true;
            break;
        }
        let mut parts = line.split(',');
        let expect = d.len();
        let idx = [expect / (ns2 * na2), (expect / na2) % ns2, expect % na2];
        for want in idx {
            let got: Option<usize> = parts.next().and_then(|p| p.parse().ok());
            if got != Some(want) {
                return Err(corrupt(format!("row {} out of order", expect + 1)));
            }
        }
        let value: f64 = parts
            .next()
            .and_then(|p| p.parse().ok())
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| corrupt(format!("bad distance on row {}", expect + 1)))?;
        d.push(T::lit(value));
        if d.len() > total {
            return Err(corrupt("too many rows".into()));
        }
    }
    if !ended {
        return Err(corrupt("missing end marker".into()));
    }
    if d.len() != total {
        return Err(corrupt(format!("{} rows, expected {total}", d.len())));
    }
    let mut metric = PairwiseMetric::from_values(ns1, ns2, na2, d)?;
    metric.iterations_run = iterations_run;
    metric.converged = converged;
    metric.sup_change_last = T::lit(sup);
    Ok(metric)
}

pub fn save_metric<T: Scalar>(metric: &PairwiseMetric<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_metric_csv(metric, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_metric<T: Scalar>(path: &Path) -> Result<PairwiseMetric<T>> {
    let file = std::fs::File::open(path)?;
    read_metric_csv(std::io::BufReader::new(file), &path.display().to_string())
}
