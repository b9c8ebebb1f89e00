//! Multi-seed experiment runner: configuration, metric caching, parallel
//! runs and CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bisim::{cache_key, lax_bisim_metric, load_metric, save_metric, BisimConfig, MetricVariant, PairwiseMetric};
use crate::envs::{EnvDescriptor, Environment, Variant};
use crate::error::{Error, Result};
use crate::explore::{Annealing, Strategy, StrategyConfig};
use crate::learner::{q_learning_run, Behaviour, LearnConfig, RunResult};
use crate::mdp::{greedy_policy, value_iteration, DeterministicPolicy, QFunction, TabularMdp};
use crate::metrics::{expected_mar, mean_std, transfer_ratio, write_run_csv, MarCurve};
use crate::transfer::{compute_transfer, q_init_with_mode, QInitMode, TransferTable};

/// Value-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_sweeps: 10_000 }
    }
}

/// Metric weights under their conventional names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BisimParams {
    pub c_r: f64,
    pub c_t: f64,
    pub threshold: f64,
    pub iterations: usize,
    pub variant: MetricVariant,
}

/// Iteration cap for experiment metrics; runs stop at the threshold long
/// before this on the built-in layouts.
pub const METRIC_ITERATION_CAP: usize = 1000;

impl Default for BisimParams {
    fn default() -> Self {
        Self { iterations: METRIC_ITERATION_CAP, ..Self::from_config(&BisimConfig::tuned(0.1)) }
    }
}

impl BisimParams {
    pub fn with_c_r(c_r: f64) -> Self {
        Self { c_r, ..Self::default() }
    }

    pub fn from_config(c: &BisimConfig<f64>) -> Self {
        Self {
            c_r: c.reward_weight,
            c_t: c.transition_weight,
            threshold: c.threshold,
            iterations: c.max_iterations,
            variant: c.variant,
        }
    }

    pub fn to_config(&self) -> BisimConfig<f64> {
        BisimConfig {
            reward_weight: self.c_r,
            transition_weight: self.c_t,
            threshold: self.threshold,
            max_iterations: self.iterations,
            variant: self.variant,
        }
    }
}

/// Optional replacements for [`StrategyConfig`] fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_bisim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pursuit_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mbie_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_tau0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annealing: Option<Annealing>,
}

impl StrategyOverrides {
    pub fn apply(&self, mut c: StrategyConfig) -> StrategyConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(epsilon, epsilon_bisim, temperature, pursuit_beta, mbie_beta, extra_alpha, extra_tau0, annealing);
        c
    }
}

/// Global `[strategy]` section: a default strategy name for single-arm
/// experiments plus overrides applied to every arm.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<Strategy>,
    #[serde(flatten)]
    pub overrides: StrategyOverrides,
}

/// One learner configuration run over every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub strategy: Strategy,
    /// Source for this arm, replacing the experiment-wide one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EnvDescriptor>,
    /// Seed the Q-table from the transferred policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_init: Option<QInitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Arm whose AuC is the denominator of this arm's transfer ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(flatten)]
    pub params: StrategyOverrides,
}

const ARM_KEYS: &[&str] = &[
    "name",
    "strategy",
    "source",
    "q_init",
    "learning_rate",
    "baseline",
    "epsilon",
    "epsilon_bisim",
    "temperature",
    "pursuit_beta",
    "mbie_beta",
    "extra_alpha",
    "extra_tau0",
    "annealing",
];

impl ArmConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            name: None,
            strategy,
            source: None,
            q_init: None,
            learning_rate: None,
            baseline: None,
            params: StrategyOverrides::default(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn with_source(mut self, source: EnvDescriptor) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_baseline(mut self, baseline: &str) -> Self {
        self.baseline = Some(baseline.to_string());
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| match self.q_init {
            Some(_) => format!("{}_qinit", self.strategy),
            None => self.strategy.to_string(),
        })
    }

    fn needs_transfer(&self) -> bool {
        self.strategy.uses_transfer() || self.q_init.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EnvDescriptor>,
    pub target: EnvDescriptor,
    #[serde(default)]
    pub bisim: BisimParams,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub learn: LearnConfig,
    #[serde(default, rename = "arm")]
    pub arms: Vec<ArmConfig>,
}

impl ExperimentConfig {
    pub fn new(name: &str, target: EnvDescriptor) -> Self {
        Self {
            name: name.to_string(),
            seeds: (0..10).collect(),
            out: None,
            source: None,
            target,
            bisim: BisimParams::default(),
            solver: SolverParams::default(),
            strategy: StrategySection::default(),
            learn: LearnConfig::default(),
            arms: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::config(format!("experiment config: {e}")))?;
        Self::from_table(value)
    }

    /// Parses a config after applying `key.path=value` overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::config(format!("experiment config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        if let Some(toml::Value::Array(arms)) = table.get("arm") {
            for (i, arm) in arms.iter().enumerate() {
                if let toml::Value::Table(t) = arm {
                    if let Some(k) = t.keys().find(|k| !ARM_KEYS.contains(&k.as_str())) {
                        return Err(Error::config(format!("arm {i}: unknown key `{k}`")));
                    }
                }
            }
        }
        let cfg: Self =
            toml::Value::Table(table).try_into().map_err(|e| Error::config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    /// Applies `key.path=value` overrides to an already parsed config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Arms to run; a lone `[strategy] name` yields one arm.
    pub fn resolved_arms(&self) -> Vec<ArmConfig> {
        if self.arms.is_empty() {
            self.strategy.name.map(|s| vec![ArmConfig::new(s)]).unwrap_or_default()
        } else {
            self.arms.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::config(format!("seed {dup} is listed twice")));
        }
        self.learn.validate()?;
        self.bisim.to_config().validate()?;
        let arms = self.resolved_arms();
        if arms.is_empty() {
            return Err(Error::config("no arms: add [[arm]] tables or set strategy.name"));
        }
        let labels: Vec<String> = arms.iter().map(ArmConfig::label).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::config(format!("arm name `{l}` is used twice")));
            }
        }
        for arm in &arms {
            self.strategy_config(arm).validate()?;
            if arm.needs_transfer() && arm.source.is_none() && self.source.is_none() {
                return Err(Error::config(format!("arm `{}` needs a source environment", arm.label())));
            }
            if let Some(b) = &arm.baseline {
                if !labels.contains(b) {
                    return Err(Error::config(format!("arm `{}` names unknown baseline `{b}`", arm.label())));
                }
            }
        }
        Ok(())
    }

    pub fn strategy_config(&self, arm: &ArmConfig) -> StrategyConfig {
        arm.params.apply(self.strategy.overrides.apply(StrategyConfig::for_strategy(arm.strategy)))
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `value`,
/// parsed as a TOML value or, failing that, taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("bad override key `{path}`")));
    }
    let mut node = table;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if last {
            node.insert(key.to_string(), value);
            return Ok(());
        }
        let entry = node.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            toml::Value::Array(items) => {
                let idx: usize = keys[i + 1]
                    .parse()
                    .map_err(|_| Error::config(format!("`{key}` is a list; index it by number in `{path}`")))?;
                let len = items.len();
                let item = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(format!("`{key}` has {len} entries, no index {idx}")))?;
                if i + 2 == keys.len() {
                    *item = value;
                    return Ok(());
                }
                return apply_override(
                    item.as_table_mut().ok_or_else(|| Error::config(format!("`{key}.{idx}` is not a table")))?,
                    &format!("{}={raw}", keys[i + 2..].join(".")),
                );
            }
            _ => return Err(Error::config(format!("`{key}` in `{path}` is not a table"))),
        };
    }
    unreachable!("loop returns on the last key")
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// An environment with its optimal solution.
#[derive(Debug, Clone)]
pub struct SolvedEnv {
    pub env: Environment,
    pub q: QFunction<f64>,
    pub policy: DeterministicPolicy,
    pub sweeps: usize,
}

impl SolvedEnv {
    pub fn mdp(&self) -> &TabularMdp<f64> {
        &self.env.mdp
    }

    pub fn values(&self) -> Vec<f64> {
        self.q.state_values()
    }

    pub fn optimal_mar(&self, horizon: usize) -> f64 {
        expected_mar(&self.env.mdp, &self.policy, horizon)
    }
}

pub fn solve_env(descriptor: &EnvDescriptor, solver: &SolverParams) -> Result<SolvedEnv> {
    let env = descriptor.build()?;
    let report = value_iteration(&env.mdp, solver.tolerance, solver.max_sweeps)?;
    if !report.converged {
        warn!("value iteration stopped after {} sweeps with change {}", report.sweeps, report.last_change);
    }
    let policy = greedy_policy(&report.q);
    Ok(SolvedEnv { env, q: report.q, policy, sweeps: report.sweeps })
}

/// Metric with provenance.
#[derive(Debug, Clone)]
pub struct MetricRecord {
    pub key: String,
    pub metric: PairwiseMetric<f64>,
    pub from_cache: bool,
}

pub fn metric_cache_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("metric-{}.csv", &key[..key.len().min(16)]))
}

/// Computes the metric, reading and writing `cache_dir` when given. A
/// corrupt cache file is recomputed and overwritten.
pub fn cached_metric(
    source: &SolvedEnv,
    target: &TabularMdp<f64>,
    params: &BisimParams,
    cache_dir: Option<&Path>,
) -> Result<MetricRecord> {
    let config = params.to_config();
    let key = cache_key(source.mdp(), &source.policy, target, &config);
    let path = cache_dir.map(|d| metric_cache_path(d, &key));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        match load_metric::<f64>(p) {
            Ok(metric) => return Ok(MetricRecord { key, metric, from_cache: true }),
            Err(e @ Error::CacheCorrupt { .. }) => warn!("{e}; recomputing"),
            Err(e) => return Err(e),
        }
    }
    let start = Instant::now();
    let metric = lax_bisim_metric(source.mdp(), &source.policy, target, &config)?;
    info!(
        "metric {}x{}x{} computed in {:.2?} ({} iterations, converged: {})",
        metric.source_states(),
        metric.target_states(),
        metric.target_actions(),
        start.elapsed(),
        metric.iterations_run,
        metric.converged
    );
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        save_metric(&metric, p)?;
    }
    Ok(MetricRecord { key, metric, from_cache: false })
}

#[derive(Debug, Clone)]
pub struct ArmReport {
    pub label: String,
    pub strategy: Strategy,
    pub runs: Vec<RunResult>,
    pub curve: MarCurve,
    /// Mean and population std of AuC-MAR percent; absent when the optimal
    /// MAR is not positive.
    pub auc: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRatioRow {
    pub arm: String,
    pub baseline: String,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct SourceReport {
    pub label: String,
    pub metric_key: String,
    pub iterations: usize,
    pub converged: bool,
    pub sup_change: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub optimal_mar: f64,
    pub arms: Vec<ArmReport>,
    pub transfer_ratios: Vec<TransferRatioRow>,
    pub sources: Vec<SourceReport>,
}

impl ExperimentReport {
    pub fn arm(&self, label: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn auc_mean(&self, label: &str) -> Option<f64> {
        self.arm(label).and_then(|a| a.auc).map(|(m, _)| m)
    }
}

struct PreparedSource {
    transfer: TransferTable<f64>,
}

/// Runs every arm over every seed. Metrics are cached under `cache_dir`.
pub fn run_experiment(config: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let target = solve_env(&config.target, &config.solver)?;
    let optimal_mar = target.optimal_mar(config.learn.eval_horizon);
    if !(optimal_mar > 0.0) {
        warn!("optimal MAR is {optimal_mar}; AuC-MAR and transfer ratios are undefined");
    }
    let arms = config.resolved_arms();

    // One transfer table per distinct source.
    let mut sources: Vec<(EnvDescriptor, PreparedSource)> = Vec::new();
    let mut source_reports = Vec::new();
    for arm in arms.iter().filter(|a| a.needs_transfer()) {
        let desc = arm.source.clone().or_else(|| config.source.clone()).expect("validated");
        if sources.iter().any(|(d, _)| *d == desc) {
            continue;
        }
        let solved = solve_env(&desc, &config.solver)?;
        let record = cached_metric(&solved, target.mdp(), &config.bisim, cache_dir)?;
        let transfer = compute_transfer(&solved.values(), &record.metric, config.bisim.variant)?;
        source_reports.push(SourceReport {
            label: describe(&desc),
            metric_key: record.key.clone(),
            iterations: record.metric.iterations_run,
            converged: record.metric.converged,
            sup_change: record.metric.sup_change_last,
        });
        sources.push((desc, PreparedSource { transfer }));
    }
    let transfer_for = |arm: &ArmConfig| -> Option<&TransferTable<f64>> {
        let desc = arm.source.as_ref().or(config.source.as_ref())?;
        sources.iter().find(|(d, _)| d == desc).map(|(_, p)| &p.transfer)
    };

    let mut q_inits: Vec<Option<QFunction<f64>>> = Vec::with_capacity(arms.len());
    for arm in &arms {
        q_inits.push(match (arm.q_init, transfer_for(arm)) {
            (Some(mode), Some(t)) => Some(q_init_with_mode(target.mdp(), t, config.solver.tolerance, mode)?),
            _ => None,
        });
    }

    let mdp = Arc::new(target.env.mdp.clone());
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| config.seeds.iter().map(move |&s| (a, s))).collect();
    let positive = optimal_mar > 0.0;
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let arm = &arms[a];
            let behaviour = Behaviour {
                strategy: arm.strategy,
                config: config.strategy_config(arm),
                transfer: if arm.strategy.uses_transfer() { transfer_for(arm) } else { None },
            };
            let learn =
                LearnConfig { seed, learning_rate: arm.learning_rate.or(config.learn.learning_rate), ..config.learn };
            q_learning_run(Arc::clone(&mdp), &behaviour, &learn, q_inits[a].clone(), positive.then_some(optimal_mar))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(arms.len());
    let mut results = results.into_iter();
    for arm in &arms {
        let runs: Vec<RunResult> = results.by_ref().take(config.seeds.len()).collect();
        let curves: Vec<Vec<(u64, f64)>> = runs.iter().map(|r| r.mar_checkpoints.clone()).collect();
        let curve = MarCurve::aggregate(&curves)?;
        let aucs: Option<Vec<f64>> = runs.iter().map(|r| r.auc_mar_percent).collect();
        reports.push(ArmReport {
            label: arm.label(),
            strategy: arm.strategy,
            auc: aucs.map(|v| mean_std(&v)),
            runs,
            curve,
        });
    }

    let mut ratios = Vec::new();
    for arm in &arms {
        if let Some(base) = &arm.baseline {
            let with = reports.iter().find(|r| r.label == arm.label()).and_then(|r| r.auc);
            let without = reports.iter().find(|r| &r.label == base).and_then(|r| r.auc);
            if let (Some((w, _)), Some((wo, _))) = (with, without) {
                ratios.push(TransferRatioRow {
                    arm: arm.label(),
                    baseline: base.clone(),
                    ratio: transfer_ratio(w, wo)?,
                });
            }
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        optimal_mar,
        arms: reports,
        transfer_ratios: ratios,
        sources: source_reports,
    })
}

fn describe(desc: &EnvDescriptor) -> String {
    match desc {
        EnvDescriptor::Rooms { rooms_x, rooms_y, room_size, variant, goal_room, .. } => {
            format!("rooms {rooms_x}x{rooms_y}x{room_size} {variant:?} goal_room={goal_room}")
        }
        EnvDescriptor::Taxi { .. } => "taxi".to_string(),
        EnvDescriptor::Grid { .. } => "grid".to_string(),
    }
}

/// Writes per-seed and aggregated curves, `auc.csv`, `tr.csv` and
/// `manifest.toml` under `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for arm in &report.arms {
        let arm_dir = dir.join(&arm.label);
        fs::create_dir_all(&arm_dir)?;
        for run in &arm.runs {
            let mut buf = Vec::new();
            write_run_csv(&run.mar_checkpoints, &mut buf)?;
            fs::write(arm_dir.join(format!("mar_seed{}.csv", run.seed)), buf)?;
        }
        let mut buf = Vec::new();
        arm.curve.write_csv(&mut buf)?;
        fs::write(arm_dir.join("mar_agg.csv"), buf)?;
    }
    let mut auc = String::from("arm,strategy,mean,std,seeds\n");
    for arm in &report.arms {
        let (m, s) = arm.auc.unwrap_or((f64::NAN, f64::NAN));
        auc.push_str(&format!("{},{},{m},{s},{}\n", arm.label, arm.strategy, arm.runs.len()));
    }
    fs::write(dir.join("auc.csv"), auc)?;
    if !report.transfer_ratios.is_empty() {
        let seeds = report.config.seeds.len();
        let mut tr = String::from("arm,baseline,tr,seeds\n");
        for row in &report.transfer_ratios {
            tr.push_str(&format!("{},{},{},{seeds}\n", row.arm, row.baseline, row.ratio));
        }
        fs::write(dir.join("tr.csv"), tr)?;
    }
    fs::write(dir.join("manifest.toml"), manifest(report))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    optimal_mar: f64,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    sources: BTreeMap<String, SourceEntry>,
}

#[derive(Serialize)]
struct SourceEntry {
    description: String,
    metric_key: String,
    iterations: usize,
    converged: bool,
    sup_change: f64,
}

fn manifest(report: &ExperimentReport) -> String {
    let sources = report
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                format!("source_{i}"),
                SourceEntry {
                    description: s.label.clone(),
                    metric_key: s.metric_key.clone(),
                    iterations: s.iterations,
                    converged: s.converged,
                    sup_change: s.sup_change,
                },
            )
        })
        .collect();
    let m = Manifest { optimal_mar: report.optimal_mar, config: &report.config, sources };
    toml::to_string(&m).expect("manifest serialises")
}

/// Names of the built-in experiments.
pub const PRESETS: &[&str] = &[
    "rooms-four",
    "rooms-six",
    "rooms-nine",
    "source-sweep",
    "source-variants",
    "composites",
    "qinit-rooms",
    "qinit-taxi",
];

const BASELINES: [Strategy; 4] = [Strategy::EpsGreedyUniform, Strategy::MbieEb, Strategy::Pursuit, Strategy::Boltzmann];

fn rooms_comparison(name: &str, target: EnvDescriptor, c_r: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(name, target);
    cfg.source = Some(EnvDescriptor::four_small_rooms());
    cfg.bisim = BisimParams::with_c_r(c_r);
    cfg.arms = BASELINES.iter().map(|&s| ArmConfig::new(s)).collect();
    cfg.arms.push(ArmConfig::new(Strategy::ExtraEpsGreedy));
    cfg
}

/// Built-in experiment configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let six_task = |room: usize| EnvDescriptor::six_large_rooms().with_goal_room(room);
    Ok(match name {
        "rooms-four" => rooms_comparison(name, EnvDescriptor::four_large_rooms(), 0.1),
        "rooms-six" => rooms_comparison(name, EnvDescriptor::six_large_rooms(), 0.2),
        "rooms-nine" => rooms_comparison(name, EnvDescriptor::nine_large_rooms(), 0.1),
        "source-sweep" => {
            let mut cfg = ExperimentConfig::new(name, six_task(5));
            cfg.bisim = BisimParams::with_c_r(0.2);
            cfg.arms = BASELINES.iter().map(|&s| ArmConfig::new(s)).collect();
            for room in 0..5 {
                cfg.arms.push(
                    ArmConfig::new(Strategy::ExtraEpsGreedy)
                        .named(&format!("source_{}", room + 1))
                        .with_source(six_task(room)),
                );
            }
            cfg
        }
        "source-variants" => {
            let mut cfg = ExperimentConfig::new(name, EnvDescriptor::four_large_rooms());
            cfg.arms.push(ArmConfig::new(Strategy::EpsGreedyUniform));
            cfg.arms.push(
                ArmConfig::new(Strategy::ExtraEpsGreedy)
                    .named("four_small_rooms")
                    .with_source(EnvDescriptor::four_small_rooms()),
            );
            for v in Variant::ALL.into_iter().filter(|v| *v != Variant::Default) {
                let label = serde_plain_name(&v);
                cfg.arms.push(
                    ArmConfig::new(Strategy::ExtraEpsGreedy)
                        .named(&label)
                        .with_source(EnvDescriptor::four_large_rooms().with_variant(v)),
                );
            }
            cfg
        }
        "composites" => {
            let mut cfg = ExperimentConfig::new(name, EnvDescriptor::six_large_rooms());
            cfg.source = Some(EnvDescriptor::four_small_rooms());
            cfg.bisim = BisimParams::with_c_r(0.2);
            cfg.arms = BASELINES.iter().map(|&s| ArmConfig::new(s)).collect();
            for s in [
                Strategy::ExtraPlusUniform,
                Strategy::ExtraPlusMbie,
                Strategy::ExtraPlusPursuit,
                Strategy::ExtraPlusSoftmax,
            ] {
                let base = s.baseline().expect("composite").name();
                cfg.arms.push(ArmConfig::new(s).with_baseline(base));
            }
            cfg
        }
        "qinit-rooms" | "qinit-taxi" => {
            let target = if name == "qinit-rooms" { EnvDescriptor::four_large_rooms() } else { EnvDescriptor::taxi() };
            let mut cfg = ExperimentConfig::new(name, target);
            cfg.source = Some(EnvDescriptor::four_small_rooms());
            let mut qinit = ArmConfig::new(Strategy::EpsGreedyUniform).named("qinit");
            qinit.q_init = Some(QInitMode::LowerBound);
            cfg.arms =
                vec![ArmConfig::new(Strategy::EpsGreedyUniform), ArmConfig::new(Strategy::ExtraEpsGreedy), qinit];
            cfg
        }
        _ => {
            return Err(Error::config(format!("unknown preset `{name}`, expected one of {}", PRESETS.join(", "))));
        }
    })
}

fn serde_plain_name<T: Serialize + std::fmt::Debug>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => format!("{v:?}").to_lowercase(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("tiny", EnvDescriptor::four_small_rooms());
        cfg.source = Some(EnvDescriptor::four_small_rooms());
        cfg.seeds = vec![1, 2];
        cfg.learn = LearnConfig {
            max_steps: 400,
            eval_every: Some(100),
            eval_rollouts: 3,
            eval_horizon: 30,
            ..LearnConfig::default()
        };
        cfg.arms = vec![
            ArmConfig::new(Strategy::EpsGreedyUniform),
            ArmConfig::new(Strategy::ExtraPlusUniform).with_baseline("eps_greedy_uniform"),
        ];
        cfg
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let cfg = preset(p).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{p}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn overrides() {
        let text = tiny().to_toml();
        let cfg = ExperimentConfig::from_toml_with_overrides(
            &text,
            &[
                "learn.max_steps=800".into(),
                "strategy.extra_tau0=0.5".into(),
                "arm.1.epsilon=0.3".into(),
                "bisim.variant=pessimistic".into(),
                "seeds=[4]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.learn.max_steps, 800);
        assert_eq!(cfg.bisim.variant, MetricVariant::Pessimistic);
        assert_eq!(cfg.seeds, vec![4]);
        let sc = cfg.strategy_config(&cfg.arms[1]);
        assert_eq!((sc.extra_tau0, sc.epsilon), (0.5, 0.3));
        assert!(ExperimentConfig::from_toml_with_overrides(&text, &["arm.5.epsilon=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(&text, &["novalue".into()]).is_err());
    }

    #[test]
    fn validation_errors() {
        let mut cfg = tiny();
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny();
        cfg.source = None;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny();
        cfg.arms[1].baseline = Some("missing".into());
        assert!(cfg.validate().is_err());
        let bad_key = tiny()
            .to_toml()
            .replace("strategy = \"extra_plus_uniform\"", "strategy = \"extra_plus_uniform\"\nepsilom = 0.1");
        assert!(ExperimentConfig::from_toml(&bad_key).is_err());
    }

    #[test]
    fn outputs_are_reproducible() {
        let cfg = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&cfg, Some(&a.path().join("cache"))).unwrap();
        write_report(&ra, a.path()).unwrap();
        let rb = run_experiment(&cfg, Some(&a.path().join("cache"))).unwrap();
        assert!(rb.sources.iter().all(|s| !s.metric_key.is_empty()));
        write_report(&rb, b.path()).unwrap();
        for f in
            ["auc.csv", "tr.csv", "manifest.toml", "eps_greedy_uniform/mar_seed1.csv", "extra_plus_uniform/mar_agg.csv"]
        {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let auc = fs::read_to_string(a.path().join("auc.csv")).unwrap();
        assert!(auc.starts_with("arm,strategy,mean,std,seeds\n"));
        assert_eq!(auc.lines().count(), 3);
    }

    #[test]
    fn corrupt_cache_is_recomputed() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        run_experiment(&cfg, Some(&cache)).unwrap();
        let file = fs::read_dir(&cache).unwrap().next().unwrap().unwrap().path();
        fs::write(&file, "garbage").unwrap();
        let solved = solve_env(&EnvDescriptor::four_small_rooms(), &SolverParams::default()).unwrap();
        let rec = cached_metric(&solved, solved.mdp(), &cfg.bisim, Some(&cache)).unwrap();
        assert!(!rec.from_cache);
        let again = cached_metric(&solved, solved.mdp(), &cfg.bisim, Some(&cache)).unwrap();
        assert!(again.from_cache);
        assert_eq!(again.metric, rec.metric);
    }
}
