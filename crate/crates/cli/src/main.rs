use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use extra_core::envs::EnvDescriptor;
use extra_core::experiment::{
    cached_metric, metric_cache_path, preset, run_experiment, solve_env, write_report, ArmConfig, ExperimentConfig,
    SolvedEnv, PRESETS,
};
use extra_core::explore::Strategy;
use extra_core::metrics::expected_mar;
use extra_core::transfer::compute_transfer;
use extra_core::Error;

#[derive(Parser)]
#[command(name = "extra", version, about = "Bisimulation transfer and transfer-guided exploration for tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the target (and source, if any) by value iteration.
    Solve(Common),
    /// Compute the source-to-target lax-bisimulation metric.
    Metric(Common),
    /// Compute the transferred policy and its quality in the target.
    Transfer(Common),
    /// Train a single strategy over the configured seeds.
    Train(Common),
    /// Run every arm of an experiment over the configured seeds.
    Experiment(Common),
    /// List the built-in experiment presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Source environment by name, e.g. four-small-rooms.
    #[arg(long)]
    source: Option<String>,
    /// Target environment by name, e.g. four-large-rooms or taxi.
    #[arg(long)]
    target: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as a comma list (`0,3,7`) or a half-open range (`0..10`).
    #[arg(long)]
    seeds: Option<String>,
    /// Replace the configured arms with a single arm of this strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override a configuration key, e.g. `--set bisim.c_r=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("bad seed list `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

impl Common {
    fn load(&self, need_source: bool) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml_with_overrides(&text, &[])?
            }
            (None, Some(name)) => preset(name)?,
            (None, None) => {
                let target = self.target.as_deref().unwrap_or("four-large-rooms");
                let mut cfg = ExperimentConfig::new("cli", EnvDescriptor::named(target)?);
                cfg.arms = vec![ArmConfig::new(Strategy::ExtraEpsGreedy)];
                cfg
            }
        };
        if let Some(t) = &self.target {
            cfg.target = EnvDescriptor::named(t)?;
        }
        if let Some(s) = &self.source {
            cfg.source = Some(EnvDescriptor::named(s)?);
        }
        if cfg.source.is_none() && (need_source || self.config.is_none() && self.preset.is_none()) {
            cfg.source = Some(EnvDescriptor::four_small_rooms());
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(s) = self.strategy {
            let mut arm = ArmConfig::new(s);
            // keep a per-arm source when the single remaining arm had one
            arm.source = cfg.arms.iter().find(|a| a.strategy == s).and_then(|a| a.source.clone());
            cfg.arms = vec![arm];
        }
        let cfg = cfg.with_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(if cfg.name.is_empty() { "run" } else { &cfg.name }))
    }
}

fn write_solution(solved: &SolvedEnv, horizon: usize, dir: &Path) -> Result<f64> {
    fs::create_dir_all(dir)?;
    let (ns, na) = (solved.q.num_states(), solved.q.num_actions());
    let mut v = String::from("state,value,action\n");
    let mut q = String::from("state,action,q\n");
    for s in 0..ns {
        writeln!(v, "{s},{},{}", solved.q.state_value(s), solved.policy.action(s))?;
        for a in 0..na {
            writeln!(q, "{s},{a},{}", solved.q.get(s, a))?;
        }
    }
    fs::write(dir.join("values.csv"), v)?;
    fs::write(dir.join("q.csv"), q)?;
    let optimal_mar = solved.optimal_mar(horizon);
    fs::write(
        dir.join("summary.toml"),
        format!(
            "states = {ns}\nactions = {na}\nsweeps = {}\nhorizon = {horizon}\noptimal_mar = {optimal_mar}\n",
            solved.sweeps
        ),
    )?;
    Ok(optimal_mar)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Solve(args) => {
            let cfg = args.load(false)?;
            let out = args.out_dir(&cfg);
            let horizon = cfg.learn.eval_horizon;
            let target = solve_env(&cfg.target, &cfg.solver)?;
            let mar = write_solution(&target, horizon, &out.join("target"))?;
            println!("target: {} states, optimal MAR {mar}", target.q.num_states());
            if let Some(src) = &cfg.source {
                let source = solve_env(src, &cfg.solver)?;
                let mar = write_solution(&source, horizon, &out.join("source"))?;
                println!("source: {} states, optimal MAR {mar}", source.q.num_states());
            }
        }
        Command::Metric(args) => {
            let cfg = args.load(true)?;
            let out = args.out_dir(&cfg);
            let (_, _, record) = metric_for(&cfg, &out)?;
            let m = &record.metric;
            fs::create_dir_all(&out)?;
            fs::copy(metric_cache_path(&out.join("cache"), &record.key), out.join("metric.csv"))?;
            fs::write(
                out.join("metric_report.toml"),
                format!(
                    "key = \"{}\"\nsource_states = {}\ntarget_states = {}\ntarget_actions = {}\niterations = {}\nconverged = {}\nsup_change = {}\n",
                    record.key,
                    m.source_states(),
                    m.target_states(),
                    m.target_actions(),
                    m.iterations_run,
                    m.converged,
                    m.sup_change_last
                ),
            )?;
            println!(
                "metric {}x{}x{}: {} iterations, converged {}, last sup change {}",
                m.source_states(),
                m.target_states(),
                m.target_actions(),
                m.iterations_run,
                m.converged,
                m.sup_change_last
            );
        }
        Command::Transfer(args) => {
            let cfg = args.load(true)?;
            let out = args.out_dir(&cfg);
            let (source, target, record) = metric_for(&cfg, &out)?;
            let table = compute_transfer(&source.values(), &record.metric, cfg.bisim.variant)?;
            let mut csv = String::from("target_state,matched_source,action,lower_bound,optimal\n");
            let mut optimal_states = 0;
            for s2 in 0..table.target_states() {
                let a = table.transferred_action[s2];
                let m = table.s_match[s2];
                let v2 = target.q.state_value(s2);
                let is_opt = (target.q.get(s2, a) - v2).abs() <= 1e-9 * v2.abs().max(1.0);
                optimal_states += usize::from(is_opt);
                writeln!(csv, "{s2},{m},{a},{},{is_opt}", table.lower_bound(m, s2))?;
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("transfer.csv"), csv)?;
            let horizon = cfg.learn.eval_horizon;
            let transferred = expected_mar(target.mdp(), &table.transferred_policy(), horizon);
            let optimal = target.optimal_mar(horizon);
            fs::write(
                out.join("transfer_report.toml"),
                format!(
                    "optimal_states = {optimal_states}\ntarget_states = {}\ntransferred_mar = {transferred}\noptimal_mar = {optimal}\n",
                    table.target_states()
                ),
            )?;
            println!(
                "transferred action optimal in {optimal_states}/{} states; MAR {transferred} (optimal {optimal})",
                table.target_states()
            );
        }
        Command::Train(args) => {
            let mut cfg = args.load(false)?;
            let arms = cfg.resolved_arms();
            if arms.len() != 1 {
                bail!(Error::Config(format!(
                    "train runs one strategy but the configuration has {} arms; pass --strategy",
                    arms.len()
                )));
            }
            cfg.arms = arms;
            experiment(&args, cfg)?;
        }
        Command::Experiment(args) => {
            let cfg = args.load(false)?;
            experiment(&args, cfg)?;
        }
    }
    Ok(())
}

fn metric_for(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(SolvedEnv, SolvedEnv, extra_core::experiment::MetricRecord)> {
    let src = cfg.source.as_ref().context("no source environment")?;
    let source = solve_env(src, &cfg.solver)?;
    let target = solve_env(&cfg.target, &cfg.solver)?;
    let record = cached_metric(&source, target.mdp(), &cfg.bisim, Some(&out.join("cache")))?;
    if record.from_cache {
        info!("metric loaded from cache");
    }
    Ok((source, target, record))
}

fn experiment(args: &Common, cfg: ExperimentConfig) -> Result<()> {
    let out = args.out_dir(&cfg);
    info!("running `{}` into {}", cfg.name, out.display());
    let report = run_experiment(&cfg, Some(&out.join("cache")))?;
    write_report(&report, &out)?;
    println!("optimal MAR {}", report.optimal_mar);
    for arm in &report.arms {
        match arm.auc {
            Some((m, s)) => println!("{:<24} AuC-MAR {m:6.2} ± {s:5.2}  (n={})", arm.label, arm.runs.len()),
            None => println!("{:<24} AuC-MAR undefined", arm.label),
        }
    }
    for row in &report.transfer_ratios {
        println!("{:<24} TR {:+.2}% vs {}", row.arm, row.ratio, row.baseline);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.downcast_ref::<Error>().is_some_and(Error::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
