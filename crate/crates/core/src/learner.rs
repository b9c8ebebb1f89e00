//! Tabular Q-learning with a pluggable behaviour policy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{rng_stream, Simulator};
use crate::error::{Error, Result};
use crate::explore::{mbie_eb_bonus, select_action, ExplorationState, Strategy, StrategyConfig};
use crate::mdp::{QFunction, TabularMdp};
use crate::metrics::{auc_mar_percent, greedy_mar};
use crate::transfer::TransferTable;

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const EVAL_TIE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub max_steps: u64,
    /// `None` uses the strategy's default rate.
    pub learning_rate: Option<f64>,
    /// `None` uses the MDP's discount.
    pub discount: Option<f64>,
    /// `None` means `max_steps / 100`.
    pub eval_every: Option<u64>,
    pub eval_rollouts: usize,
    pub eval_horizon: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            max_steps: 50_000,
            learning_rate: None,
            discount: None,
            eval_every: None,
            eval_rollouts: 20,
            eval_horizon: 200,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn eval_interval(&self) -> u64 {
        self.eval_every.unwrap_or((self.max_steps / 100).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        let every = self.eval_interval();
        if every == 0 || self.max_steps % every != 0 {
            return Err(Error::config(format!(
                "eval_every = {every} must be positive and divide max_steps = {}",
                self.max_steps
            )));
        }
        if self.eval_rollouts == 0 || self.eval_horizon == 0 {
            return Err(Error::config("eval_rollouts and eval_horizon must be positive"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0 && lr <= 1.0) {
                return Err(Error::config(format!("learning_rate must lie in [0, 1], got {lr}")));
            }
        }
        if let Some(g) = self.discount {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::config(format!("discount must lie in [0, 1), got {g}")));
            }
        }
        Ok(())
    }
}

/// Behaviour policy of a run.
#[derive(Debug, Clone, Copy)]
pub struct Behaviour<'a> {
    pub strategy: Strategy,
    pub config: StrategyConfig,
    pub transfer: Option<&'a TransferTable<f64>>,
}

impl<'a> Behaviour<'a> {
    pub fn new(strategy: Strategy) -> Self {
        Self { strategy, config: StrategyConfig::for_strategy(strategy), transfer: None }
    }

    pub fn with_config(mut self, config: StrategyConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_transfer(mut self, transfer: &'a TransferTable<f64>) -> Self {
        self.transfer = Some(transfer);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub strategy: Strategy,
    /// `(step, MAR of the greedy policy)` at every checkpoint, step 0 included.
    pub mar_checkpoints: Vec<(u64, f64)>,
    pub final_q: QFunction<f64>,
    pub visit_counts: Vec<u64>,
    pub episodes: u64,
    /// Present when an optimal MAR was supplied.
    pub auc_mar_percent: Option<f64>,
}

/// Runs `learn.max_steps` environment steps of Q-learning.
///
/// Greedy choices, both in the behaviour policy and at evaluation, break
/// ties uniformly at random.
///
/// The simulator, the behaviour policy and the evaluation rollouts draw
/// from separate streams of `learn.seed`, so a run is reproducible bit for bit.
pub fn q_learning_run(
    mdp: Arc<TabularMdp<f64>>,
    behaviour: &Behaviour<'_>,
    learn: &LearnConfig,
    q_init: Option<QFunction<f64>>,
    optimal_mar: Option<f64>,
) -> Result<RunResult> {
    learn.validate()?;
    behaviour.config.validate()?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let q = match q_init {
        Some(q) if q.num_states() != ns || q.num_actions() != na => {
            return Err(Error::Dimension(format!(
                "initial Q-table is {}x{}, MDP is {ns}x{na}",
                q.num_states(),
                q.num_actions()
            )))
        }
        Some(q) => q,
        None => QFunction::zeros(ns, na),
    };
    if let Some(t) = behaviour.transfer {
        if t.target_states() != ns || t.target_actions() != na {
            return Err(Error::Dimension("transfer table does not match the MDP".into()));
        }
    }
    if behaviour.strategy.uses_transfer() && behaviour.transfer.is_none() {
        return Err(Error::config(format!("strategy {} needs a transfer table", behaviour.strategy)));
    }

    let lr = learn.learning_rate.unwrap_or_else(|| behaviour.strategy.default_learning_rate());
    let gamma = learn.discount.unwrap_or_else(|| mdp.discount());
    let every = learn.eval_interval();
    let mut sim = Simulator::with_rng(Arc::clone(&mdp), rng_stream(learn.seed, TRAIN_STREAM));
    let mut eval = sim.fork(rng_stream(learn.seed, EVAL_STREAM));
    let mut st = ExplorationState::new(q, rng_stream(learn.seed, POLICY_STREAM));
    let mut checkpoints = Vec::with_capacity((learn.max_steps / every + 1) as usize);
    let mut ties = rng_stream(learn.seed, EVAL_TIE_STREAM);
    let mut evaluate = |q: &QFunction<f64>, step: u64, eval: &mut Simulator| {
        checkpoints.push((step, greedy_mar(q, eval, &mut ties, learn.eval_rollouts, learn.eval_horizon)));
    };
    evaluate(&st.q, 0, &mut eval);

    let mut episodes = 0;
    for step in 1..=learn.max_steps {
        let s = sim.state();
        let a = select_action(behaviour.strategy, &mut st, behaviour.transfer, s, &behaviour.config)?;
        let n = st.record_visit(s, a);
        let out = sim.step(a);
        let mut r = out.reward;
        if behaviour.strategy.uses_bonus() {
            r += mbie_eb_bonus(n, behaviour.config.mbie_beta);
        }
        let bootstrap = if out.terminal { 0.0 } else { st.q.state_value(out.next_state) };
        let old = st.q.get(s, a);
        st.q.set(s, a, old + lr * (r + gamma * bootstrap - old));
        st.global_step = step;
        if out.terminal {
            episodes += 1;
            sim.reset();
        }
        if step % every == 0 {
            evaluate(&st.q, step, &mut eval);
        }
    }

    let auc = optimal_mar.map(|opt| auc_mar_percent(&checkpoints, opt)).transpose()?;
    Ok(RunResult {
        seed: learn.seed,
        strategy: behaviour.strategy,
        mar_checkpoints: checkpoints,
        final_q: st.q,
        visit_counts: st.counts,
        episodes,
        auc_mar_percent: auc,
    })
}
