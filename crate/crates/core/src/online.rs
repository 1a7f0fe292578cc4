//! The online planning loop.
//!
//! Each step (1) filters the belief under the conjecture sampled in the
//! previous step, (2) updates the posterior over conjectures with the new
//! observation, and (3) samples a conjecture and acts greedily on its solved
//! quantized model. The agent only ever receives observations; the true
//! state stays inside the [`System`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjecture::{
    posterior_update, sample_conjecture, ConjectureSpace, EmpiricalHistory, Posterior,
};
use crate::error::{arg_err, MobalError, Result};
use crate::filter::{particle_belief, particle_filter_step, ParticleSet, DEFAULT_PARTICLES};
use crate::netsys::sample_step;
use crate::pomdp::{Belief, PomdpModel};
use crate::quantize::{KernelMode, QuantizedPlan, DEFAULT_VI_THRESHOLD};

pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    #[default]
    Exact,
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplanPolicy {
    #[default]
    PerStep,
    OnConjectureChange,
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub conjecture_space: ConjectureSpace,
    pub prior: Posterior,
    pub resolution: usize,
    pub vi_threshold: f64,
    pub particle_count: usize,
    pub filter_mode: FilterMode,
    pub replan_policy: ReplanPolicy,
    pub horizon: usize,
    pub seed: u64,
    /// Belief (and, for simulation, state distribution) at `t = 0`.
    pub initial_belief: Belief,
}

impl LoopConfig {
    /// Uniform prior, exact filtering, point-mass initial belief on state 0.
    pub fn new(conjecture_space: ConjectureSpace, resolution: usize) -> Self {
        let k = conjecture_space.len();
        let n = conjecture_space.model(0).n_states();
        Self {
            conjecture_space,
            prior: Posterior::uniform(k),
            resolution,
            vi_threshold: DEFAULT_VI_THRESHOLD,
            particle_count: DEFAULT_PARTICLES,
            filter_mode: FilterMode::Exact,
            replan_policy: ReplanPolicy::PerStep,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            initial_belief: Belief::point(n, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return arg_err("resolution must be at least 1");
        }
        if self.horizon == 0 {
            return arg_err("horizon must be at least 1");
        }
        if self.prior.len() != self.conjecture_space.len() {
            return arg_err("prior length does not match the conjecture space");
        }
        if self.initial_belief.len() != self.conjecture_space.model(0).n_states() {
            return arg_err("initial belief dimension does not match the models");
        }
        if self.filter_mode == FilterMode::Particle && self.particle_count == 0 {
            return arg_err("particle filtering needs at least one particle");
        }
        Ok(())
    }
}

/// Solved plans keyed by `(conjecture index, resolution)`.
#[derive(Debug, Clone, Default)]
pub struct PlanCache {
    plans: HashMap<(usize, usize), Arc<QuantizedPlan>>,
    pub solves: usize,
    pub hits: usize,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves every conjecture up front so clones can be handed to parallel
    /// episodes.
    pub fn warm(cfg: &LoopConfig) -> Result<Self> {
        let mut cache = Self::new();
        for idx in 0..cfg.conjecture_space.len() {
            cache.get_or_solve(cfg, idx)?;
        }
        cache.solves = 0;
        cache.hits = 0;
        Ok(cache)
    }

    pub fn get_or_solve(&mut self, cfg: &LoopConfig, idx: usize) -> Result<Arc<QuantizedPlan>> {
        let key = (idx, cfg.resolution);
        if let Some(plan) = self.plans.get(&key) {
            self.hits += 1;
            return Ok(Arc::clone(plan));
        }
        let model = cfg.conjecture_space.model(idx);
        let mode = match KernelMode::auto(model) {
            KernelMode::MonteCarlo { samples, .. } => {
                KernelMode::MonteCarlo { samples, seed: idx as u64 }
            }
            exact => exact,
        };
        let plan = Arc::new(QuantizedPlan::solve(model, cfg.resolution, mode, cfg.vi_threshold)?);
        self.solves += 1;
        self.plans.insert(key, Arc::clone(&plan));
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopCounters {
    /// Observations impossible under the filtering model (prediction used).
    pub impossible_observations: u64,
    /// Observations with zero likelihood under every conjecture.
    pub degenerate_evidence: u64,
    /// Particle steps where every weight vanished.
    pub degenerate_particle_steps: u64,
    pub plan_solves: u64,
    pub plan_cache_hits: u64,
}

/// Online agent state. Receives observations, emits actions.
#[derive(Debug, Clone)]
pub struct MobalAgent<'a> {
    cfg: &'a LoopConfig,
    cache: PlanCache,
    belief: Belief,
    particles: Option<ParticleSet>,
    posterior: Posterior,
    conjecture: usize,
    plan: Arc<QuantizedPlan>,
    action: usize,
    history: EmpiricalHistory,
    counters: LoopCounters,
    rng: ChaCha8Rng,
}

impl<'a> MobalAgent<'a> {
    /// Samples an initial conjecture from the prior and chooses `a_0` by a
    /// one-step lookahead at `b_0` on that conjecture's solved model.
    pub fn start(cfg: &'a LoopConfig, cache: PlanCache, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let belief = cfg.initial_belief.clone();
        let particles = match cfg.filter_mode {
            FilterMode::Exact => None,
            FilterMode::Particle => {
                Some(ParticleSet::from_belief(&belief, cfg.particle_count, &mut rng)?)
            }
        };
        let conjecture = sample_conjecture(&cfg.prior, &mut rng);
        let mut cache = cache;
        let mut counters = LoopCounters::default();
        let plan = fetch_plan(&mut cache, &mut counters, cfg, conjecture)?;
        let action = one_step_lookahead(cfg.conjecture_space.model(conjecture), &plan, &belief)?;
        let mut history = EmpiricalHistory::new();
        history.push_action(action);
        Ok(Self {
            cfg,
            cache,
            belief,
            particles,
            posterior: cfg.prior.clone(),
            conjecture,
            plan,
            action,
            history,
            counters,
            rng,
        })
    }

    /// Processes `o_t` and returns `a_t`.
    pub fn step(&mut self, o: usize) -> Result<usize> {
        let space = &self.cfg.conjecture_space;
        let b_prev = self.belief.clone();
        let a_prev = self.action;
        let filter_model = space.model(self.conjecture);

        // stage 1: belief
        self.belief = match self.particles.take() {
            None => match filter_model.belief_update(&b_prev, a_prev, o) {
                Ok(b) => b,
                Err(MobalError::ImpossibleObservation { .. }) => {
                    self.counters.impossible_observations += 1;
                    Belief::from_mass(filter_model.predict(&b_prev, a_prev)?)
                }
                Err(e) => return Err(e),
            },
            Some(ps) => {
                let before = ps.degenerate_steps;
                let next = particle_filter_step(filter_model, &ps, a_prev, o, &mut self.rng)?;
                self.counters.degenerate_particle_steps += next.degenerate_steps - before;
                let b = particle_belief(&next, filter_model.n_states());
                self.particles = Some(next);
                b
            }
        };

        // stage 2: posterior
        match posterior_update(space, &self.posterior, &b_prev, a_prev, o) {
            Ok(rho) => self.posterior = rho,
            Err(MobalError::DegenerateEvidence { .. }) => self.counters.degenerate_evidence += 1,
            Err(e) => return Err(e),
        }

        // stage 3: conjecture and action
        let next = sample_conjecture(&self.posterior, &mut self.rng);
        if self.cfg.replan_policy == ReplanPolicy::PerStep || next != self.conjecture {
            self.plan = fetch_plan(&mut self.cache, &mut self.counters, self.cfg, next)?;
        }
        self.conjecture = next;
        self.action = self.plan.action(&self.belief)?;

        self.history.push_belief(self.belief.clone());
        self.history.push_action(self.action);
        Ok(self.action)
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn conjecture(&self) -> usize {
        self.conjecture
    }

    pub fn action(&self) -> usize {
        self.action
    }

    pub fn counters(&self) -> LoopCounters {
        self.counters
    }

    /// Visited beliefs `b_1..b_t` and actions `a_0..a_t`.
    pub fn history(&self) -> &EmpiricalHistory {
        &self.history
    }

    pub fn plan(&self) -> &QuantizedPlan {
        &self.plan
    }
}

fn fetch_plan(
    cache: &mut PlanCache,
    counters: &mut LoopCounters,
    cfg: &LoopConfig,
    idx: usize,
) -> Result<Arc<QuantizedPlan>> {
    let (solves, hits) = (cache.solves, cache.hits);
    let plan = cache.get_or_solve(cfg, idx)?;
    counters.plan_solves += (cache.solves - solves) as u64;
    counters.plan_cache_hits += (cache.hits - hits) as u64;
    Ok(plan)
}

/// `argmin_a [ĉ(b,a) + γ Σ_o P(o|b,a) V*(Φ(b'_o))]`, ties to the lowest
/// action.
pub fn one_step_lookahead(model: &PomdpModel, plan: &QuantizedPlan, b: &Belief) -> Result<usize> {
    model.check_belief(b)?;
    let rep = plan.rep_set();
    let mut best = (f64::INFINITY, 0);
    for a in 0..model.n_actions() {
        let mut future = 0.0;
        model.for_each_successor(b.as_slice(), a, |_, p, succ| {
            future += p * plan.solution.values[rep.quantize_slice(succ)];
        });
        let q = model.belief_cost_unchecked(b.as_slice(), a) + model.discount() * future;
        if q < best.0 {
            best = (q, a);
        }
    }
    Ok(best.1)
}

/// Feedback of one system step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFeedback {
    pub observation: usize,
    pub cost: f64,
}

/// The controlled system. Only [`StepFeedback`] reaches the agent; the state
/// is exposed for logging.
pub trait System {
    fn step(&mut self, action: usize) -> Result<StepFeedback>;
    fn state(&self) -> usize;
}

/// A system simulated from a POMDP model with its own generator.
#[derive(Debug, Clone)]
pub struct SimulatedSystem<'a> {
    model: &'a PomdpModel,
    state: usize,
    rng: ChaCha8Rng,
}

impl<'a> SimulatedSystem<'a> {
    pub fn new(model: &'a PomdpModel, state: usize, rng: ChaCha8Rng) -> Self {
        Self { model, state, rng }
    }
}

impl System for SimulatedSystem<'_> {
    fn step(&mut self, action: usize) -> Result<StepFeedback> {
        let (next, observation, cost) = sample_step(self.model, self.state, action, &mut self.rng)?;
        self.state = next;
        Ok(StepFeedback { observation, cost })
    }

    fn state(&self) -> usize {
        self.state
    }
}

/// Record of one time step: the state and the action taken in it, the
/// observation that followed, and the agent's belief, conjecture and
/// posterior when acting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: usize,
    pub observation: usize,
    pub action: usize,
    pub belief: Vec<f64>,
    pub conjecture: Option<usize>,
    pub posterior: Vec<f64>,
    pub cost: f64,
    pub discounted_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub discount: f64,
    pub records: Vec<StepRecord>,
    pub discounted_return: f64,
    pub counters: LoopCounters,
}

impl EpisodeLog {
    fn new(discount: f64) -> Self {
        Self { discount, records: Vec::new(), discounted_return: 0.0, counters: Default::default() }
    }

    fn push(&mut self, mut rec: StepRecord) {
        self.discounted_return += self.discount.powi(rec.t as i32) * rec.cost;
        rec.discounted_return = self.discounted_return;
        self.records.push(rec);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// One row per step; posterior weights joined with `;`.
    pub fn to_csv(&self) -> String {
        use crate::csvfmt::fmt_f64;
        let mut out = String::from("# schema=episode-v1\n");
        out.push_str("t,s,o,a,conjecture_idx,posterior,cost,discounted_return\n");
        for r in &self.records {
            let posterior: Vec<String> = r.posterior.iter().map(|w| fmt_f64(*w)).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t,
                r.state,
                r.observation,
                r.action,
                r.conjecture.map_or(String::new(), |c| c.to_string()),
                posterior.join(";"),
                fmt_f64(r.cost),
                fmt_f64(r.discounted_return),
            ));
        }
        out
    }
}

/// Generators for the system and the agent of episode `seed`.
pub fn episode_generators(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(0);
    let mut agent = ChaCha8Rng::seed_from_u64(seed);
    agent.set_stream(1);
    (env, agent)
}

/// Simulates `env` from the initial belief's state distribution and runs the
/// loop for `cfg.horizon` steps.
pub fn run_episode(env: &PomdpModel, cfg: &LoopConfig) -> Result<EpisodeLog> {
    run_episode_with_cache(env, cfg, PlanCache::new())
}

pub fn run_episode_with_cache(
    env: &PomdpModel,
    cfg: &LoopConfig,
    cache: PlanCache,
) -> Result<EpisodeLog> {
    if !env.same_shape(cfg.conjecture_space.model(0)) {
        return arg_err("environment and conjectures have different dimensions");
    }
    let (mut env_rng, agent_rng) = episode_generators(cfg.seed);
    let s0 = crate::pomdp::sample_categorical(cfg.initial_belief.as_slice(), &mut env_rng);
    let mut system = SimulatedSystem::new(env, s0, env_rng);
    run_episode_on(&mut system, env.discount(), cfg, cache, agent_rng)
}

/// Runs the loop against an arbitrary system.
pub fn run_episode_on<S: System>(
    system: &mut S,
    discount: f64,
    cfg: &LoopConfig,
    cache: PlanCache,
    agent_rng: ChaCha8Rng,
) -> Result<EpisodeLog> {
    let mut agent = MobalAgent::start(cfg, cache, agent_rng)?;
    let mut log = EpisodeLog::new(discount);
    for t in 0..cfg.horizon {
        let state = system.state();
        let action = agent.action();
        let record_belief = agent.belief().as_slice().to_vec();
        let record_posterior = agent.posterior().weights().to_vec();
        let conjecture = agent.conjecture();
        let feedback = system.step(action)?;
        log.push(StepRecord {
            t,
            state,
            observation: feedback.observation,
            action,
            belief: record_belief,
            conjecture: Some(conjecture),
            posterior: record_posterior,
            cost: feedback.cost,
            discounted_return: 0.0,
        });
        if t + 1 < cfg.horizon {
            agent.step(feedback.observation)?;
        }
    }
    log.counters = agent.counters();
    Ok(log)
}

/// Runs an arbitrary belief-feedback strategy with exact filtering under
/// `filter_model` (used for baselines).
pub fn run_strategy_episode<F>(
    env: &PomdpModel,
    filter_model: &PomdpModel,
    initial_belief: &Belief,
    horizon: usize,
    seed: u64,
    mut strategy: F,
) -> Result<EpisodeLog>
where
    F: FnMut(&Belief, &mut ChaCha8Rng) -> Result<usize>,
{
    if !env.same_shape(filter_model) {
        return arg_err("environment and filter model have different dimensions");
    }
    let (mut env_rng, mut agent_rng) = episode_generators(seed);
    let s0 = crate::pomdp::sample_categorical(initial_belief.as_slice(), &mut env_rng);
    let mut system = SimulatedSystem::new(env, s0, env_rng);
    let mut belief = initial_belief.clone();
    let mut log = EpisodeLog::new(env.discount());
    for t in 0..horizon {
        let state = system.state();
        let action = strategy(&belief, &mut agent_rng)?;
        env.check_action(action)?;
        let feedback = system.step(action)?;
        log.push(StepRecord {
            t,
            state,
            observation: feedback.observation,
            action,
            belief: belief.as_slice().to_vec(),
            conjecture: None,
            posterior: Vec::new(),
            cost: feedback.cost,
            discounted_return: 0.0,
        });
        belief = match filter_model.belief_update(&belief, action, feedback.observation) {
            Ok(b) => b,
            Err(MobalError::ImpossibleObservation { .. }) => {
                log.counters.impossible_observations += 1;
                Belief::from_mass(filter_model.predict(&belief, action)?)
            }
            Err(e) => return Err(e),
        };
    }
    Ok(log)
}
