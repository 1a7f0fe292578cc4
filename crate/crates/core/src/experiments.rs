//! Reproducible experiment drivers. Each returns a table whose CSV rendering
//! is byte-stable for a fixed seed list.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    approximation_bound, compute_alpha, compute_c_max, compute_epsilon,
    reference_cost_function, sup_grid_error, suboptimality_bound, two_state_grid, AlphaPairing,
    ANALYSIS_VI_THRESHOLD, DEFAULT_SAMPLES_PER_CELL,
};
use crate::conjecture::{discrepancies, gap_from_discrepancies, ConjectureSpace, Posterior};
use crate::csvfmt::{fmt_f64, table};
use crate::error::{arg_err, Result};
use crate::filter::{filter_error, particle_belief, particle_filter_step, ParticleSet};
use crate::netsys::{build_model, NetSysConfig};
use crate::online::{
    episode_generators, run_episode_with_cache, run_strategy_episode, EpisodeLog, FilterMode,
    LoopConfig, LoopCounters, MobalAgent, PlanCache, ReplanPolicy, SimulatedSystem, System,
};
use crate::pomdp::{sample_categorical, Belief, PomdpModel};
use crate::quantize::{enumerate_lattice, lattice_count, KernelMode, QuantizedPlan};

/// Attack probability of the simulated system in the reference scenario.
pub const TRUE_ATTACK_PROBABILITY: f64 = 0.2;
/// Conjectured attack probabilities in the reference scenario.
pub const CONJECTURES: [f64; 3] = [0.0, 0.5, 1.0];
/// Conjecture used for the cost-function and bound comparisons.
pub const ANALYSIS_CONJECTURE: f64 = 0.5;
pub const REFERENCE_RESOLUTION: usize = 200;
pub const GRID_INTERVALS: usize = 100;

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `log2(n)` for a power of two `n ≥ 2`.
fn components_for_states(n: usize) -> Result<usize> {
    if n < 2 || !n.is_power_of_two() {
        return arg_err(format!("state count {n} is not a power of two of at least 2"));
    }
    Ok(n.trailing_zeros() as usize)
}

fn generator(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------------------
// observation distributions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsDistRow {
    pub k: u32,
    pub p_safe: f64,
    pub p_compromised: f64,
}

pub fn obs_dist(config: &NetSysConfig) -> Result<Vec<ObsDistRow>> {
    config.validate()?;
    (0..=config.max_alerts)
        .map(|k| {
            Ok(ObsDistRow {
                k,
                p_safe: config.betabin_safe.pmf(k)?,
                p_compromised: config.betabin_compromised.pmf(k)?,
            })
        })
        .collect()
}

pub fn obs_dist_csv(rows: &[ObsDistRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.k.to_string(), fmt_f64(r.p_safe), fmt_f64(r.p_compromised)])
        .collect();
    table("obs-dist", &["k", "p_safe", "p_compromised"], &body)
}

// ---------------------------------------------------------------------------
// lattice sizes

pub fn lattice_counts(ns: &[usize], rs: &[usize]) -> Result<Vec<(usize, usize, u128)>> {
    if ns.is_empty() || rs.is_empty() {
        return arg_err("grids must be non-empty");
    }
    if ns.contains(&0) {
        return arg_err("state counts must be positive");
    }
    Ok(ns.iter().flat_map(|&n| rs.iter().map(move |&r| (n, r, lattice_count(n, r)))).collect())
}

pub fn lattice_count_csv(rows: &[(usize, usize, u128)]) -> String {
    let body: Vec<Vec<String>> =
        rows.iter().map(|(n, r, c)| vec![n.to_string(), r.to_string(), c.to_string()]).collect();
    table("lattice-count", &["n", "r", "count"], &body)
}

// ---------------------------------------------------------------------------
// particle filter error

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEvalSpec {
    /// State counts (powers of two).
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub episodes: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub resolution: usize,
    pub p_attack: f64,
}

impl Default for FilterEvalSpec {
    fn default() -> Self {
        Self {
            ns: vec![2, 4],
            ms: (1..=18).collect(),
            episodes: 100,
            steps: 100,
            seeds: (0..100).collect(),
            resolution: 5,
            p_attack: TRUE_ATTACK_PROBABILITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEvalRow {
    pub n: usize,
    pub m: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub degenerate_steps: u64,
}

/// Per seed: `episodes` trajectories of `steps` steps under the true model,
/// controlled by the true model's quantized strategy on the exact belief.
/// Every particle count filters the same trajectory. The per-seed score is
/// the mean error over all episodes and steps; rows report the mean and
/// standard deviation of the per-seed scores.
pub fn filter_eval(spec: &FilterEvalSpec) -> Result<Vec<FilterEvalRow>> {
    if spec.ns.is_empty() || spec.ms.is_empty() || spec.seeds.is_empty() {
        return arg_err("grids must be non-empty");
    }
    if spec.ms.contains(&0) || spec.episodes == 0 || spec.steps == 0 {
        return arg_err("particle counts, episodes and steps must be positive");
    }
    let mut rows = Vec::new();
    for &n in &spec.ns {
        let net = NetSysConfig::path(components_for_states(n)?, spec.p_attack);
        let model = build_model(&net, None)?;
        let plan = QuantizedPlan::solve(
            &model,
            spec.resolution,
            KernelMode::auto(&model),
            crate::quantize::DEFAULT_VI_THRESHOLD,
        )?;
        let per_seed: Vec<(Vec<f64>, Vec<u64>)> = spec
            .seeds
            .par_iter()
            .map(|&seed| filter_seed(&model, &plan, spec, seed))
            .collect::<Result<_>>()?;
        for (mi, &m) in spec.ms.iter().enumerate() {
            let scores: Vec<f64> = per_seed.iter().map(|(s, _)| s[mi]).collect();
            let (mean_error, std_error) = mean_std(&scores);
            let degenerate_steps = per_seed.iter().map(|(_, d)| d[mi]).sum();
            rows.push(FilterEvalRow { n, m, mean_error, std_error, degenerate_steps });
        }
    }
    Ok(rows)
}

fn filter_seed(
    model: &PomdpModel,
    plan: &QuantizedPlan,
    spec: &FilterEvalSpec,
    seed: u64,
) -> Result<(Vec<f64>, Vec<u64>)> {
    let n = model.n_states();
    let mut sums = vec![0.0; spec.ms.len()];
    let mut degenerate = vec![0u64; spec.ms.len()];
    let b0 = Belief::point(n, 0);
    for episode in 0..spec.episodes as u64 {
        let base = episode * (spec.ms.len() as u64 + 2);
        let mut env_rng = generator(seed, base);
        let mut filter_rngs: Vec<ChaCha8Rng> =
            (0..spec.ms.len() as u64).map(|k| generator(seed, base + 1 + k)).collect();
        let mut sets: Vec<ParticleSet> = spec
            .ms
            .iter()
            .zip(filter_rngs.iter_mut())
            .map(|(&m, rng)| ParticleSet::from_belief(&b0, m, rng))
            .collect::<Result<_>>()?;
        let s0 = sample_categorical(b0.as_slice(), &mut env_rng);
        let mut system = SimulatedSystem::new(model, s0, env_rng);
        let mut belief = b0.clone();
        for _ in 0..spec.steps {
            let a = plan.action(&belief)?;
            let o = system.step(a)?.observation;
            belief = model.belief_update(&belief, a, o)?;
            for (k, (ps, rng)) in sets.iter_mut().zip(filter_rngs.iter_mut()).enumerate() {
                *ps = particle_filter_step(model, ps, a, o, rng)?;
                sums[k] += filter_error(&belief, &particle_belief(ps, n))?;
            }
        }
        for (k, ps) in sets.iter().enumerate() {
            degenerate[k] += ps.degenerate_steps;
        }
    }
    let count = (spec.episodes * spec.steps) as f64;
    Ok((sums.into_iter().map(|s| s / count).collect(), degenerate))
}

pub fn filter_eval_csv(rows: &[FilterEvalRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.m.to_string(),
                fmt_f64(r.mean_error),
                fmt_f64(r.std_error),
                r.degenerate_steps.to_string(),
            ]
        })
        .collect();
    table("filter-eval", &["n", "m", "mean_error", "std_error", "degenerate_steps"], &body)
}

// ---------------------------------------------------------------------------
// posterior evolution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEvalSpec {
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub resolution: usize,
    pub p_true: f64,
    pub conjectures: Vec<f64>,
}

impl Default for PosteriorEvalSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            seeds: (0..20).collect(),
            resolution: 5,
            p_true: TRUE_ATTACK_PROBABILITY,
            conjectures: CONJECTURES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEvalRow {
    pub seed: u64,
    pub t: usize,
    pub conjecture: usize,
    pub posterior: Vec<f64>,
    pub discrepancy: Vec<f64>,
    /// Discrepancy of a conjecture equal to the true model.
    pub discrepancy_true: f64,
    pub gap: f64,
}

/// Runs the loop for `steps` observations per seed and records, after each
/// update `t = 1..steps`, the posterior, the discrepancies and the posterior
/// gap.
pub fn posterior_eval(spec: &PosteriorEvalSpec) -> Result<Vec<PosteriorEvalRow>> {
    if spec.seeds.is_empty() || spec.conjectures.is_empty() || spec.steps == 0 {
        return arg_err("seeds, conjectures and steps must be non-empty");
    }
    let net = NetSysConfig::path(1, spec.p_true);
    let env = build_model(&net, None)?;
    let space = ConjectureSpace::netsys(&net, &spec.conjectures)?;
    let sanity = ConjectureSpace::new(vec![vec![spec.p_true]], vec![env.clone()])?;
    let mut base = LoopConfig::new(space, spec.resolution);
    base.horizon = spec.steps + 1;
    let cache = PlanCache::warm(&base)?;
    let per_seed: Vec<Vec<PosteriorEvalRow>> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let (mut env_rng, agent_rng) = episode_generators(seed);
            let s0 = sample_categorical(cfg.initial_belief.as_slice(), &mut env_rng);
            let mut system = SimulatedSystem::new(&env, s0, env_rng);
            let mut agent = MobalAgent::start(&cfg, cache.clone(), agent_rng)?;
            let mut rows = Vec::with_capacity(spec.steps);
            for t in 1..=spec.steps {
                let o = system.step(agent.action())?.observation;
                agent.step(o)?;
                let ks = discrepancies(&cfg.conjecture_space, &env, agent.history())?;
                let k_true = discrepancies(&sanity, &env, agent.history())?[0];
                rows.push(PosteriorEvalRow {
                    seed,
                    t,
                    conjecture: agent.conjecture(),
                    posterior: agent.posterior().weights().to_vec(),
                    gap: gap_from_discrepancies(&ks, agent.posterior())?,
                    discrepancy: ks,
                    discrepancy_true: k_true,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn posterior_eval_csv(rows: &[PosteriorEvalRow]) -> String {
    let k = rows.first().map_or(0, |r| r.posterior.len());
    let mut header: Vec<String> = vec!["seed".into(), "t".into(), "conjecture_idx".into()];
    header.extend((0..k).map(|i| format!("rho_{i}")));
    header.extend((0..k).map(|i| format!("k_{i}")));
    header.push("k_true".into());
    header.push("gap".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.seed.to_string(), r.t.to_string(), r.conjecture.to_string()];
            row.extend(r.posterior.iter().map(|x| fmt_f64(*x)));
            row.extend(r.discrepancy.iter().map(|x| fmt_f64(*x)));
            row.push(fmt_f64(r.discrepancy_true));
            row.push(fmt_f64(r.gap));
            row
        })
        .collect();
    table("posterior-eval", &header, &body)
}

// ---------------------------------------------------------------------------
// error bounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvalSpec {
    pub rs: Vec<usize>,
    pub r_ref: usize,
    pub p_true: f64,
    pub p_conj: f64,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub pairing: AlphaPairing,
}

impl Default for BoundEvalSpec {
    fn default() -> Self {
        Self {
            rs: vec![1, 2, 5, 10, 20, 50],
            r_ref: REFERENCE_RESOLUTION,
            p_true: TRUE_ATTACK_PROBABILITY,
            p_conj: ANALYSIS_CONJECTURE,
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            seed: 0,
            pairing: AlphaPairing::Observation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvalRow {
    pub r: usize,
    pub epsilon: f64,
    pub approx_bound: f64,
    pub actual_error: f64,
    pub alpha: f64,
    pub misspec_bound: f64,
    pub total_bound: f64,
    /// `sup |J̄* − J*|` over the grid, both from reference solutions.
    pub misspec_actual: f64,
}

/// Bounds for the single-component system under the conjectured model, with
/// the actual error measured on a 101-point grid against the reference
/// solution.
pub fn bound_eval(spec: &BoundEvalSpec) -> Result<Vec<BoundEvalRow>> {
    if spec.rs.is_empty() {
        return arg_err("resolution grid must be non-empty");
    }
    if let Some(&r) = spec.rs.iter().find(|&&r| r == 0 || r > spec.r_ref) {
        return arg_err(format!("resolution {r} must lie in 1..={}", spec.r_ref));
    }
    let truth = build_model(&NetSysConfig::path(1, spec.p_true), None)?;
    let conj = truth_with(spec.p_conj)?;
    let gamma = conj.discount();
    let c_max = compute_c_max(&conj);
    let grid = two_state_grid(GRID_INTERVALS);
    let (reference, reference_true) = rayon::join(
        || reference_cost_function(&conj, spec.r_ref),
        || reference_cost_function(&truth, spec.r_ref),
    );
    let (reference, reference_true) = (reference?, reference_true?);
    let misspec_actual = sup_grid_error(&reference, &reference_true, &grid)?;
    spec.rs
        .par_iter()
        .map(|&r| {
            let rep = Arc::new(enumerate_lattice(2, r)?);
            let plan =
                QuantizedPlan::solve_on(&conj, Arc::clone(&rep), KernelMode::Exact, ANALYSIS_VI_THRESHOLD)?;
            let mut rng = generator(spec.seed, r as u64);
            let epsilon = compute_epsilon(&reference, &rep, spec.samples_per_cell, &mut rng)?;
            let mut probes: Vec<Belief> = (0..rep.len()).map(|i| rep.belief(i)).collect();
            probes.extend(grid.iter().cloned());
            let alpha = compute_alpha(&truth, &conj, &probes, spec.pairing)?;
            let report = suboptimality_bound(alpha, c_max, epsilon, gamma, probes.len());
            Ok(BoundEvalRow {
                r,
                epsilon,
                approx_bound: approximation_bound(epsilon, gamma),
                actual_error: sup_grid_error(&plan, &reference, &grid)?,
                alpha: report.alpha,
                misspec_bound: report.misspec_bound,
                total_bound: report.total_bound,
                misspec_actual,
            })
        })
        .collect()
}

fn truth_with(p: f64) -> Result<PomdpModel> {
    build_model(&NetSysConfig::path(1, p), None)
}

pub fn bound_eval_csv(rows: &[BoundEvalRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.r.to_string(),
                fmt_f64(r.epsilon),
                fmt_f64(r.approx_bound),
                fmt_f64(r.actual_error),
                fmt_f64(r.alpha),
                fmt_f64(r.misspec_bound),
                fmt_f64(r.total_bound),
                fmt_f64(r.misspec_actual),
            ]
        })
        .collect();
    table(
        "bound-eval",
        &[
            "r",
            "epsilon",
            "approx_bound",
            "actual_error",
            "alpha",
            "misspec_bound",
            "total_bound",
            "misspec_actual",
        ],
        &body,
    )
}

// ---------------------------------------------------------------------------
// cost functions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostfunEvalSpec {
    pub rs: Vec<usize>,
    pub r_ref: usize,
    pub p_true: f64,
    pub p_conj: f64,
    pub vi_threshold: f64,
}

impl Default for CostfunEvalSpec {
    fn default() -> Self {
        Self {
            rs: vec![5],
            r_ref: REFERENCE_RESOLUTION,
            p_true: TRUE_ATTACK_PROBABILITY,
            p_conj: ANALYSIS_CONJECTURE,
            vi_threshold: ANALYSIS_VI_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostfunRow {
    pub r: usize,
    pub b1: f64,
    pub j_true_ref: f64,
    pub j_conj_ref: f64,
    pub j_tilde: f64,
}

/// For every `r`, a 101-point sweep of the compromise belief with the true
/// and conjectured reference cost functions and the conjectured quantized
/// approximation.
pub fn costfun_eval(spec: &CostfunEvalSpec) -> Result<Vec<CostfunRow>> {
    if spec.rs.is_empty() || spec.rs.contains(&0) {
        return arg_err("resolutions must be positive and non-empty");
    }
    let truth = truth_with(spec.p_true)?;
    let conj = truth_with(spec.p_conj)?;
    let (reference_true, reference_conj) = rayon::join(
        || reference_cost_function(&truth, spec.r_ref),
        || reference_cost_function(&conj, spec.r_ref),
    );
    let (reference_true, reference_conj) = (reference_true?, reference_conj?);
    let grid = two_state_grid(GRID_INTERVALS);
    let per_r: Vec<Vec<CostfunRow>> = spec
        .rs
        .par_iter()
        .map(|&r| {
            let plan = QuantizedPlan::solve(&conj, r, KernelMode::Exact, spec.vi_threshold)?;
            grid.iter()
                .map(|b| {
                    Ok(CostfunRow {
                        r,
                        b1: b[1],
                        j_true_ref: reference_true.cost(b)?,
                        j_conj_ref: reference_conj.cost(b)?,
                        j_tilde: plan.cost(b)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_r.into_iter().flatten().collect())
}

pub fn costfun_eval_csv(rows: &[CostfunRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.r.to_string(),
                fmt_f64(r.b1),
                fmt_f64(r.j_true_ref),
                fmt_f64(r.j_conj_ref),
                fmt_f64(r.j_tilde),
            ]
        })
        .collect();
    table("costfun-eval", &["r", "b1", "j_true_ref", "j_conj_ref", "j_tilde"], &body)
}

// ---------------------------------------------------------------------------
// online loop scenarios

/// Decision rule used by [`run_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Mobal,
    /// Uniformly random action each step.
    Random,
    AlwaysBlock,
}

/// JSON scenario for [`run_loop`]. The system's own attack probability is the
/// true parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_system")]
    pub system: NetSysConfig,
    #[serde(default = "default_conjectures")]
    pub conjectures: Vec<f64>,
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_vi_threshold")]
    pub vi_threshold: f64,
    #[serde(default = "default_particles")]
    pub particle_count: usize,
    #[serde(default)]
    pub filter_mode: FilterMode,
    #[serde(default)]
    pub replan_policy: ReplanPolicy,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub strategy: Strategy,
}

fn default_system() -> NetSysConfig {
    NetSysConfig::path(1, TRUE_ATTACK_PROBABILITY)
}
fn default_conjectures() -> Vec<f64> {
    CONJECTURES.to_vec()
}
fn default_resolution() -> usize {
    5
}
fn default_vi_threshold() -> f64 {
    crate::quantize::DEFAULT_VI_THRESHOLD
}
fn default_particles() -> usize {
    crate::filter::DEFAULT_PARTICLES
}
fn default_horizon() -> usize {
    crate::online::DEFAULT_HORIZON
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.system.validate()?;
        Ok(s)
    }

    pub fn loop_config(&self) -> Result<LoopConfig> {
        let space = ConjectureSpace::netsys(&self.system, &self.conjectures)?;
        let mut cfg = LoopConfig::new(space, self.resolution);
        if let Some(w) = &self.prior {
            cfg.prior = Posterior::new(w.clone())?;
        }
        cfg.vi_threshold = self.vi_threshold;
        cfg.particle_count = self.particle_count;
        cfg.filter_mode = self.filter_mode;
        cfg.replan_policy = self.replan_policy;
        cfg.horizon = self.horizon;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub seed: u64,
    pub discounted_return: f64,
    pub final_posterior: Vec<f64>,
    pub counters: LoopCounters,
}

/// Runs one episode per seed. Baseline strategies filter with the first
/// conjecture and keep the prior as their posterior.
pub fn run_loop(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<(LoopSummary, EpisodeLog)>> {
    if seeds.is_empty() {
        return arg_err("seed list must be non-empty");
    }
    let env = build_model(&scenario.system, None)?;
    let cfg = scenario.loop_config()?;
    let cache = match scenario.strategy {
        Strategy::Mobal => PlanCache::warm(&cfg)?,
        _ => PlanCache::new(),
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let log = match scenario.strategy {
                Strategy::Mobal => run_episode_with_cache(&env, &cfg, cache.clone())?,
                Strategy::Random => {
                    let k = env.n_actions();
                    run_baseline(&env, &cfg, |_, rng| Ok(rng.gen_range(0..k)))?
                }
                Strategy::AlwaysBlock => {
                    let all = env.n_actions() - 1;
                    run_baseline(&env, &cfg, |_, _| Ok(all))?
                }
            };
            let final_posterior = log
                .records
                .last()
                .filter(|r| !r.posterior.is_empty())
                .map_or_else(|| cfg.prior.weights().to_vec(), |r| r.posterior.clone());
            let summary = LoopSummary {
                seed,
                discounted_return: log.discounted_return,
                final_posterior,
                counters: log.counters,
            };
            Ok((summary, log))
        })
        .collect()
}

fn run_baseline<F>(env: &PomdpModel, cfg: &LoopConfig, strategy: F) -> Result<EpisodeLog>
where
    F: FnMut(&Belief, &mut ChaCha8Rng) -> Result<usize>,
{
    run_strategy_episode(
        env,
        cfg.conjecture_space.model(0),
        &cfg.initial_belief,
        cfg.horizon,
        cfg.seed,
        strategy,
    )
}

/// Per-seed rows followed by `mean` and `std` rows for the return.
pub fn run_loop_csv(summaries: &[LoopSummary]) -> String {
    let k = summaries.first().map_or(0, |s| s.final_posterior.len());
    let mut header: Vec<String> = vec!["seed".into(), "discounted_return".into()];
    header.extend((0..k).map(|i| format!("rho_{i}")));
    header.extend(
        [
            "impossible_observations",
            "degenerate_evidence",
            "degenerate_particle_steps",
            "plan_solves",
            "plan_cache_hits",
        ]
        .map(String::from),
    );
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut body: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let c = s.counters;
            let mut row = vec![s.seed.to_string(), fmt_f64(s.discounted_return)];
            row.extend(s.final_posterior.iter().map(|x| fmt_f64(*x)));
            row.extend(
                [
                    c.impossible_observations,
                    c.degenerate_evidence,
                    c.degenerate_particle_steps,
                    c.plan_solves,
                    c.plan_cache_hits,
                ]
                .map(|x| x.to_string()),
            );
            row
        })
        .collect();
    let returns: Vec<f64> = summaries.iter().map(|s| s.discounted_return).collect();
    let (mean, std) = mean_std(&returns);
    let pad = header.len() - 2;
    for (label, v) in [("mean", mean), ("std", std)] {
        let mut row = vec![label.to_string(), fmt_f64(v)];
        row.extend(std::iter::repeat_n(String::new(), pad));
        body.push(row);
    }
    table("run-loop", &header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_and_median() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn state_counts_map_to_components() {
        assert_eq!(components_for_states(2).unwrap(), 1);
        assert_eq!(components_for_states(16).unwrap(), 4);
        assert!(components_for_states(3).is_err());
        assert!(components_for_states(1).is_err());
    }

    #[test]
    fn scenario_defaults_and_unknown_fields() {
        let s = Scenario::default();
        assert_eq!(s.conjectures, CONJECTURES.to_vec());
        assert_eq!(s.horizon, 100);
        assert_eq!(s.system.p_attack, TRUE_ATTACK_PROBABILITY);
        assert!(Scenario::from_json(r#"{"horizn": 3}"#).is_err());
        let s = Scenario::from_json(r#"{"strategy": "random", "horizon": 7}"#).unwrap();
        assert_eq!(s.strategy, Strategy::Random);
        assert_eq!(s.loop_config().unwrap().horizon, 7);
    }

    #[test]
    fn small_runs_are_deterministic() {
        let spec = FilterEvalSpec {
            ns: vec![2],
            ms: vec![1, 5],
            episodes: 2,
            steps: 10,
            seeds: vec![0, 1, 2],
            ..Default::default()
        };
        assert_eq!(filter_eval_csv(&filter_eval(&spec).unwrap()), filter_eval_csv(&filter_eval(&spec).unwrap()));
        let scenario = Scenario { horizon: 10, ..Default::default() };
        let a: Vec<_> = run_loop(&scenario, &[0, 1]).unwrap().into_iter().map(|x| x.0).collect();
        let b: Vec<_> = run_loop(&scenario, &[0, 1]).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(run_loop_csv(&a), run_loop_csv(&b));
    }
}
