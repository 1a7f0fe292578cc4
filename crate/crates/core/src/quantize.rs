//! Belief quantization on the simplex lattice and planning on the
//! resulting finite MDP.
//!
//! The representative set at resolution `r` holds every belief whose
//! coordinates are multiples of `1/r`, ordered lexicographically by the
//! integer composition `(β_1, ..., β_n)`. Beliefs map to the nearest
//! representative in the sup norm; ties go to the lowest index.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MobalError, Result};
use crate::pomdp::{sample_categorical, Belief, PomdpModel};

/// Default cap on the number of representative beliefs.
pub const DEFAULT_MAX_POINTS: usize = 2_000_000;

/// Default cap on stored kernel entries (`|B̃| · |A| · min(|O|, |B̃|)`).
pub const DEFAULT_MAX_KERNEL_ENTRIES: u128 = 400_000_000;

/// Exact kernel construction is used up to this many observations.
pub const EXACT_OBSERVATION_LIMIT: usize = 4096;

/// Value-iteration stopping threshold used by the online loop.
pub const DEFAULT_VI_THRESHOLD: f64 = 0.1;

/// `C(a, b)` as an exact integer.
pub fn binomial(a: u64, b: u64) -> u128 {
    if b > a {
        return 0;
    }
    let b = b.min(a - b);
    (0..b).fold(1u128, |acc, i| acc * u128::from(a - i) / u128::from(i + 1))
}

/// Number of lattice points `C(r+n−1, n−1)`. Resolution 0 yields the single
/// all-zero composition.
pub fn lattice_count(n: usize, r: usize) -> u128 {
    if n == 0 {
        return 0;
    }
    binomial((r + n - 1) as u64, (n - 1) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeBeliefSet {
    resolution: usize,
    n_states: usize,
    points: Vec<Vec<f64>>,
}

/// All lattice beliefs for `n` states at resolution `r`.
pub fn enumerate_lattice(n: usize, r: usize) -> Result<RepresentativeBeliefSet> {
    enumerate_lattice_with_limit(n, r, DEFAULT_MAX_POINTS)
}

pub fn enumerate_lattice_with_limit(
    n: usize,
    r: usize,
    max_points: usize,
) -> Result<RepresentativeBeliefSet> {
    if n == 0 || r == 0 {
        return arg_err("lattice requires n >= 1 and r >= 1");
    }
    let count = lattice_count(n, r);
    if count > max_points as u128 {
        return Err(MobalError::Capacity(format!(
            "{count} representative beliefs exceed the limit of {max_points}"
        )));
    }
    let mut points = Vec::with_capacity(count as usize);
    let mut beta = vec![0usize; n];
    fill_compositions(&mut beta, 0, r, r, &mut points);
    Ok(RepresentativeBeliefSet { resolution: r, n_states: n, points })
}

fn fill_compositions(
    beta: &mut [usize],
    pos: usize,
    remaining: usize,
    r: usize,
    out: &mut Vec<Vec<f64>>,
) {
    if pos + 1 == beta.len() {
        beta[pos] = remaining;
        out.push(beta.iter().map(|&k| k as f64 / r as f64).collect());
        return;
    }
    for k in 0..=remaining {
        beta[pos] = k;
        fill_compositions(beta, pos + 1, remaining - k, r, out);
    }
}

#[inline]
fn coord_distance(b: f64, k: usize, r: usize) -> f64 {
    (b - k as f64 / r as f64).abs()
}

impl RepresentativeBeliefSet {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    pub fn belief(&self, idx: usize) -> Belief {
        Belief::from_vec_unchecked(self.points[idx].clone())
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Integer composition of point `idx`.
    pub fn composition(&self, idx: usize) -> Vec<usize> {
        self.points[idx].iter().map(|p| (p * self.resolution as f64).round() as usize).collect()
    }

    /// Lexicographic rank of a composition of `r` into `n` parts.
    pub fn index_of(&self, beta: &[usize]) -> usize {
        let n = self.n_states;
        let mut rank: u128 = 0;
        let mut remaining = self.resolution as u64;
        for (s, &b) in beta.iter().enumerate().take(n - 1) {
            let b = b as u64;
            // compositions with a smaller value at position s
            let parts = (n - s - 1) as u64;
            rank += binomial(remaining + parts, parts) - binomial(remaining - b + parts, parts);
            remaining -= b;
        }
        rank as usize
    }

    /// Index of the sup-norm nearest representative of `b`.
    pub fn quantize(&self, b: &Belief) -> Result<usize> {
        if b.len() != self.n_states {
            return arg_err("belief dimension does not match the lattice");
        }
        Ok(self.quantize_slice(b.as_slice()))
    }

    pub(crate) fn quantize_slice(&self, b: &[f64]) -> usize {
        let beta = self.nearest_composition(b);
        self.index_of(&beta)
    }

    /// Lexicographically smallest composition minimizing the sup-norm
    /// distance. Every minimizer lies within one lattice step of `r·b` in
    /// each coordinate, so only a small window of integers is examined.
    fn nearest_composition(&self, b: &[f64]) -> Vec<usize> {
        let (n, r) = (self.n_states, self.resolution);
        let windows: Vec<(usize, usize)> = b
            .iter()
            .map(|&x| {
                let base = (x * r as f64).floor().clamp(0.0, r as f64) as usize;
                (base.saturating_sub(2), (base + 3).min(r))
            })
            .collect();
        let mut candidates: Vec<f64> = b
            .iter()
            .zip(&windows)
            .flat_map(|(&x, &(lo, hi))| (lo..=hi).map(move |k| coord_distance(x, k, r)))
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();

        let bounds_at = |d: f64| -> Option<Vec<(usize, usize)>> {
            let mut out = Vec::with_capacity(n);
            for (&x, &(lo, hi)) in b.iter().zip(&windows) {
                let mut ks = (lo..=hi).filter(|&k| coord_distance(x, k, r) <= d);
                let first = ks.next()?;
                let last = ks.next_back().unwrap_or(first);
                out.push((first, last));
            }
            let (sum_lo, sum_hi) =
                out.iter().fold((0, 0), |(a, c), &(lo, hi)| (a + lo, c + hi));
            (sum_lo <= r && r <= sum_hi).then_some(out)
        };

        // smallest feasible candidate distance
        let (mut lo, mut hi) = (0usize, candidates.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if bounds_at(candidates[mid]).is_some() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let bounds = bounds_at(candidates[lo]).expect("largest candidate is always feasible");

        let mut suffix_hi = vec![0usize; n + 1];
        for s in (0..n).rev() {
            suffix_hi[s] = suffix_hi[s + 1] + bounds[s].1;
        }
        let mut remaining = r;
        let mut beta = Vec::with_capacity(n);
        for s in 0..n {
            let k = bounds[s].0.max(remaining.saturating_sub(suffix_hi[s + 1]));
            beta.push(k);
            remaining -= k;
        }
        beta
    }
}

/// How the quantized transition kernel is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelMode {
    /// Enumerate every observation.
    Exact,
    /// Estimate each row from `samples` simulated observations.
    MonteCarlo { samples: usize, seed: u64 },
}

impl KernelMode {
    /// Exact when the observation space is small enough, otherwise
    /// Monte-Carlo with 10^4 samples per row.
    pub fn auto(model: &PomdpModel) -> Self {
        if model.n_observations() <= EXACT_OBSERVATION_LIMIT {
            KernelMode::Exact
        } else {
            KernelMode::MonteCarlo { samples: 10_000, seed: 0 }
        }
    }
}

/// Finite MDP over the representative beliefs. Transition rows are stored
/// sparsely as `(target index, probability)` pairs sorted by target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMdp {
    rep_set: Arc<RepresentativeBeliefSet>,
    n_actions: usize,
    /// Row `a * |B̃| + i` holds `p̂(· | b̃_i, a)`.
    transitions: Vec<Vec<(usize, f64)>>,
    /// `costs[i * n_actions + a] = ĉ(b̃_i, a)`.
    costs: Vec<f64>,
    discount: f64,
}

impl QuantizedMdp {
    pub fn rep_set(&self) -> &RepresentativeBeliefSet {
        &self.rep_set
    }

    pub fn shared_rep_set(&self) -> Arc<RepresentativeBeliefSet> {
        Arc::clone(&self.rep_set)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_points(&self) -> usize {
        self.rep_set.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn row(&self, a: usize, i: usize) -> &[(usize, f64)] {
        &self.transitions[a * self.n_points() + i]
    }

    /// Dense copy of row `(a, i)`.
    pub fn dense_row(&self, a: usize, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_points()];
        for &(j, p) in self.row(a, i) {
            out[j] = p;
        }
        out
    }

    pub fn cost(&self, i: usize, a: usize) -> f64 {
        self.costs[i * self.n_actions + a]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn q_value(&self, i: usize, a: usize, values: &[f64]) -> f64 {
        let future: f64 = self.row(a, i).iter().map(|&(j, p)| p * values[j]).sum();
        self.cost(i, a) + self.discount * future
    }

    /// `(min_a Q, argmin_a Q)` with ties to the lowest action.
    fn bellman(&self, i: usize, values: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for a in 0..self.n_actions {
            let q = self.q_value(i, a, values);
            if q < best.0 {
                best = (q, a);
            }
        }
        best
    }
}

pub fn build_quantized_mdp(
    model: &PomdpModel,
    rep: Arc<RepresentativeBeliefSet>,
    mode: KernelMode,
) -> Result<QuantizedMdp> {
    build_quantized_mdp_with_limit(model, rep, mode, DEFAULT_MAX_KERNEL_ENTRIES)
}

pub fn build_quantized_mdp_with_limit(
    model: &PomdpModel,
    rep: Arc<RepresentativeBeliefSet>,
    mode: KernelMode,
    max_entries: u128,
) -> Result<QuantizedMdp> {
    if model.n_states() != rep.n_states() {
        return arg_err("model and representative set have different state counts");
    }
    let (n_points, n_actions) = (rep.len(), model.n_actions());
    let support = match mode {
        KernelMode::Exact => model.n_observations(),
        KernelMode::MonteCarlo { samples, .. } => {
            if samples == 0 {
                return arg_err("Monte-Carlo kernel requires a positive sample count");
            }
            samples
        }
    };
    let entries = n_points as u128 * n_actions as u128 * support.min(n_points) as u128;
    if entries > max_entries {
        return Err(MobalError::Capacity(format!(
            "quantized kernel needs up to {entries} entries, limit is {max_entries}"
        )));
    }

    let transitions: Vec<Vec<(usize, f64)>> = (0..n_actions * n_points)
        .into_par_iter()
        .map(|row| {
            let (a, i) = (row / n_points, row % n_points);
            let b = rep.point(i);
            match mode {
                KernelMode::Exact => exact_row(model, &rep, b, a),
                KernelMode::MonteCarlo { samples, seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(row as u64);
                    monte_carlo_row(model, &rep, b, a, samples, &mut rng)
                }
            }
        })
        .collect();

    let mut costs = Vec::with_capacity(n_points * n_actions);
    for i in 0..n_points {
        for a in 0..n_actions {
            costs.push(model.belief_cost_unchecked(rep.point(i), a));
        }
    }
    Ok(QuantizedMdp { rep_set: rep, n_actions, transitions, costs, discount: model.discount() })
}

fn merge_row(mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (j, p) in entries {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => out.push((j, p)),
        }
    }
    out
}

fn exact_row(
    model: &PomdpModel,
    rep: &RepresentativeBeliefSet,
    b: &[f64],
    a: usize,
) -> Vec<(usize, f64)> {
    let mut entries = Vec::new();
    model.for_each_successor(b, a, |_, p, succ| entries.push((rep.quantize_slice(succ), p)));
    merge_row(entries)
}

fn monte_carlo_row<R: Rng + ?Sized>(
    model: &PomdpModel,
    rep: &RepresentativeBeliefSet,
    b: &[f64],
    a: usize,
    samples: usize,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    let mut pred = vec![0.0; model.n_states()];
    model.predict_into(b, a, &mut pred);
    let obs_dist = model.observation_distribution_from_prediction(&pred);
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for _ in 0..samples {
        *counts.entry(sample_categorical(&obs_dist, rng)).or_default() += 1;
    }
    let mut succ = vec![0.0; model.n_states()];
    let entries = counts
        .into_iter()
        .map(|(o, c)| {
            let mut total = 0.0;
            for (j, (s, p)) in succ.iter_mut().zip(&pred).enumerate() {
                *s = p * model.observation(j, o);
                total += *s;
            }
            succ.iter_mut().for_each(|x| *x /= total);
            (rep.quantize_slice(&succ), c as f64 / samples as f64)
        })
        .collect();
    merge_row(entries)
}

/// Optimal values and greedy policy of a quantized MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedPlan {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

impl SolvedPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

const PARALLEL_SWEEP_MIN: usize = 2048;

/// Synchronous value iteration from `V = 0` until the sup-norm change of a
/// sweep is at most `threshold`. The policy is greedy with respect to the
/// final values.
pub fn value_iteration(qmdp: &QuantizedMdp, threshold: f64) -> Result<SolvedPlan> {
    if threshold.is_nan() || threshold <= 0.0 {
        return arg_err("value-iteration threshold must be positive");
    }
    let n = qmdp.n_points();
    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        let next: Vec<f64> = if n >= PARALLEL_SWEEP_MIN {
            (0..n).into_par_iter().map(|i| qmdp.bellman(i, &values).0).collect()
        } else {
            (0..n).map(|i| qmdp.bellman(i, &values).0).collect()
        };
        let change = next.iter().zip(&values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        values = next;
        sweeps += 1;
        if change <= threshold {
            break;
        }
    }
    let policy = (0..n).map(|i| qmdp.bellman(i, &values).1).collect();
    Ok(SolvedPlan { values, policy, sweeps })
}

/// Sup-norm Bellman residual `max_i |T V(i) − V(i)|`.
pub fn bellman_residual(qmdp: &QuantizedMdp, values: &[f64]) -> f64 {
    (0..qmdp.n_points())
        .map(|i| (qmdp.bellman(i, values).0 - values[i]).abs())
        .fold(0.0, f64::max)
}

/// `J̃(b) = V*(Φ(b))`.
pub fn approx_cost(plan: &SolvedPlan, rep: &RepresentativeBeliefSet, b: &Belief) -> Result<f64> {
    Ok(plan.values[rep.quantize(b)?])
}

/// `π̃(b) = μ*(Φ(b))`.
pub fn approx_policy(
    plan: &SolvedPlan,
    rep: &RepresentativeBeliefSet,
    b: &Belief,
) -> Result<usize> {
    Ok(plan.policy[rep.quantize(b)?])
}

/// A solved quantized model together with its lattice and kernel.
#[derive(Debug, Clone)]
pub struct QuantizedPlan {
    pub mdp: QuantizedMdp,
    pub solution: SolvedPlan,
}

impl QuantizedPlan {
    /// Enumerates the lattice, builds the kernel and runs value iteration.
    pub fn solve(
        model: &PomdpModel,
        resolution: usize,
        mode: KernelMode,
        threshold: f64,
    ) -> Result<Self> {
        let rep = Arc::new(enumerate_lattice(model.n_states(), resolution)?);
        Self::solve_on(model, rep, mode, threshold)
    }

    pub fn solve_on(
        model: &PomdpModel,
        rep: Arc<RepresentativeBeliefSet>,
        mode: KernelMode,
        threshold: f64,
    ) -> Result<Self> {
        let mdp = build_quantized_mdp(model, rep, mode)?;
        let solution = value_iteration(&mdp, threshold)?;
        Ok(Self { mdp, solution })
    }

    pub fn rep_set(&self) -> &RepresentativeBeliefSet {
        self.mdp.rep_set()
    }

    pub fn cost(&self, b: &Belief) -> Result<f64> {
        approx_cost(&self.solution, self.rep_set(), b)
    }

    pub fn action(&self, b: &Belief) -> Result<usize> {
        approx_policy(&self.solution, self.rep_set(), b)
    }
}
