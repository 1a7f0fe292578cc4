//! Computable error bounds for quantized planning under a misspecified
//! model.
//!
//! * `α`: worst total-variation gap between the belief-transition kernels
//!   of the true and conjectured models, estimated over a probe set.
//! * `c_max`: largest expected stage cost.
//! * `ε`: largest within-cell variation of the conjectured optimal cost,
//!   estimated from a fine-resolution reference solution.
//!
//! The misspecification bound is `γ α c_max / (1−γ)²`, the approximation
//! bound `ε / (1−γ)`, and the total sub-optimality bound their sum.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MobalError, Result};
use crate::pomdp::{Belief, PomdpModel, MERGE_TOLERANCE};
use crate::quantize::{enumerate_lattice, KernelMode, QuantizedPlan, RepresentativeBeliefSet};

/// Value-iteration threshold for reference and evaluated solutions.
pub const ANALYSIS_VI_THRESHOLD: f64 = 1e-6;

/// Largest state count accepted by [`reference_cost_function`].
pub const MAX_REFERENCE_STATES: usize = 4;

/// Default random beliefs drawn per cell when estimating `ε`.
pub const DEFAULT_SAMPLES_PER_CELL: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub c_max: f64,
    pub epsilon: f64,
    pub misspec_bound: f64,
    pub approx_bound: f64,
    pub total_bound: f64,
    pub probe_count: usize,
}

/// Largest stage cost. The expected cost is linear in the belief, so the
/// maximum over the simplex sits at a vertex.
pub fn compute_c_max(model: &PomdpModel) -> f64 {
    (0..model.n_states())
        .flat_map(|s| (0..model.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| model.cost(s, a))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// How successor beliefs of the two models are matched in `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlphaPairing {
    /// Successors produced by the same observation are compared.
    #[default]
    Observation,
    /// Successors are compared by belief identity over the union of both
    /// supports.
    Belief,
}

/// Estimate of `α` as the maximum kernel gap over `probes × actions`,
/// clamped to `[0, 2]`. Adding probes never lowers the result.
pub fn compute_alpha(
    model_true: &PomdpModel,
    model_conj: &PomdpModel,
    probes: &[Belief],
    pairing: AlphaPairing,
) -> Result<f64> {
    if !model_true.same_shape(model_conj) {
        return arg_err("models have different dimensions");
    }
    if probes.is_empty() {
        return arg_err("probe set must be non-empty");
    }
    let mut alpha: f64 = 0.0;
    for b in probes {
        for a in 0..model_true.n_actions() {
            let gap = match pairing {
                AlphaPairing::Observation => {
                    let p = model_true.observation_distribution(b, a)?;
                    let q = model_conj.observation_distribution(b, a)?;
                    p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum()
                }
                AlphaPairing::Belief => belief_keyed_gap(model_true, model_conj, b, a)?,
            };
            alpha = alpha.max(gap);
        }
    }
    Ok(alpha.clamp(0.0, 2.0))
}

fn belief_keyed_gap(p: &PomdpModel, q: &PomdpModel, b: &Belief, a: usize) -> Result<f64> {
    let sp = p.belief_transition_support(b, a)?;
    let mut sq: Vec<Option<(Belief, f64)>> =
        q.belief_transition_support(b, a)?.into_iter().map(Some).collect();
    let mut gap = 0.0;
    for (bp, pp) in sp {
        let matched = sq
            .iter_mut()
            .find(|e| e.as_ref().is_some_and(|(bq, _)| bq.approx_eq(&bp, MERGE_TOLERANCE)))
            .and_then(Option::take);
        gap += match matched {
            Some((_, pq)) => (pp - pq).abs(),
            None => pp,
        };
    }
    gap += sq.into_iter().flatten().map(|(_, pq)| pq).sum::<f64>();
    Ok(gap)
}

/// High-resolution quantized solution standing in for the optimal cost
/// function of `model`.
pub fn reference_cost_function(model: &PomdpModel, r_ref: usize) -> Result<QuantizedPlan> {
    reference_cost_function_with_threshold(model, r_ref, ANALYSIS_VI_THRESHOLD)
}

pub fn reference_cost_function_with_threshold(
    model: &PomdpModel,
    r_ref: usize,
    threshold: f64,
) -> Result<QuantizedPlan> {
    if model.n_states() > MAX_REFERENCE_STATES {
        return Err(MobalError::Capacity(format!(
            "reference solutions support at most {MAX_REFERENCE_STATES} states"
        )));
    }
    let rep = Arc::new(enumerate_lattice(model.n_states(), r_ref)?);
    QuantizedPlan::solve_on(model, rep, KernelMode::Exact, threshold)
}

/// Estimate of `ε` for the partition induced by `rep`: the largest spread of
/// reference values among reference lattice points and random beliefs that
/// fall into the same cell.
pub fn compute_epsilon<R: Rng + ?Sized>(
    reference: &QuantizedPlan,
    rep: &RepresentativeBeliefSet,
    samples_per_cell: usize,
    rng: &mut R,
) -> Result<f64> {
    let ref_rep = reference.rep_set();
    if ref_rep.n_states() != rep.n_states() {
        return arg_err("reference and lattice have different state counts");
    }
    if ref_rep.resolution() < rep.resolution() {
        return arg_err("reference resolution must be at least the evaluated resolution");
    }
    let n = rep.n_states();
    let mut lo = vec![f64::INFINITY; rep.len()];
    let mut hi = vec![f64::NEG_INFINITY; rep.len()];
    let mut record = |cell: usize, v: f64| {
        lo[cell] = lo[cell].min(v);
        hi[cell] = hi[cell].max(v);
    };
    for (j, v) in reference.solution.values.iter().enumerate() {
        record(rep.quantize_slice(ref_rep.point(j)), *v);
    }
    let radius = 1.0 / rep.resolution() as f64;
    let mut candidate = vec![0.0; n];
    for cell in 0..rep.len() {
        let center = rep.point(cell);
        let (mut accepted, mut attempts) = (0, 0);
        while accepted < samples_per_cell && attempts < 50 * samples_per_cell {
            attempts += 1;
            for (c, x) in candidate.iter_mut().zip(center) {
                *c = (x + rng.gen_range(-radius..=radius)).max(0.0);
            }
            let total: f64 = candidate.iter().sum();
            if total <= 0.0 {
                continue;
            }
            candidate.iter_mut().for_each(|c| *c /= total);
            if rep.quantize_slice(&candidate) != cell {
                continue;
            }
            accepted += 1;
            let v = reference.solution.values[ref_rep.quantize_slice(&candidate)];
            record(cell, v);
        }
    }
    Ok(lo
        .iter()
        .zip(&hi)
        .filter(|(l, h)| l.is_finite() && h.is_finite())
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max))
}

/// `γ α c_max / (1−γ)²`.
pub fn misspecification_bound(alpha: f64, c_max: f64, gamma: f64) -> f64 {
    gamma * alpha * c_max / ((1.0 - gamma) * (1.0 - gamma))
}

/// `ε / (1−γ)`.
pub fn approximation_bound(epsilon: f64, gamma: f64) -> f64 {
    epsilon / (1.0 - gamma)
}

/// Assembles the sub-optimality report; the total is the sum of the two
/// component bounds.
pub fn suboptimality_bound(
    alpha: f64,
    c_max: f64,
    epsilon: f64,
    gamma: f64,
    probe_count: usize,
) -> BoundReport {
    let misspec_bound = misspecification_bound(alpha, c_max, gamma);
    let approx_bound = approximation_bound(epsilon, gamma);
    BoundReport {
        alpha,
        c_max,
        epsilon,
        misspec_bound,
        approx_bound,
        total_bound: approx_bound + misspec_bound,
        probe_count,
    }
}

/// `k + 1` two-state beliefs `(1 − x, x)` with `x = i/k`.
pub fn two_state_grid(k: usize) -> Vec<Belief> {
    (0..=k)
        .map(|i| {
            let x = i as f64 / k as f64;
            Belief::from_vec_unchecked(vec![1.0 - x, x])
        })
        .collect()
}

/// `max_b |f(b) − g(b)|` over `grid`.
pub fn sup_grid_error(
    f: &QuantizedPlan,
    g: &QuantizedPlan,
    grid: &[Belief],
) -> Result<f64> {
    grid.iter().try_fold(0.0f64, |acc, b| Ok(acc.max((f.cost(b)? - g.cost(b)?).abs())))
}
