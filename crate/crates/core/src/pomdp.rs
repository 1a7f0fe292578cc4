//! Finite POMDP model and belief-MDP semantics.
//!
//! States, actions and observations are dense 0-based indices. The model
//! stores the transition tensor `[action][state][next_state]`, the
//! observation matrix `[next_state][observation]` and the cost matrix
//! `[state][action]` in flat row-major buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MobalError, Result};

/// Tolerance on probability-row sums accepted at construction.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// Successor beliefs closer than this (componentwise) are merged.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// A probability vector over the states of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates a probability vector. Sums within [`ROW_TOLERANCE`] of one
    /// are renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return arg_err("belief must have at least one entry");
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return arg_err(format!("belief has negative or non-finite entries: {probs:?}"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > ROW_TOLERANCE {
            return arg_err(format!("belief sums to {total}, expected 1"));
        }
        Ok(Self::normalized(probs, total))
    }

    /// Point mass on `state`.
    pub fn point(n_states: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[state] = 1.0;
        Belief(probs)
    }

    pub fn uniform(n_states: usize) -> Self {
        Belief(vec![1.0 / n_states as f64; n_states])
    }

    /// Builds a belief from nonnegative unnormalized mass.
    pub(crate) fn from_mass(mass: Vec<f64>) -> Self {
        let total: f64 = mass.iter().sum();
        Self::normalized(mass, total)
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Belief(probs)
    }

    fn normalized(mut probs: Vec<f64>, total: f64) -> Self {
        if total != 1.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Belief(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Componentwise equality within `tol`.
    pub fn approx_eq(&self, other: &Belief, tol: f64) -> bool {
        self.len() == other.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = MobalError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Vec<f64> {
        b.0
    }
}

/// A finite discounted POMDP. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct PomdpModel {
    n_states: usize,
    n_actions: usize,
    n_observations: usize,
    transition: Vec<f64>,
    observation: Vec<f64>,
    cost: Vec<f64>,
    discount: f64,
}

/// JSON layout of a model: nested arrays indexed as documented on
/// [`PomdpModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_observations: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub observation: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub discount: f64,
}

impl TryFrom<ModelDocument> for PomdpModel {
    type Error = MobalError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let model = PomdpModel::new(doc.transition, doc.observation, doc.cost, doc.discount)?;
        if model.n_states != doc.n_states
            || model.n_actions != doc.n_actions
            || model.n_observations != doc.n_observations
        {
            return Err(MobalError::InvalidModel(format!(
                "declared sizes ({}, {}, {}) disagree with array shapes ({}, {}, {})",
                doc.n_states,
                doc.n_actions,
                doc.n_observations,
                model.n_states,
                model.n_actions,
                model.n_observations
            )));
        }
        Ok(model)
    }
}

impl From<PomdpModel> for ModelDocument {
    fn from(m: PomdpModel) -> Self {
        let transition = (0..m.n_actions)
            .map(|a| (0..m.n_states).map(|s| m.transition_row(a, s).to_vec()).collect())
            .collect();
        let observation = (0..m.n_states).map(|s| m.observation_row(s).to_vec()).collect();
        let cost = m.cost.chunks(m.n_actions).map(<[f64]>::to_vec).collect();
        ModelDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            n_observations: m.n_observations,
            transition,
            observation,
            cost,
            discount: m.discount,
        }
    }
}

fn check_distribution_row(row: &mut [f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(MobalError::InvalidModel(format!("{what} has entries outside [0,1]")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(MobalError::InvalidModel(format!("{what} sums to {total}")));
    }
    if total != 1.0 {
        row.iter_mut().for_each(|p| *p /= total);
    }
    Ok(())
}

impl PomdpModel {
    /// Builds a model from nested arrays `transition[a][s][s']`,
    /// `observation[s'][o]` and `cost[s][a]`.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        observation: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let n_actions = transition.len();
        let n_states = observation.len();
        let n_observations = observation.first().map_or(0, Vec::len);
        if n_actions == 0 || n_states == 0 || n_observations == 0 {
            return Err(MobalError::InvalidModel("empty state, action or observation set".into()));
        }
        let mut flat_t = Vec::with_capacity(n_actions * n_states * n_states);
        for (a, rows) in transition.into_iter().enumerate() {
            if rows.len() != n_states || rows.iter().any(|r| r.len() != n_states) {
                return Err(MobalError::InvalidModel(format!(
                    "transition[{a}] must be {n_states}x{n_states}"
                )));
            }
            rows.into_iter().for_each(|r| flat_t.extend(r));
        }
        if observation.iter().any(|r| r.len() != n_observations) {
            return Err(MobalError::InvalidModel("observation rows have unequal lengths".into()));
        }
        if cost.len() != n_states || cost.iter().any(|r| r.len() != n_actions) {
            return Err(MobalError::InvalidModel(format!(
                "cost must be {n_states}x{n_actions}"
            )));
        }
        Self::from_flat(
            n_states,
            n_actions,
            n_observations,
            flat_t,
            observation.into_iter().flatten().collect(),
            cost.into_iter().flatten().collect(),
            discount,
        )
    }

    /// Builds a model from row-major flat buffers.
    pub fn from_flat(
        n_states: usize,
        n_actions: usize,
        n_observations: usize,
        mut transition: Vec<f64>,
        mut observation: Vec<f64>,
        cost: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_observations == 0 {
            return Err(MobalError::InvalidModel("empty state, action or observation set".into()));
        }
        if transition.len() != n_actions * n_states * n_states
            || observation.len() != n_states * n_observations
            || cost.len() != n_states * n_actions
        {
            return Err(MobalError::InvalidModel("buffer sizes do not match dimensions".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(MobalError::InvalidModel(format!(
                "discount must lie in (0,1), got {discount}"
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(MobalError::InvalidModel("cost has non-finite entries".into()));
        }
        for (i, row) in transition.chunks_mut(n_states).enumerate() {
            let (a, s) = (i / n_states, i % n_states);
            check_distribution_row(row, &format!("transition[{a}][{s}]"))?;
        }
        for (s, row) in observation.chunks_mut(n_observations).enumerate() {
            check_distribution_row(row, &format!("observation[{s}]"))?;
        }
        Ok(Self { n_states, n_actions, n_observations, transition, observation, cost, discount })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Same dynamics with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return arg_err(format!("discount must lie in (0,1), got {discount}"));
        }
        Ok(Self { discount, ..self.clone() })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `p_{s s'}(a)`.
    pub fn transition(&self, a: usize, s: usize, next: usize) -> f64 {
        self.transition[(a * self.n_states + s) * self.n_states + next]
    }

    pub fn transition_row(&self, a: usize, s: usize) -> &[f64] {
        let start = (a * self.n_states + s) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// `z(o | s')`.
    pub fn observation(&self, next: usize, o: usize) -> f64 {
        self.observation[next * self.n_observations + o]
    }

    pub fn observation_row(&self, next: usize) -> &[f64] {
        let start = next * self.n_observations;
        &self.observation[start..start + self.n_observations]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    /// True when both models share state, action and observation spaces.
    pub fn same_shape(&self, other: &PomdpModel) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.n_observations == other.n_observations
    }

    pub(crate) fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return arg_err(format!("action {a} out of range (n_actions={})", self.n_actions));
        }
        Ok(())
    }

    pub(crate) fn check_observation(&self, o: usize) -> Result<()> {
        if o >= self.n_observations {
            return arg_err(format!(
                "observation {o} out of range (n_observations={})",
                self.n_observations
            ));
        }
        Ok(())
    }

    pub(crate) fn check_belief(&self, b: &Belief) -> Result<()> {
        if b.len() != self.n_states {
            return arg_err(format!(
                "belief has {} entries, model has {} states",
                b.len(),
                self.n_states
            ));
        }
        Ok(())
    }

    /// Expected stage cost `Σ_s b(s) c(s,a)`.
    pub fn belief_cost(&self, b: &Belief, a: usize) -> Result<f64> {
        self.check_action(a)?;
        self.check_belief(b)?;
        Ok(self.belief_cost_unchecked(b.as_slice(), a))
    }

    pub(crate) fn belief_cost_unchecked(&self, b: &[f64], a: usize) -> f64 {
        b.iter().enumerate().map(|(s, p)| p * self.cost(s, a)).sum()
    }

    /// One-step predicted state distribution `Σ_s b(s) p_{s·}(a)`.
    pub fn predict(&self, b: &Belief, a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        self.check_belief(b)?;
        let mut out = vec![0.0; self.n_states];
        self.predict_into(b.as_slice(), a, &mut out);
        Ok(out)
    }

    pub(crate) fn predict_into(&self, b: &[f64], a: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, &p) in b.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.transition_row(a, s)) {
                *o += p * t;
            }
        }
    }

    /// Probability of each observation after taking `a` in belief `b`.
    pub fn observation_distribution(&self, b: &Belief, a: usize) -> Result<Vec<f64>> {
        let pred = self.predict(b, a)?;
        Ok(self.observation_distribution_from_prediction(&pred))
    }

    pub(crate) fn observation_distribution_from_prediction(&self, pred: &[f64]) -> Vec<f64> {
        let mut dist = vec![0.0; self.n_observations];
        for (next, &p) in pred.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (d, z) in dist.iter_mut().zip(self.observation_row(next)) {
                *d += p * z;
            }
        }
        dist
    }

    /// `Σ_i Σ_j z(o|j) b(i) p_ij(a)`.
    pub fn observation_likelihood(&self, b: &Belief, a: usize, o: usize) -> Result<f64> {
        self.check_observation(o)?;
        let pred = self.predict(b, a)?;
        Ok(pred.iter().enumerate().map(|(j, p)| p * self.observation(j, o)).sum())
    }

    /// Bayes filter update of `b` after action `a` and observation `o`.
    pub fn belief_update(&self, b: &Belief, a: usize, o: usize) -> Result<Belief> {
        self.check_observation(o)?;
        let pred = self.predict(b, a)?;
        let mass: Vec<f64> =
            pred.iter().enumerate().map(|(j, p)| p * self.observation(j, o)).collect();
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(MobalError::ImpossibleObservation { action: a, observation: o });
        }
        Ok(Belief::from_mass(mass))
    }

    /// Calls `visit(o, probability, successor)` for every observation with
    /// positive probability. Successors are not merged.
    pub(crate) fn for_each_successor(
        &self,
        b: &[f64],
        a: usize,
        mut visit: impl FnMut(usize, f64, &[f64]),
    ) {
        let mut pred = vec![0.0; self.n_states];
        self.predict_into(b, a, &mut pred);
        let mut succ = vec![0.0; self.n_states];
        for o in 0..self.n_observations {
            let mut total = 0.0;
            for (j, (s, p)) in succ.iter_mut().zip(&pred).enumerate() {
                *s = p * self.observation(j, o);
                total += *s;
            }
            if total <= 0.0 {
                continue;
            }
            succ.iter_mut().for_each(|x| *x /= total);
            visit(o, total, &succ);
        }
    }

    /// The finite support of the belief-MDP kernel `p(b' | b, a)`. Identical
    /// successors (within [`MERGE_TOLERANCE`]) are merged.
    pub fn belief_transition_support(&self, b: &Belief, a: usize) -> Result<Vec<(Belief, f64)>> {
        self.check_action(a)?;
        self.check_belief(b)?;
        let mut raw: Vec<(Vec<f64>, f64)> = Vec::new();
        self.for_each_successor(b.as_slice(), a, |_, p, succ| raw.push((succ.to_vec(), p)));
        raw.sort_by(|x, y| {
            x.0.iter()
                .zip(&y.0)
                .map(|(u, v)| u.total_cmp(v))
                .find(|c| c.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut merged: Vec<(Vec<f64>, f64)> = Vec::with_capacity(raw.len());
        for (succ, p) in raw {
            match merged.last_mut() {
                Some((rep, q))
                    if rep.iter().zip(&succ).all(|(u, v)| (u - v).abs() <= MERGE_TOLERANCE) =>
                {
                    *q += p
                }
                _ => merged.push((succ, p)),
            }
        }
        Ok(merged.into_iter().map(|(v, p)| (Belief::from_vec_unchecked(v), p)).collect())
    }

    /// Draws `s' ~ p_{s·}(a)`.
    pub fn sample_next_state<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition_row(a, s), rng)
    }

    /// Draws `o ~ z(· | s')`.
    pub fn sample_observation<R: Rng + ?Sized>(&self, next: usize, rng: &mut R) -> usize {
        sample_categorical(self.observation_row(next), rng)
    }
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass when rounding leaves `u` above the cumulative sum.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state(transition: [[f64; 2]; 2], observation: [[f64; 2]; 2]) -> PomdpModel {
        PomdpModel::new(
            vec![transition.iter().map(|r| r.to_vec()).collect()],
            observation.iter().map(|r| r.to_vec()).collect(),
            vec![vec![3.0], vec![0.0]],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn belief_cost_examples() {
        let m = two_state([[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(m.belief_cost(&Belief::point(2, 0), 0).unwrap(), 3.0);
        let cost_mean = PomdpModel::new(
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![2.0], vec![0.0]],
            0.5,
        )
        .unwrap();
        let half = Belief::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(cost_mean.belief_cost(&half, 0).unwrap(), 1.0);
        assert!(matches!(m.belief_cost(&half, 1), Err(MobalError::Argument(_))));
    }

    #[test]
    fn informative_observation_collapses_belief() {
        let m = two_state([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]);
        let half = Belief::new(vec![0.5, 0.5]).unwrap();
        let b = m.belief_update(&half, 0, 0).unwrap();
        assert_eq!(b.as_slice(), &[1.0, 0.0]);
        assert_eq!(m.observation_likelihood(&Belief::point(2, 0), 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn uninformative_observation_is_pure_prediction() {
        let m = two_state([[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.5, 0.5]]);
        let b = Belief::new(vec![0.4, 0.6]).unwrap();
        let pred = m.predict(&b, 0).unwrap();
        let post = m.belief_update(&b, 0, 1).unwrap();
        for (x, y) in pred.iter().zip(post.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let support = m.belief_transition_support(&b, 0).unwrap();
        assert_eq!(support.len(), 1);
        assert_abs_diff_eq!(support[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn impossible_observation_is_distinct_error() {
        let m = two_state([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]);
        let err = m.belief_update(&Belief::point(2, 0), 0, 1).unwrap_err();
        assert!(matches!(err, MobalError::ImpossibleObservation { action: 0, observation: 1 }));
    }

    #[test]
    fn construction_rejects_bad_rows_and_renormalizes_drift() {
        let drift = 1.0 + 5e-10;
        let m = PomdpModel::new(
            vec![vec![vec![drift, 0.0], vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            0.5,
        );
        // drift above 1 leaves [0,1] for the single entry
        assert!(m.is_err());
        let m = PomdpModel::new(
            vec![vec![vec![0.5, 0.5 + 5e-10], vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            0.5,
        )
        .unwrap();
        assert_abs_diff_eq!(m.transition_row(0, 0).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        let bad = PomdpModel::new(
            vec![vec![vec![0.5, 0.4], vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            0.5,
        );
        assert!(matches!(bad, Err(MobalError::InvalidModel(_))));
        let bad_discount = PomdpModel::new(
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            1.0,
        );
        assert!(bad_discount.is_err());
    }

    #[test]
    fn json_round_trip_uses_documented_field_names() {
        let m = two_state([[0.7, 0.3], [0.2, 0.8]], [[0.9, 0.1], [0.25, 0.75]]);
        let text = m.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in
            ["n_states", "n_actions", "n_observations", "transition", "observation", "cost", "discount"]
        {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["transition"][0][1][0], 0.2);
        assert_eq!(PomdpModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn belief_rejects_invalid_vectors() {
        assert!(Belief::new(vec![0.5, 0.4]).is_err());
        assert!(Belief::new(vec![1.5, -0.5]).is_err());
        assert!(Belief::new(vec![]).is_err());
        assert!(Belief::new(vec![0.3, 0.7]).is_ok());
    }
}
