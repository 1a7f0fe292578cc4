//! Bayesian learning over a finite set of conjectured models.
//!
//! The posterior is updated with the one-step observation likelihood of
//! each conjectured model. The discrepancy `K` is the belief-averaged
//! Kullback-Leibler divergence between the true and conjectured observation
//! distributions, with actions marginalized by their empirical frequency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MobalError, Result};
use crate::netsys::{build_model, NetSysConfig};
use crate::pomdp::{sample_categorical, Belief, PomdpModel};

/// A finite conjecture space: one model per parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureSpace {
    parameters: Vec<Vec<f64>>,
    models: Vec<PomdpModel>,
}

impl ConjectureSpace {
    pub fn new(parameters: Vec<Vec<f64>>, models: Vec<PomdpModel>) -> Result<Self> {
        if parameters.is_empty() {
            return arg_err("conjecture space must be non-empty");
        }
        if parameters.len() != models.len() {
            return arg_err("one model is required per parameter vector");
        }
        let first = &models[0];
        if models.iter().any(|m| !m.same_shape(first) || m.discount() != first.discount()) {
            return arg_err("conjectured models must share dimensions and discount");
        }
        Ok(Self { parameters, models })
    }

    /// Conjectures over the attack probability of a networked system.
    pub fn netsys(config: &NetSysConfig, attack_probabilities: &[f64]) -> Result<Self> {
        let models = attack_probabilities
            .iter()
            .map(|&p| build_model(config, Some(p)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(attack_probabilities.iter().map(|&p| vec![p]).collect(), models)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn parameters(&self) -> &[Vec<f64>] {
        &self.parameters
    }

    pub fn model(&self, idx: usize) -> &PomdpModel {
        &self.models[idx]
    }

    pub fn models(&self) -> &[PomdpModel] {
        &self.models
    }

    fn check_index(&self, idx: usize) -> Result<()> {
        if idx >= self.len() {
            return arg_err(format!("conjecture index {idx} out of range"));
        }
        Ok(())
    }
}

/// Probability vector over the conjecture space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    weights: Vec<f64>,
}

impl Posterior {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Ok(Self { weights: Belief::new(weights)?.into_inner() })
    }

    pub fn uniform(k: usize) -> Self {
        Self { weights: vec![1.0 / k as f64; k] }
    }

    pub fn point(k: usize, idx: usize) -> Self {
        Self { weights: Belief::point(k, idx).into_inner() }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }
}

/// Bayes update of `rho` on observation `o`, given the previous belief and
/// action. Computed in log space.
pub fn posterior_update(
    space: &ConjectureSpace,
    rho: &Posterior,
    b_prev: &Belief,
    a_prev: usize,
    o: usize,
) -> Result<Posterior> {
    let likelihoods = space
        .models
        .iter()
        .map(|m| m.observation_likelihood(b_prev, a_prev, o))
        .collect::<Result<Vec<_>>>()?;
    posterior_from_likelihoods(rho, &likelihoods, o)
}

/// Like [`posterior_update`], with each likelihood estimated from `samples`
/// simulated transitions instead of the exact marginal.
pub fn posterior_update_monte_carlo<R: Rng + ?Sized>(
    space: &ConjectureSpace,
    rho: &Posterior,
    b_prev: &Belief,
    a_prev: usize,
    o: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Posterior> {
    let likelihoods = space
        .models
        .iter()
        .map(|m| monte_carlo_likelihood(m, b_prev, a_prev, o, samples, rng))
        .collect::<Result<Vec<_>>>()?;
    posterior_from_likelihoods(rho, &likelihoods, o)
}

/// Estimates `P(o | b, a)` by sampling `s ~ b`, `s' ~ p_{s·}(a)` and
/// averaging `z(o | s')`.
pub fn monte_carlo_likelihood<R: Rng + ?Sized>(
    model: &PomdpModel,
    b: &Belief,
    a: usize,
    o: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    model.check_belief(b)?;
    model.check_action(a)?;
    model.check_observation(o)?;
    if samples == 0 {
        return arg_err("sample count must be positive");
    }
    let total: f64 = (0..samples)
        .map(|_| {
            let s = sample_categorical(b.as_slice(), rng);
            model.observation(model.sample_next_state(s, a, rng), o)
        })
        .sum();
    Ok(total / samples as f64)
}

fn posterior_from_likelihoods(rho: &Posterior, likelihoods: &[f64], o: usize) -> Result<Posterior> {
    if rho.len() != likelihoods.len() {
        return arg_err("posterior length does not match conjecture space");
    }
    let logs: Vec<f64> =
        rho.weights.iter().zip(likelihoods).map(|(w, l)| w.ln() + l.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MobalError::DegenerateEvidence { observation: o });
    }
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(Posterior { weights: unnorm.into_iter().map(|w| w / total).collect() })
}

/// Categorical draw from the posterior.
pub fn sample_conjecture<R: Rng + ?Sized>(rho: &Posterior, rng: &mut R) -> usize {
    sample_categorical(&rho.weights, rng)
}

/// Visited beliefs and executed actions, each with uniform empirical weight.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHistory {
    pub beliefs: Vec<Belief>,
    pub actions: Vec<usize>,
}

impl EmpiricalHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_belief(&mut self, b: Belief) {
        self.beliefs.push(b);
    }

    pub fn push_action(&mut self, a: usize) {
        self.actions.push(a);
    }

    /// Empirical action frequencies over `n_actions` actions.
    pub fn action_frequencies(&self, n_actions: usize) -> Result<Vec<f64>> {
        if self.actions.is_empty() {
            return arg_err("history has no actions");
        }
        let mut freq = vec![0.0; n_actions];
        for &a in &self.actions {
            if a >= n_actions {
                return arg_err(format!("action {a} out of range"));
            }
            freq[a] += 1.0;
        }
        let n = self.actions.len() as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        Ok(freq)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.beliefs.is_empty() || self.actions.is_empty() {
            return arg_err("history must contain at least one belief and one action");
        }
        Ok(())
    }
}

/// `P(o | model, b) = Σ_a f(a) P(o | model, b, a)` for every `o`.
fn marginal_observation_distribution(
    model: &PomdpModel,
    b: &Belief,
    action_freq: &[f64],
) -> Result<Vec<f64>> {
    model.check_belief(b)?;
    let mut dist = vec![0.0; model.n_observations()];
    let mut pred = vec![0.0; model.n_states()];
    for (a, &f) in action_freq.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        model.predict_into(b.as_slice(), a, &mut pred);
        let part = model.observation_distribution_from_prediction(&pred);
        dist.iter_mut().zip(part).for_each(|(d, p)| *d += f * p);
    }
    Ok(dist)
}

/// `Σ_o p(o) ln(p(o)/q(o))` with `0 ln 0 = 0` and `p ln(p/0) = +∞`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi <= 0.0 {
                0.0
            } else if qi <= 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// Discrepancy of conjecture `idx` relative to the true model over the
/// visited beliefs. May be `+∞`.
pub fn discrepancy(
    space: &ConjectureSpace,
    idx: usize,
    true_model: &PomdpModel,
    hist: &EmpiricalHistory,
) -> Result<f64> {
    Ok(discrepancies_for(space, &[idx], true_model, hist)?[0])
}

/// Discrepancies of every conjecture, in index order.
pub fn discrepancies(
    space: &ConjectureSpace,
    true_model: &PomdpModel,
    hist: &EmpiricalHistory,
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..space.len()).collect();
    discrepancies_for(space, &all, true_model, hist)
}

fn discrepancies_for(
    space: &ConjectureSpace,
    indices: &[usize],
    true_model: &PomdpModel,
    hist: &EmpiricalHistory,
) -> Result<Vec<f64>> {
    hist.check_nonempty()?;
    for &idx in indices {
        space.check_index(idx)?;
    }
    if !true_model.same_shape(space.model(0)) {
        return arg_err("true model and conjectures have different dimensions");
    }
    let freq = hist.action_frequencies(true_model.n_actions())?;
    let mut sums = vec![0.0; indices.len()];
    for b in &hist.beliefs {
        let p_true = marginal_observation_distribution(true_model, b, &freq)?;
        for (sum, &idx) in sums.iter_mut().zip(indices) {
            let p_conj = marginal_observation_distribution(space.model(idx), b, &freq)?;
            *sum += kl_divergence(&p_true, &p_conj);
        }
    }
    let n = hist.beliefs.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Indices whose discrepancy is within `tol` of the minimum.
pub fn consistent_set(
    space: &ConjectureSpace,
    true_model: &PomdpModel,
    hist: &EmpiricalHistory,
    tol: f64,
) -> Result<Vec<usize>> {
    let ks = discrepancies(space, true_model, hist)?;
    Ok(consistent_from_discrepancies(&ks, tol))
}

pub fn consistent_from_discrepancies(ks: &[f64], tol: f64) -> Vec<usize> {
    let min = ks.iter().copied().fold(f64::INFINITY, f64::min);
    ks.iter()
        .enumerate()
        .filter(|(_, &k)| k == min || k - min <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// `Σ_i (K_i − min K) ρ_i`; terms with zero posterior weight contribute 0.
pub fn posterior_gap(
    space: &ConjectureSpace,
    true_model: &PomdpModel,
    hist: &EmpiricalHistory,
    rho: &Posterior,
) -> Result<f64> {
    let ks = discrepancies(space, true_model, hist)?;
    gap_from_discrepancies(&ks, rho)
}

pub fn gap_from_discrepancies(ks: &[f64], rho: &Posterior) -> Result<f64> {
    if ks.len() != rho.len() {
        return arg_err("discrepancy and posterior lengths differ");
    }
    let min = ks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ks
        .iter()
        .zip(rho.weights())
        .map(|(&k, &w)| if w == 0.0 || k == min { 0.0 } else { (k - min) * w })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn section5_space() -> (ConjectureSpace, PomdpModel) {
        let cfg = NetSysConfig::path(1, 0.2);
        (ConjectureSpace::netsys(&cfg, &[0.0, 0.5, 1.0]).unwrap(), build_model(&cfg, None).unwrap())
    }

    #[test]
    fn flat_likelihood_leaves_posterior_unchanged() {
        let cfg = NetSysConfig::path(1, 0.2);
        let m = build_model(&cfg, None).unwrap();
        let space = ConjectureSpace::new(vec![vec![0.0], vec![1.0]], vec![m.clone(), m]).unwrap();
        let rho = Posterior::new(vec![0.3, 0.7]).unwrap();
        let next = posterior_update(&space, &rho, &Belief::uniform(2), 0, 4).unwrap();
        assert_abs_diff_eq!(next.weights()[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn zero_likelihood_zeroes_weight() {
        let a = PomdpModel::new(
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0]; 2],
            0.9,
        )
        .unwrap();
        let b = PomdpModel::new(
            vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0]; 2],
            0.9,
        )
        .unwrap();
        let space = ConjectureSpace::new(vec![vec![0.0], vec![1.0]], vec![a, b]).unwrap();
        let next = posterior_update(&space, &Posterior::uniform(2), &Belief::point(2, 0), 0, 0)
            .unwrap();
        assert_eq!(next.weights(), &[1.0, 0.0]);
        // the remaining conjecture cannot explain observation 1 either
        let err = posterior_update(&space, &next, &Belief::point(2, 0), 0, 1).unwrap_err();
        assert!(matches!(err, MobalError::DegenerateEvidence { observation: 1 }));
    }

    #[test]
    fn three_conjecture_update_matches_hand_bayes() {
        let (space, _) = section5_space();
        let b0 = Belief::point(2, 0);
        let o = 5;
        let z_safe = crate::netsys::betabin_pmf(7, 0.7, 3.0, o as u32).unwrap();
        let z_comp = crate::netsys::betabin_pmf(7, 1.0, 0.7, o as u32).unwrap();
        let lik = [z_safe, 0.5 * z_safe + 0.5 * z_comp, z_comp];
        let total: f64 = lik.iter().sum();
        let next = posterior_update(&space, &Posterior::uniform(3), &b0, 0, o).unwrap();
        for (w, l) in next.weights().iter().zip(lik) {
            assert_abs_diff_eq!(*w, l / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn long_update_sequences_stay_normalized() {
        let (space, truth) = section5_space();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rho = Posterior::uniform(3);
        let b = Belief::new(vec![0.6, 0.4]).unwrap();
        for _ in 0..10_000 {
            let o = truth.sample_observation(1, &mut rng);
            rho = posterior_update(&space, &rho, &b, 0, o).unwrap();
            let total: f64 = rho.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert!(rho.weights()[2] > 0.99);
    }

    #[test]
    fn sampling_frequencies_match_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = Posterior::uniform(3);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[sample_conjecture(&rho, &mut rng)] += 1;
        }
        for c in counts {
            assert_abs_diff_eq!(c as f64 / 1e5, 1.0 / 3.0, epsilon = 0.01);
        }
        let point = Posterior::point(3, 2);
        assert!((0..100).all(|_| sample_conjecture(&point, &mut rng) == 2));
        let draw = |seed| sample_conjecture(&rho, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn monte_carlo_likelihood_approaches_exact() {
        let (space, _) = section5_space();
        let b = Belief::new(vec![0.7, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = space.model(1);
        let exact = m.observation_likelihood(&b, 0, 6).unwrap();
        let est = monte_carlo_likelihood(m, &b, 0, 6, 200_000, &mut rng).unwrap();
        assert_abs_diff_eq!(exact, est, epsilon = 2e-3);
        let mc = posterior_update_monte_carlo(&space, &Posterior::uniform(3), &b, 0, 6, 50_000, &mut rng)
            .unwrap();
        let ex = posterior_update(&space, &Posterior::uniform(3), &b, 0, 6).unwrap();
        for (x, y) in mc.weights().iter().zip(ex.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 0.02);
        }
    }

    #[test]
    fn discrepancy_matches_enumerated_kl() {
        let (space, truth) = section5_space();
        let hist = EmpiricalHistory { beliefs: vec![Belief::point(2, 0)], actions: vec![0] };
        let mut expected = 0.0;
        for k in 0..8u32 {
            let zs = crate::netsys::betabin_pmf(7, 0.7, 3.0, k).unwrap();
            let zc = crate::netsys::betabin_pmf(7, 1.0, 0.7, k).unwrap();
            let p = 0.8 * zs + 0.2 * zc;
            let q = 0.5 * zs + 0.5 * zc;
            expected += p * (p / q).ln();
        }
        assert_abs_diff_eq!(discrepancy(&space, 1, &truth, &hist).unwrap(), expected, epsilon = 1e-12);
        let same = ConjectureSpace::new(vec![vec![0.2]], vec![truth.clone()]).unwrap();
        assert_eq!(discrepancy(&same, 0, &truth, &hist).unwrap(), 0.0);
        for idx in 0..3 {
            assert!(discrepancy(&space, idx, &truth, &hist).unwrap() >= 0.0);
        }
    }

    #[test]
    fn infinite_discrepancy_sentinel() {
        let p = [0.5, 0.5];
        let q = [1.0, 0.0];
        assert_eq!(kl_divergence(&p, &q), f64::INFINITY);
        assert_eq!(kl_divergence(&q, &p), 2f64.ln());
        assert_eq!(consistent_from_discrepancies(&[f64::INFINITY, 0.3, 0.3], 0.0), vec![1, 2]);
    }

    #[test]
    fn consistent_set_and_gap() {
        let (space, truth) = section5_space();
        let mut with_truth_params = space.parameters().to_vec();
        with_truth_params.push(vec![0.2]);
        let mut models = space.models().to_vec();
        models.push(truth.clone());
        let extended = ConjectureSpace::new(with_truth_params, models).unwrap();
        let hist = EmpiricalHistory {
            beliefs: vec![Belief::point(2, 0), Belief::new(vec![0.4, 0.6]).unwrap()],
            actions: vec![0, 1],
        };
        let set = consistent_set(&extended, &truth, &hist, 1e-12).unwrap();
        assert!(set.contains(&3));
        assert_eq!(consistent_set(&extended, &truth, &hist, f64::INFINITY).unwrap(), vec![0, 1, 2, 3]);

        let rho = Posterior::uniform(3);
        assert_abs_diff_eq!(gap_from_discrepancies(&[0.0, 1.0, 2.0], &rho).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(gap_from_discrepancies(&[0.0, 1.0, 2.0], &Posterior::point(3, 0)).unwrap(), 0.0);
        assert!(posterior_gap(&space, &truth, &hist, &rho).unwrap() >= 0.0);
    }

    #[test]
    fn empty_history_is_rejected() {
        let (space, truth) = section5_space();
        assert!(discrepancy(&space, 0, &truth, &EmpiricalHistory::new()).is_err());
    }
}
