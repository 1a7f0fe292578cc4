//! Networked-system intrusion response environment.
//!
//! `N` components, each safe (0) or compromised (1). A safe, unblocked
//! component is compromised with probability `min(p_A (1 + k), 1)` where `k`
//! is its number of compromised neighbors. Blocking a compromised component
//! recovers it; blocking a safe component shields it for that step. Each
//! component emits a Beta-binomial alert count whose parameters depend on
//! its post-transition state.
//!
//! Joint states and actions are encoded as bit masks (bit `l` is component
//! `l`), joint observations in base `max_alerts + 1` with component 0 as the
//! least significant digit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MobalError, Result};
use crate::pomdp::PomdpModel;

/// Largest component count accepted by [`build_model`].
pub const MAX_COMPONENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBinomial {
    pub trials: u32,
    pub alpha: f64,
    pub beta: f64,
}

impl BetaBinomial {
    pub fn pmf(&self, k: u32) -> Result<f64> {
        betabin_pmf(self.trials, self.alpha, self.beta, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSysConfig {
    pub n_components: usize,
    /// Symmetric 0/1 matrix with zero diagonal.
    #[serde(with = "adjacency_serde")]
    pub adjacency: Vec<Vec<bool>>,
    pub p_attack: f64,
    pub max_alerts: u32,
    pub betabin_compromised: BetaBinomial,
    pub betabin_safe: BetaBinomial,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    0.99
}

mod adjacency_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(adj: &[Vec<bool>], ser: S) -> Result<S::Ok, S::Error> {
        let ints: Vec<Vec<u8>> =
            adj.iter().map(|row| row.iter().map(|&b| u8::from(b)).collect()).collect();
        serde::Serialize::serialize(&ints, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<Vec<bool>>, D::Error> {
        let ints: Vec<Vec<u8>> = Vec::deserialize(de)?;
        Ok(ints.into_iter().map(|row| row.into_iter().map(|v| v != 0).collect()).collect())
    }
}

impl NetSysConfig {
    /// Components on a path `0 - 1 - ... - (N-1)` with the default alert
    /// model and attack probability.
    pub fn path(n_components: usize, p_attack: f64) -> Self {
        let adjacency = (0..n_components)
            .map(|i| (0..n_components).map(|j| i.abs_diff(j) == 1).collect())
            .collect();
        Self {
            n_components,
            adjacency,
            p_attack,
            max_alerts: 7,
            betabin_compromised: BetaBinomial { trials: 7, alpha: 1.0, beta: 0.7 },
            betabin_safe: BetaBinomial { trials: 7, alpha: 0.7, beta: 3.0 },
            discount: default_discount(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_components;
        if n == 0 {
            return arg_err("n_components must be positive");
        }
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return arg_err(format!("adjacency must be {n}x{n}"));
        }
        for i in 0..n {
            if self.adjacency[i][i] {
                return arg_err("adjacency must have a zero diagonal");
            }
            for j in 0..n {
                if self.adjacency[i][j] != self.adjacency[j][i] {
                    return arg_err("adjacency must be symmetric");
                }
            }
        }
        validate_attack_probability(self.p_attack, false)?;
        for bb in [&self.betabin_compromised, &self.betabin_safe] {
            if bb.trials > self.max_alerts {
                return arg_err("Beta-binomial trials exceed max_alerts");
            }
            if !(bb.alpha > 0.0 && bb.beta > 0.0) {
                return arg_err("Beta-binomial shape parameters must be positive");
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return arg_err("discount must lie in (0,1)");
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        1 << self.n_components
    }

    pub fn n_actions(&self) -> usize {
        1 << self.n_components
    }

    pub fn n_observations(&self) -> usize {
        (self.max_alerts as usize + 1).pow(self.n_components as u32)
    }

    /// Number of compromised neighbors of component `l` in joint state `s`.
    pub fn compromised_neighbors(&self, s: usize, l: usize) -> usize {
        (0..self.n_components).filter(|&j| self.adjacency[l][j] && bit(s, j)).count()
    }

    /// Per-component alert counts of a joint observation index.
    pub fn decode_observation(&self, o: usize) -> Vec<u32> {
        let base = self.max_alerts as usize + 1;
        (0..self.n_components).map(|l| ((o / base.pow(l as u32)) % base) as u32).collect()
    }

    pub fn encode_observation(&self, alerts: &[u32]) -> usize {
        let base = self.max_alerts as usize + 1;
        alerts.iter().rev().fold(0, |acc, &k| acc * base + k as usize)
    }
}

fn validate_attack_probability(p: f64, allow_zero: bool) -> Result<()> {
    let lower_ok = if allow_zero { p >= 0.0 } else { p > 0.0 };
    if !(lower_ok && p <= 1.0) {
        return arg_err(format!("attack probability {p} out of range"));
    }
    Ok(())
}

fn bit(x: usize, l: usize) -> bool {
    (x >> l) & 1 == 1
}

/// Component bits of a joint index.
pub fn decode_bits(x: usize, n_components: usize) -> Vec<u8> {
    (0..n_components).map(|l| u8::from(bit(x, l))).collect()
}

pub fn encode_bits(bits: &[u8]) -> usize {
    bits.iter().enumerate().map(|(l, &b)| usize::from(b != 0) << l).sum()
}

/// Beta-binomial pmf `C(n,k) B(k+α, n−k+β) / B(α,β)`, evaluated with the
/// rising-factorial form which is exact up to rounding for integer `n`.
pub fn betabin_pmf(trials: u32, alpha: f64, beta: f64, k: u32) -> Result<f64> {
    if k > trials {
        return arg_err(format!("k={k} exceeds trials={trials}"));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return arg_err("shape parameters must be positive");
    }
    let mut value = 1.0;
    // C(n,k) * (α)_k (β)_{n-k} / (α+β)_n
    for i in 0..k {
        value *= (alpha + i as f64) * (trials - i) as f64 / (i + 1) as f64;
    }
    for j in 0..trials - k {
        value *= beta + j as f64;
    }
    for m in 0..trials {
        value /= alpha + beta + m as f64;
    }
    Ok(value)
}

/// Probability that safe component `l` becomes compromised this step,
/// `min(p_A (1 + N_l(s)), 1)`.
pub fn compromise_prob(config: &NetSysConfig, s: usize, l: usize) -> Result<f64> {
    compromise_prob_with(config, config.p_attack, s, l)
}

fn compromise_prob_with(config: &NetSysConfig, p_attack: f64, s: usize, l: usize) -> Result<f64> {
    if l >= config.n_components {
        return arg_err(format!("component {l} out of range"));
    }
    if bit(s, l) {
        return arg_err(format!("component {l} is already compromised in state {s}"));
    }
    let k = config.compromised_neighbors(s, l) as f64;
    Ok((p_attack * (1.0 + k)).min(1.0))
}

/// Stage cost `Σ_l 2 s^l (1 − a^l) + a^l`.
pub fn stage_cost(s: &[u8], a: &[u8]) -> f64 {
    s.iter()
        .zip(a)
        .map(|(&sl, &al)| {
            let (sl, al) = (f64::from(sl), f64::from(al));
            2.0 * sl * (1.0 - al) + al
        })
        .sum()
}

/// Builds the joint POMDP. `p_override` replaces `p_attack`, which is how
/// conjectured models are constructed; it may be zero.
pub fn build_model(config: &NetSysConfig, p_override: Option<f64>) -> Result<PomdpModel> {
    config.validate()?;
    let n_comp = config.n_components;
    if n_comp > MAX_COMPONENTS {
        return Err(MobalError::Capacity(format!(
            "{n_comp} components exceed the limit of {MAX_COMPONENTS}"
        )));
    }
    let p_attack = p_override.unwrap_or(config.p_attack);
    validate_attack_probability(p_attack, true)?;

    let (n, n_obs) = (config.n_states(), config.n_observations());
    let mut transition = vec![0.0; n * n * n];
    for a in 0..n {
        for s in 0..n {
            // per-component probability of being compromised after the step
            let mut p_comp = vec![0.0; n_comp];
            for (l, p) in p_comp.iter_mut().enumerate() {
                *p = match (bit(s, l), bit(a, l)) {
                    (true, true) => 0.0,
                    (true, false) => 1.0,
                    (false, true) => 0.0,
                    (false, false) => compromise_prob_with(config, p_attack, s, l)?,
                };
            }
            let row = &mut transition[(a * n + s) * n..(a * n + s + 1) * n];
            for (next, t) in row.iter_mut().enumerate() {
                *t = (0..n_comp)
                    .map(|l| if bit(next, l) { p_comp[l] } else { 1.0 - p_comp[l] })
                    .product();
            }
        }
    }

    let base = config.max_alerts as usize + 1;
    let pmf_table = |bb: &BetaBinomial| -> Result<Vec<f64>> {
        (0..base as u32)
            .map(|k| if k <= bb.trials { bb.pmf(k) } else { Ok(0.0) })
            .collect()
    };
    let pmf_safe = pmf_table(&config.betabin_safe)?;
    let pmf_comp = pmf_table(&config.betabin_compromised)?;
    let mut observation = vec![0.0; n * n_obs];
    for next in 0..n {
        for o in 0..n_obs {
            let mut p = 1.0;
            let mut rest = o;
            for l in 0..n_comp {
                let k = rest % base;
                rest /= base;
                p *= if bit(next, l) { pmf_comp[k] } else { pmf_safe[k] };
            }
            observation[next * n_obs + o] = p;
        }
    }

    let mut cost = vec![0.0; n * n];
    for s in 0..n {
        let sb = decode_bits(s, n_comp);
        for a in 0..n {
            cost[s * n + a] = stage_cost(&sb, &decode_bits(a, n_comp));
        }
    }
    PomdpModel::from_flat(n, n, n_obs, transition, observation, cost, config.discount)
}

/// One simulated step: `s' ~ p_{s·}(a)`, `o ~ z(·|s')`; returns
/// `(s', o, c(s,a))`.
pub fn sample_step<R: Rng + ?Sized>(
    model: &PomdpModel,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(usize, usize, f64)> {
    model.check_action(a)?;
    if s >= model.n_states() {
        return arg_err(format!("state {s} out of range"));
    }
    let next = model.sample_next_state(s, a, rng);
    let o = model.sample_observation(next, rng);
    Ok((next, o, model.cost(s, a)))
}
