//! Bootstrap particle filter and belief-error metric.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::pomdp::{sample_categorical, Belief, PomdpModel};

/// Default particle count.
pub const DEFAULT_PARTICLES: usize = 50;

/// A set of state particles. `degenerate_steps` counts filter steps in which
/// every propagated particle had zero observation weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleSet {
    particles: Vec<usize>,
    pub degenerate_steps: u64,
}

impl ParticleSet {
    pub fn new(particles: Vec<usize>, n_states: usize) -> Result<Self> {
        if particles.is_empty() {
            return arg_err("particle set must be non-empty");
        }
        if let Some(bad) = particles.iter().find(|&&s| s >= n_states) {
            return arg_err(format!("particle state {bad} out of range"));
        }
        Ok(Self { particles, degenerate_steps: 0 })
    }

    /// Draws `m` particles i.i.d. from `b`.
    pub fn from_belief<R: Rng + ?Sized>(b: &Belief, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return arg_err("particle count must be positive");
        }
        let particles = (0..m).map(|_| sample_categorical(b.as_slice(), rng)).collect();
        Ok(Self { particles, degenerate_steps: 0 })
    }

    pub fn m(&self) -> usize {
        self.particles.len()
    }

    pub fn particles(&self) -> &[usize] {
        &self.particles
    }
}

/// Empirical state frequencies of the particles.
pub fn particle_belief(ps: &ParticleSet, n_states: usize) -> Belief {
    let mut counts = vec![0.0; n_states];
    for &s in &ps.particles {
        counts[s] += 1.0;
    }
    let m = ps.m() as f64;
    counts.iter_mut().for_each(|c| *c /= m);
    Belief::from_vec_unchecked(counts)
}

/// One bootstrap step: propagate every particle through `p(·|ŝ,a)`, weight
/// by `z(o|·)`, and resample with systematic resampling. When all weights
/// vanish the propagated particles are kept unweighted and
/// `degenerate_steps` is incremented.
pub fn particle_filter_step<R: Rng + ?Sized>(
    model: &PomdpModel,
    ps: &ParticleSet,
    a: usize,
    o: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    model.check_action(a)?;
    model.check_observation(o)?;
    let propagated: Vec<usize> =
        ps.particles.iter().map(|&s| model.sample_next_state(s, a, rng)).collect();
    let weights: Vec<f64> = propagated.iter().map(|&s| model.observation(s, o)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok(ParticleSet {
            particles: propagated,
            degenerate_steps: ps.degenerate_steps + 1,
        });
    }
    let particles = systematic_resample(&propagated, &weights, total, ps.m(), rng);
    Ok(ParticleSet { particles, degenerate_steps: ps.degenerate_steps })
}

fn systematic_resample<R: Rng + ?Sized>(
    items: &[usize],
    weights: &[f64],
    total: f64,
    m: usize,
    rng: &mut R,
) -> Vec<usize> {
    let step = 1.0 / m as f64;
    let start: f64 = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(m);
    let mut idx = 0;
    let mut cumulative = weights[0] / total;
    for j in 0..m {
        let u = start + j as f64 * step;
        while u >= cumulative && idx + 1 < items.len() {
            idx += 1;
            cumulative += weights[idx] / total;
        }
        out.push(items[idx]);
    }
    out
}

/// Euclidean distance between two beliefs.
pub fn filter_error(b_exact: &Belief, b_hat: &Belief) -> Result<f64> {
    if b_exact.len() != b_hat.len() {
        return arg_err("beliefs have different lengths");
    }
    Ok(b_exact
        .as_slice()
        .iter()
        .zip(b_hat.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsys::{build_model, NetSysConfig};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn particle_belief_examples() {
        let all_zero = ParticleSet::new(vec![0; 5], 2).unwrap();
        assert_eq!(particle_belief(&all_zero, 2).as_slice(), &[1.0, 0.0]);
        let mixed = ParticleSet::new(vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(particle_belief(&mixed, 2).as_slice(), &[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let random = ParticleSet::from_belief(&Belief::uniform(4), 50, &mut rng).unwrap();
        let total: f64 = particle_belief(&random, 4).as_slice().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(ParticleSet::new(vec![], 2).is_err());
        assert!(ParticleSet::new(vec![2], 2).is_err());
    }

    #[test]
    fn filter_error_examples() {
        let a = Belief::point(2, 0);
        let b = Belief::point(2, 1);
        let h = Belief::uniform(2);
        assert_eq!(filter_error(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(filter_error(&a, &b).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(filter_error(&h, &a).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(filter_error(&a, &Belief::uniform(3)).is_err());
    }

    #[test]
    fn informative_model_tracks_true_state() {
        // cycle 0 -> 1 -> 2 -> 0 with perfectly informative observations
        let t = vec![vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]];
        let z = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let m = PomdpModel::new(t, z, vec![vec![0.0]; 3], 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = ParticleSet::from_belief(&Belief::uniform(3), 20, &mut rng).unwrap();
        let next = particle_filter_step(&m, &ps, 0, 2, &mut rng).unwrap();
        assert!(next.particles().iter().all(|&s| s == 2));
        assert_eq!(next.m(), 20);
    }

    #[test]
    fn zero_weight_falls_back_to_prediction() {
        let t = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = PomdpModel::new(t, z, vec![vec![0.0]; 2], 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ps = ParticleSet::new(vec![0; 8], 2).unwrap();
        let next = particle_filter_step(&m, &ps, 0, 1, &mut rng).unwrap();
        assert_eq!(next.degenerate_steps, 1);
        assert_eq!(next.particles(), ps.particles());
    }

    #[test]
    fn large_particle_count_matches_exact_filter() {
        let m = build_model(&NetSysConfig::path(1, 0.2), None).unwrap();
        let b0 = Belief::point(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ps = ParticleSet::from_belief(&b0, 100_000, &mut rng).unwrap();
        for o in [0, 3, 7] {
            let exact = m.belief_update(&b0, 0, o).unwrap();
            let next = particle_filter_step(&m, &ps, 0, o, &mut rng).unwrap();
            let approx = particle_belief(&next, 2);
            let l1: f64 =
                exact.as_slice().iter().zip(approx.as_slice()).map(|(x, y)| (x - y).abs()).sum();
            assert!(l1 < 0.01, "o={o}: L1 {l1}");
        }
    }

    #[test]
    fn same_seed_same_resample() {
        let m = build_model(&NetSysConfig::path(2, 0.2), None).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ps = ParticleSet::from_belief(&Belief::uniform(4), 50, &mut rng).unwrap();
            particle_filter_step(&m, &ps, 1, 9, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }
}
