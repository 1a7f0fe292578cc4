use std::sync::Arc;

use mobal::bounds::{reference_cost_function, sup_grid_error, two_state_grid, ANALYSIS_VI_THRESHOLD};
use mobal::conjecture::{
    discrepancies, gap_from_discrepancies, posterior_update, ConjectureSpace, Posterior,
};
use mobal::experiments::{median, posterior_eval, PosteriorEvalSpec};
use mobal::filter::{filter_error, particle_belief, particle_filter_step, ParticleSet};
use mobal::netsys::{build_model, sample_step, NetSysConfig};
use mobal::online::{run_episode_with_cache, LoopConfig, PlanCache};
use mobal::quantize::{bellman_residual, enumerate_lattice, KernelMode, QuantizedPlan};
use mobal::{Belief, PomdpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(p: f64) -> PomdpModel {
    build_model(&NetSysConfig::path(1, p), None).unwrap()
}

#[test]
fn more_particles_track_the_exact_belief_better() {
    let m = single(0.2);
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = 0;
        let mut b = Belief::point(2, 0);
        let mut p4 = ParticleSet::from_belief(&b, 4, &mut rng).unwrap();
        let mut p64 = ParticleSet::from_belief(&b, 64, &mut rng).unwrap();
        for _ in 0..50 {
            let a = usize::from(b[1] > 0.5);
            let (next, o, _) = sample_step(&m, s, a, &mut rng).unwrap();
            s = next;
            b = m.belief_update(&b, a, o).unwrap();
            p4 = particle_filter_step(&m, &p4, a, o, &mut rng).unwrap();
            p64 = particle_filter_step(&m, &p64, a, o, &mut rng).unwrap();
            small += filter_error(&b, &particle_belief(&p4, 2)).unwrap();
            large += filter_error(&b, &particle_belief(&p64, 2)).unwrap();
            assert_eq!(p4.m(), 4);
            assert!(p64.particles().iter().all(|&x| x < 2));
        }
    }
    assert!(large < small, "M=64 {large} vs M=4 {small}");
}

#[test]
fn posterior_survives_ten_thousand_updates() {
    let net = NetSysConfig::path(1, 0.2);
    let space = ConjectureSpace::netsys(&net, &[0.0, 0.5, 1.0]).unwrap();
    let env = single(0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rho = Posterior::uniform(3);
    let (mut s, mut b) = (0, Belief::point(2, 0));
    for _ in 0..10_000 {
        let a = usize::from(rng.gen_bool(0.3));
        let (next, o, _) = sample_step(&env, s, a, &mut rng).unwrap();
        s = next;
        rho = posterior_update(&space, &rho, &b, a, o).unwrap();
        b = space.model(1).belief_update(&b, a, o).unwrap();
        let total: f64 = rho.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(rho.weights().iter().all(|w| w.is_finite() && *w >= 0.0));
    }
}

/// Over 20 seeds of the reference scenario the posterior gap shrinks, the
/// posterior settles on the minimum-discrepancy conjecture, entropy falls,
/// and the known true model has zero discrepancy.
#[test]
fn posterior_concentrates_on_consistent_conjectures() {
    let spec = PosteriorEvalSpec::default();
    let rows = posterior_eval(&spec).unwrap();
    let first: Vec<_> = rows.iter().filter(|r| r.t == 1).collect();
    let last: Vec<_> = rows.iter().filter(|r| r.t == spec.steps).collect();
    assert_eq!(last.len(), 20);

    let ratios: Vec<f64> = last.iter().zip(&first).map(|(l, f)| l.gap / f.gap).collect();
    assert!(median(&ratios) < 0.1, "median gap ratio {}", median(&ratios));
    let early: Vec<f64> = rows.iter().filter(|r| r.t == 5).map(|r| r.gap).collect();
    let late: Vec<f64> = last.iter().map(|r| r.gap).collect();
    assert!(median(&late) < median(&early));

    let entropy = |w: &[f64]| Posterior::new(w.to_vec()).unwrap().entropy();
    let h1: f64 = first.iter().map(|r| entropy(&r.posterior)).sum::<f64>() / 20.0;
    let h100: f64 = last.iter().map(|r| entropy(&r.posterior)).sum::<f64>() / 20.0;
    assert!(h100 < h1, "entropy {h1} -> {h100}");

    let mut settled = 0;
    for r in &last {
        assert_eq!(r.discrepancy_true, 0.0);
        assert!(r.discrepancy.iter().all(|k| *k >= 0.0));
        let argmin = (0..3).min_by(|&i, &j| r.discrepancy[i].total_cmp(&r.discrepancy[j])).unwrap();
        if r.posterior[argmin] > 0.9 {
            settled += 1;
        }
        let gap = gap_from_discrepancies(&r.discrepancy, &Posterior::new(r.posterior.clone()).unwrap())
            .unwrap();
        assert!((gap - r.gap).abs() < 1e-12);
    }
    assert!(settled >= 11, "settled in {settled}/20 seeds");
    let k1_above_k0 = last.iter().filter(|r| r.discrepancy[2] > r.discrepancy[0]).count();
    assert!(k1_above_k0 > 10);
}

#[test]
fn discrepancy_vanishes_for_matching_kernels() {
    let net = NetSysConfig::path(1, 0.2);
    let env = single(0.2);
    let space = ConjectureSpace::netsys(&net, &[0.2, 0.6]).unwrap();
    let mut history = mobal::conjecture::EmpiricalHistory::new();
    history.push_belief(Belief::new(vec![0.4, 0.6]).unwrap());
    history.push_action(0);
    let ks = discrepancies(&space, &env, &history).unwrap();
    assert_eq!(ks[0], 0.0);
    assert!(ks[1] > 0.0);
}

#[test]
fn knowing_the_true_model_is_no_worse_on_average() {
    let net = NetSysConfig::path(1, 0.2);
    let env = single(0.2);
    let run = |space: ConjectureSpace| {
        let cfg = LoopConfig::new(space, 5);
        let cache = PlanCache::warm(&cfg).unwrap();
        (0..100u64)
            .map(|seed| {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                run_episode_with_cache(&env, &cfg, cache.clone()).unwrap().discounted_return
            })
            .sum::<f64>()
            / 100.0
    };
    let informed = run(ConjectureSpace::netsys(&net, &[0.2]).unwrap());
    let misspecified = run(ConjectureSpace::netsys(&net, &[0.0, 0.5, 1.0]).unwrap());
    assert!(informed <= misspecified, "{informed} vs {misspecified}");
}

#[test]
fn value_iteration_residual_within_threshold() {
    let m = build_model(&NetSysConfig::path(2, 0.2), None).unwrap();
    for threshold in [0.1, 1e-3] {
        let plan = QuantizedPlan::solve(&m, 4, KernelMode::Exact, threshold).unwrap();
        let residual = bellman_residual(&plan.mdp, &plan.solution.values);
        assert!(residual <= threshold, "{residual} > {threshold}");
    }
}

#[test]
fn finer_lattices_approach_the_reference() {
    let m = single(0.5);
    let reference = reference_cost_function(&m, 200).unwrap();
    let grid = two_state_grid(100);
    let mean_error = |r: usize| {
        let plan = QuantizedPlan::solve(&m, r, KernelMode::Exact, ANALYSIS_VI_THRESHOLD).unwrap();
        grid.iter().map(|b| (plan.cost(b).unwrap() - reference.cost(b).unwrap()).abs()).sum::<f64>()
            / grid.len() as f64
    };
    let (coarse, fine) = (mean_error(4), mean_error(40));
    assert!(fine * 5.0 <= coarse, "r=4 {coarse} vs r=40 {fine}");
}

#[test]
fn reference_solution_is_self_convergent() {
    let m = single(0.5);
    let r200 = reference_cost_function(&m, 200).unwrap();
    let r400 = reference_cost_function(&m, 400).unwrap();
    let gap = sup_grid_error(&r200, &r400, &two_state_grid(100)).unwrap();
    assert!(gap < 0.2, "{gap}");
}

#[test]
fn shared_lattice_gives_identical_plans() {
    let m = single(0.2);
    let rep = Arc::new(enumerate_lattice(2, 7).unwrap());
    let a = QuantizedPlan::solve_on(&m, Arc::clone(&rep), KernelMode::Exact, 0.1).unwrap();
    let b = QuantizedPlan::solve(&m, 7, KernelMode::Exact, 0.1).unwrap();
    assert_eq!(a.solution, b.solution);
}
