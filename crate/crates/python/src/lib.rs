//! Python bindings: models, filtering, conjecture learning, quantized
//! planning, error bounds and the online loop.

use std::sync::Arc;

use mobal::bounds::{self, AlphaPairing};
use mobal::conjecture::{self, ConjectureSpace, Posterior};
use mobal::filter::{self, ParticleSet};
use mobal::netsys::{self, NetSysConfig};
use mobal::online::{self, FilterMode, LoopConfig, ReplanPolicy};
use mobal::quantize::{self, KernelMode, QuantizedPlan};
use mobal::{Belief, PomdpModel};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(mobal_py, MobalError, PyValueError);

fn py_err(e: mobal::MobalError) -> PyErr {
    MobalError::new_err(e.to_string())
}

fn belief(probs: Vec<f64>) -> PyResult<Belief> {
    Belief::new(probs).map_err(py_err)
}

/// Finite POMDP with transition `[a][s][s']`, observation `[s'][o]` and cost
/// `[s][a]` arrays.
#[pyclass(name = "PomdpModel", module = "mobal_py", frozen)]
struct PyModel {
    inner: PomdpModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(
        transition: Vec<Vec<Vec<f64>>>,
        observation: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        discount: f64,
    ) -> PyResult<Self> {
        let inner = PomdpModel::new(transition, observation, cost, discount).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// The networked-system model on a path of `n_components` components.
    /// With `conjecture` set, the attacker's parameter is replaced by it.
    #[staticmethod]
    #[pyo3(signature = (n_components, p_attack, conjecture = None, discount = 0.99))]
    fn netsys(
        n_components: usize,
        p_attack: f64,
        conjecture: Option<f64>,
        discount: f64,
    ) -> PyResult<Self> {
        let mut config = NetSysConfig::path(n_components, p_attack);
        config.discount = discount;
        let inner = netsys::build_model(&config, conjecture).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: PomdpModel::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn n_observations(&self) -> usize {
        self.inner.n_observations()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    fn belief_cost(&self, b: Vec<f64>, a: usize) -> PyResult<f64> {
        self.inner.belief_cost(&belief(b)?, a).map_err(py_err)
    }

    fn observation_likelihood(&self, b: Vec<f64>, a: usize, o: usize) -> PyResult<f64> {
        self.inner.observation_likelihood(&belief(b)?, a, o).map_err(py_err)
    }

    fn belief_update(&self, b: Vec<f64>, a: usize, o: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.belief_update(&belief(b)?, a, o).map_err(py_err)?.into_inner())
    }

    /// Successor beliefs with their probabilities.
    fn belief_transition_support(&self, b: Vec<f64>, a: usize) -> PyResult<Vec<(Vec<f64>, f64)>> {
        let support = self.inner.belief_transition_support(&belief(b)?, a).map_err(py_err)?;
        Ok(support.into_iter().map(|(b, p)| (b.into_inner(), p)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "PomdpModel(n_states={}, n_actions={}, n_observations={}, discount={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.n_observations(),
            self.inner.discount()
        )
    }
}

/// Quantized model solved by value iteration.
#[pyclass(name = "QuantizedPlan", module = "mobal_py", frozen)]
struct PyPlan {
    inner: Arc<QuantizedPlan>,
}

#[pymethods]
impl PyPlan {
    /// Solves `model` on the lattice of resolution `r`. The kernel is built
    /// exactly unless `mc_samples` is given.
    #[new]
    #[pyo3(signature = (model, r, threshold = 0.1, mc_samples = None, seed = 0))]
    fn new(
        model: PyRef<'_, PyModel>,
        r: usize,
        threshold: f64,
        mc_samples: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let mode = match mc_samples {
            Some(samples) => KernelMode::MonteCarlo { samples, seed },
            None => KernelMode::Exact,
        };
        let plan = QuantizedPlan::solve(&model.inner, r, mode, threshold).map_err(py_err)?;
        Ok(Self { inner: Arc::new(plan) })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.solution.values.clone()
    }

    #[getter]
    fn policy(&self) -> Vec<usize> {
        self.inner.solution.policy.clone()
    }

    #[getter]
    fn sweeps(&self) -> usize {
        self.inner.solution.sweeps
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.rep_set().points().to_vec()
    }

    fn quantize(&self, b: Vec<f64>) -> PyResult<usize> {
        self.inner.rep_set().quantize(&belief(b)?).map_err(py_err)
    }

    fn cost(&self, b: Vec<f64>) -> PyResult<f64> {
        self.inner.cost(&belief(b)?).map_err(py_err)
    }

    fn action(&self, b: Vec<f64>) -> PyResult<usize> {
        self.inner.action(&belief(b)?).map_err(py_err)
    }

    /// Transition row of the quantized model as a dense vector.
    fn row(&self, a: usize, i: usize) -> PyResult<Vec<f64>> {
        if a >= self.inner.mdp.n_actions() || i >= self.inner.mdp.n_points() {
            return Err(MobalError::new_err("row index out of range"));
        }
        Ok(self.inner.mdp.dense_row(a, i))
    }
}

#[pyfunction]
fn betabin_pmf(trials: u32, alpha: f64, beta: f64, k: u32) -> PyResult<f64> {
    netsys::betabin_pmf(trials, alpha, beta, k).map_err(py_err)
}

#[pyfunction]
fn lattice_count(n: usize, r: usize) -> u128 {
    quantize::lattice_count(n, r)
}

#[pyfunction]
fn enumerate_lattice(n: usize, r: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(quantize::enumerate_lattice(n, r).map_err(py_err)?.points().to_vec())
}

#[pyfunction]
fn filter_error(b_exact: Vec<f64>, b_hat: Vec<f64>) -> PyResult<f64> {
    filter::filter_error(&belief(b_exact)?, &belief(b_hat)?).map_err(py_err)
}

/// Runs `len(actions)` bootstrap filter steps from `particles` and returns
/// the final particles and the number of degenerate steps.
#[pyfunction]
fn particle_filter(
    model: PyRef<'_, PyModel>,
    particles: Vec<usize>,
    actions: Vec<usize>,
    observations: Vec<usize>,
    seed: u64,
) -> PyResult<(Vec<usize>, u64)> {
    if actions.len() != observations.len() {
        return Err(MobalError::new_err("actions and observations differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParticleSet::new(particles, model.inner.n_states()).map_err(py_err)?;
    for (&a, &o) in actions.iter().zip(&observations) {
        ps = filter::particle_filter_step(&model.inner, &ps, a, o, &mut rng).map_err(py_err)?;
    }
    Ok((ps.particles().to_vec(), ps.degenerate_steps))
}

fn space_of(models: &[PyRef<'_, PyModel>]) -> PyResult<ConjectureSpace> {
    let params = (0..models.len()).map(|i| vec![i as f64]).collect();
    ConjectureSpace::new(params, models.iter().map(|m| m.inner.clone()).collect()).map_err(py_err)
}

/// One Bayes step of the posterior over `models`.
#[pyfunction]
fn posterior_update(
    models: Vec<PyRef<'_, PyModel>>,
    rho: Vec<f64>,
    b_prev: Vec<f64>,
    a_prev: usize,
    o: usize,
) -> PyResult<Vec<f64>> {
    let space = space_of(&models)?;
    let rho = Posterior::new(rho).map_err(py_err)?;
    let next = conjecture::posterior_update(&space, &rho, &belief(b_prev)?, a_prev, o).map_err(py_err)?;
    Ok(next.weights().to_vec())
}

/// Discrepancy of every model against `true_model` over visited beliefs and
/// executed actions.
#[pyfunction]
fn discrepancies(
    models: Vec<PyRef<'_, PyModel>>,
    true_model: PyRef<'_, PyModel>,
    beliefs: Vec<Vec<f64>>,
    actions: Vec<usize>,
) -> PyResult<Vec<f64>> {
    let space = space_of(&models)?;
    let mut history = conjecture::EmpiricalHistory::new();
    for b in beliefs {
        history.push_belief(belief(b)?);
    }
    for a in actions {
        history.push_action(a);
    }
    conjecture::discrepancies(&space, &true_model.inner, &history).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (model_true, model_conj, probes, pairing = "observation"))]
fn compute_alpha(
    model_true: PyRef<'_, PyModel>,
    model_conj: PyRef<'_, PyModel>,
    probes: Vec<Vec<f64>>,
    pairing: &str,
) -> PyResult<f64> {
    let pairing = match pairing {
        "observation" => AlphaPairing::Observation,
        "belief" => AlphaPairing::Belief,
        other => return Err(MobalError::new_err(format!("unknown pairing {other:?}"))),
    };
    let probes = probes.into_iter().map(belief).collect::<PyResult<Vec<_>>>()?;
    bounds::compute_alpha(&model_true.inner, &model_conj.inner, &probes, pairing).map_err(py_err)
}

#[pyfunction]
fn compute_c_max(model: PyRef<'_, PyModel>) -> f64 {
    bounds::compute_c_max(&model.inner)
}

/// Within-cell spread of `reference` values for the lattice of resolution `r`.
#[pyfunction]
#[pyo3(signature = (reference, r, samples_per_cell = 64, seed = 0))]
fn compute_epsilon(
    reference: PyRef<'_, PyPlan>,
    r: usize,
    samples_per_cell: usize,
    seed: u64,
) -> PyResult<f64> {
    let rep = quantize::enumerate_lattice(reference.inner.rep_set().n_states(), r).map_err(py_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bounds::compute_epsilon(&reference.inner, &rep, samples_per_cell, &mut rng).map_err(py_err)
}

#[pyfunction]
fn misspecification_bound(alpha: f64, c_max: f64, gamma: f64) -> f64 {
    bounds::misspecification_bound(alpha, c_max, gamma)
}

#[pyfunction]
fn approximation_bound(epsilon: f64, gamma: f64) -> f64 {
    bounds::approximation_bound(epsilon, gamma)
}

/// Runs the online loop against `env` with the conjectured `models` and
/// returns the episode log as a dictionary.
#[pyfunction]
#[pyo3(signature = (env, models, r = 5, seed = 0, horizon = 100, prior = None, particles = None, replan_on_change = false))]
#[allow(clippy::too_many_arguments)]
fn run_episode<'py>(
    py: Python<'py>,
    env: PyRef<'py, PyModel>,
    models: Vec<PyRef<'py, PyModel>>,
    r: usize,
    seed: u64,
    horizon: usize,
    prior: Option<Vec<f64>>,
    particles: Option<usize>,
    replan_on_change: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = LoopConfig::new(space_of(&models)?, r);
    cfg.seed = seed;
    cfg.horizon = horizon;
    if let Some(w) = prior {
        cfg.prior = Posterior::new(w).map_err(py_err)?;
    }
    if let Some(m) = particles {
        cfg.filter_mode = FilterMode::Particle;
        cfg.particle_count = m;
    }
    if replan_on_change {
        cfg.replan_policy = ReplanPolicy::OnConjectureChange;
    }
    let env = env.inner.clone();
    let log = py.detach(|| online::run_episode(&env, &cfg)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("discounted_return", log.discounted_return)?;
    out.set_item("states", log.records.iter().map(|r| r.state).collect::<Vec<_>>())?;
    out.set_item("observations", log.records.iter().map(|r| r.observation).collect::<Vec<_>>())?;
    out.set_item("actions", log.records.iter().map(|r| r.action).collect::<Vec<_>>())?;
    out.set_item("costs", log.records.iter().map(|r| r.cost).collect::<Vec<_>>())?;
    out.set_item("conjectures", log.records.iter().map(|r| r.conjecture).collect::<Vec<_>>())?;
    out.set_item("beliefs", log.records.iter().map(|r| r.belief.clone()).collect::<Vec<_>>())?;
    out.set_item("posteriors", log.records.iter().map(|r| r.posterior.clone()).collect::<Vec<_>>())?;
    out.set_item("plan_solves", log.counters.plan_solves)?;
    out.set_item("csv", log.to_csv())?;
    Ok(out)
}

#[pymodule]
fn mobal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MobalError", m.py().get_type::<MobalError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(betabin_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_count, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_lattice, m)?)?;
    m.add_function(wrap_pyfunction!(filter_error, m)?)?;
    m.add_function(wrap_pyfunction!(particle_filter, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_update, m)?)?;
    m.add_function(wrap_pyfunction!(discrepancies, m)?)?;
    m.add_function(wrap_pyfunction!(compute_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(compute_c_max, m)?)?;
    m.add_function(wrap_pyfunction!(compute_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(misspecification_bound, m)?)?;
    m.add_function(wrap_pyfunction!(approximation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    Ok(())
}
