"""Smoke test for the mobal_py extension module."""

import math

import mobal_py as m


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    truth = m.PomdpModel.netsys(1, 0.2)
    conj = m.PomdpModel.netsys(1, 0.2, conjecture=0.5)
    assert (truth.n_states, truth.n_actions, truth.n_observations) == (2, 2, 8)
    assert close(truth.discount, 0.99)

    pmf = [m.betabin_pmf(7, 0.7, 3.0, k) for k in range(8)]
    assert close(sum(pmf), 1.0, 1e-12)
    assert [m.lattice_count(2, r) for r in range(4)] == [1, 2, 3, 4]
    assert m.lattice_count(8, 8) == 6435
    assert len(m.enumerate_lattice(4, 3)) == 20

    b0 = [1.0, 0.0]
    support = truth.belief_transition_support(b0, 0)
    assert close(sum(p for _, p in support), 1.0, 1e-12)
    b1 = truth.belief_update(b0, 0, 7)
    assert close(sum(b1), 1.0, 1e-12) and b1[1] > 0.0

    rho = m.posterior_update([truth, conj], [0.5, 0.5], b0, 0, 0)
    assert close(sum(rho), 1.0, 1e-12)

    plan = m.QuantizedPlan(truth, 5)
    assert len(plan.values) == 6 and plan.sweeps > 0
    assert plan.action([0.0, 1.0]) == 1
    assert all(math.isfinite(v) for v in plan.values)

    alpha = m.compute_alpha(truth, conj, m.enumerate_lattice(2, 20))
    assert 0.0 < alpha <= 2.0
    assert m.misspecification_bound(0.0, 2.0, 0.99) == 0.0
    assert close(m.approximation_bound(1.0, 0.99), 100.0, 1e-9)

    space = [m.PomdpModel.netsys(1, 0.2, conjecture=c) for c in (0.0, 0.5, 1.0)]
    ep = m.run_episode(truth, space, r=5, seed=0, horizon=50)
    again = m.run_episode(truth, space, r=5, seed=0, horizon=50)
    assert len(ep["actions"]) == 50 and ep["csv"] == again["csv"]
    assert close(sum(ep["posteriors"][-1]), 1.0, 1e-9)

    parts, _ = m.particle_filter(truth, [0] * 32, [0, 0], [0, 7], 1)
    assert len(parts) == 32

    try:
        m.PomdpModel([[[0.5, 0.4], [0.0, 1.0]]], [[1.0], [1.0]], [[0.0], [0.0]], 0.9)
    except m.MobalError:
        pass
    else:
        raise AssertionError("invalid model accepted")

    print(f"smoke test ok: return={ep['discounted_return']:.3f} alpha={alpha:.4f}")


if __name__ == "__main__":
    main()
