import itertools

import numpy as np
import pytest

from mftglab.policies import Level0Policy
from mftglab.population import (
    empirical_joint,
    horizon_for,
    propagation_of_chaos_sweep,
    simulate_meanfield_level0,
    simulate_population,
    truncation_bound,
)
from mftglab.space import LiftedStateSpace

from helpers import acceptance_drift, constant_cost_spec

U9 = np.full(9, 1 / 9)


def random_policy(spec, seed=7):
    sp = LiftedStateSpace(spec.n_joint_states, [np.full(spec.n_joint_states, 1 / spec.n_joint_states)])
    return Level0Policy.random(spec, sp, 2, np.random.default_rng(seed))


def coordinated_policy(spec, actions=(1, 2)):
    sp = LiftedStateSpace(spec.n_joint_states, [np.full(spec.n_joint_states, 1 / spec.n_joint_states)])
    return Level0Policy.constant(spec, sp, actions)


class TestHorizon:
    def test_example(self):
        T = horizon_for(0.9, 4.0, 1e-4)
        assert T == 123
        assert truncation_bound(0.9, 4.0, T) <= 1e-4 < truncation_bound(0.9, 4.0, T - 1)

    def test_degenerate(self):
        assert horizon_for(0.9, 0.0) == 1
        with pytest.raises(ValueError):
            horizon_for(0.9, 1.0, 0.0)


class TestEmpiricalJoint:
    def test_single_agent_is_dirac(self):
        spec = acceptance_drift()
        law = empirical_joint(spec, [np.array([2]), np.array([0])], [np.array([1]), np.array([2])])
        assert law[6, 1, 2] == 1.0 and law.sum() == 1.0

    def test_duplicates(self):
        spec = acceptance_drift()
        law = empirical_joint(spec, [np.array([1, 1]), np.array([0])], [np.array([0, 0]), np.array([2])])
        assert law[3, 0, 2] == 1.0

    def test_brute_force(self):
        spec = constant_cost_spec(sizes=(2, 2), actions=(2, 2))
        x = [np.array([0, 1]), np.array([1, 1])]
        a = [np.array([1, 0]), np.array([0, 1])]
        expect = np.zeros(spec.joint_law_shape)
        for j, k in itertools.product(range(2), range(2)):
            s = x[0][j] * 2 + x[1][k]
            expect[s, a[0][j], a[1][k]] += 0.25
        assert np.array_equal(empirical_joint(spec, x, a), expect)

    def test_shape_mismatch(self):
        spec = acceptance_drift()
        with pytest.raises(ValueError):
            empirical_joint(spec, [np.array([0, 1]), np.array([0])], [np.array([0]), np.array([0])])


class TestPopulation:
    def test_constant_cost_exact(self):
        spec = constant_cost_spec(2.0, sizes=(3, 3), actions=(3, 3))
        pol = random_policy(spec)
        est = simulate_population(spec, pol, (5, 4), 30, 0, 20, np.full(9, 1 / 9))
        exact = 2.0 * (1 - 0.9**30) / 0.1
        assert np.allclose(est.mean, exact, rtol=0, atol=1e-12)
        assert np.all(est.se < 1e-12)

    def test_coordinated_agents_gather(self):
        spec = acceptance_drift()
        pol = coordinated_policy(spec)
        _, traj = simulate_population(spec, pol, (7, 5), 4, 3, 10, U9, return_trajectories=True)
        traj = np.concatenate(traj)
        later = traj[traj[:, 1] >= 1]
        assert np.all(later[later[:, 2] == 0][:, 4] == 1)
        assert np.all(later[later[:, 2] == 1][:, 4] == 2)

    def test_deterministic_and_thread_invariant(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        a = simulate_population(spec, pol, (10, 10), 20, 5, 600, U9, threads=1)
        b = simulate_population(spec, pol, (10, 10), 20, 5, 600, U9, threads=3)
        assert np.array_equal(a.samples, b.samples)

    def test_exchangeability(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        N = (6, 6)
        base = simulate_population(spec, pol, N, 40, 2, 300, U9)
        perm = [np.random.default_rng(0).permutation(6), np.random.default_rng(1).permutation(6)]
        other = simulate_population(spec, pol, N, 40, 2, 300, U9, agent_ids=perm)
        assert np.array_equal(base.samples, other.samples)

    def test_bad_args(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        with pytest.raises(ValueError):
            simulate_population(spec, pol, (0, 3), 5, 0, 5, U9)
        with pytest.raises(ValueError):
            simulate_population(spec, pol, (3, 3), 0, 0, 5, U9)


class TestMeanField:
    def test_coordinated_paths(self):
        spec = acceptance_drift()
        pol = coordinated_policy(spec)
        est = simulate_meanfield_level0(spec, pol, U9, 5, 1, 30, return_paths=True)
        paths = est.checks["paths"]
        assert np.allclose(paths[:, 0], U9)
        assert np.all(paths[:, 1:, 5] == 1.0)

    def test_constant_cost(self):
        spec = constant_cost_spec(1.0, sizes=(3, 3), actions=(3, 3))
        est = simulate_meanfield_level0(spec, random_policy(spec), np.full(9, 1 / 9), 25, 0, 10)
        assert np.allclose(est.mean, (1 - 0.9**25) / 0.1, atol=1e-12)

    def test_xi_check_and_support(self):
        spec = acceptance_drift()
        est = simulate_meanfield_level0(spec, random_policy(spec), U9, 30, 2, 300, check_xi=True)
        assert est.checks["xi_residual"] <= 1e-12
        assert est.checks["agents_outside_support"] == 0

    def test_rao_blackwell_same_mean(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        a = simulate_meanfield_level0(spec, pol, U9, 30, 2, 1000)
        b = simulate_meanfield_level0(spec, pol, U9, 30, 2, 1000, rao_blackwell=True)
        assert np.all(np.abs(a.mean - b.mean) <= 4 * a.se)
        assert np.all(b.se <= a.se)

    def test_se_scaling(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        a = simulate_meanfield_level0(spec, pol, U9, 30, 3, 500)
        b = simulate_meanfield_level0(spec, pol, U9, 30, 3, 2000)
        ratio = a.se / b.se
        assert np.all((ratio > 1.0) & (ratio < 4.0))

    def test_thread_invariant(self):
        spec = acceptance_drift()
        pol = random_policy(spec)
        a = simulate_meanfield_level0(spec, pol, U9, 15, 4, 700, threads=1)
        b = simulate_meanfield_level0(spec, pol, U9, 15, 4, 700, threads=4)
        assert np.array_equal(a.samples, b.samples)


class TestPoc:
    def test_coordinated_gap_vanishes(self):
        spec = acceptance_drift()
        pol = coordinated_policy(spec)
        rows = propagation_of_chaos_sweep(spec, pol, [1, 50], 30, 400, 0, U9)
        # from step 1 on everyone sits at the common target; only step 0 differs
        for r in rows:
            assert np.all(r.gap <= 4 * r.se + 1e-12)

    def test_trivial_dynamics_zero_gap(self):
        spec = constant_cost_spec(1.0, sizes=(3,), actions=(2,))
        rows = propagation_of_chaos_sweep(spec, random_policy(spec), [1, 10, 100], 20, 30, 0, np.full(3, 1 / 3))
        assert all(r.total_gap <= 1e-12 for r in rows)

    def test_needs_sizes(self):
        spec = acceptance_drift()
        with pytest.raises(ValueError):
            propagation_of_chaos_sweep(spec, coordinated_policy(spec), [], 5, 5, 0, U9)
