import itertools

import numpy as np
import pytest

from mftglab.lifted import (
    BackendError,
    ContractionError,
    LiftedGame,
    _check_contraction,
    best_response,
    compare_drift_backends,
    density_q,
    enumerate_states,
    kernel_drift_closed_form,
    kernel_drift_quadrature,
    kernel_pushforward_mc,
    lift_cost,
    make_backend,
    policy_value_dp,
    row_on,
    simplex_grid,
    successor_atoms,
)
from mftglab.policies import Level0Policy, TeamPolicy, own_state_law, vertex_law
from mftglab.space import LiftedStateSpace, SpaceOverflowError

from helpers import acceptance_drift, constant_cost_spec, cycle_spec, drift


def uniform(S):
    return np.full(S, 1.0 / S)


def product_law(mu, q):
    return np.outer(mu, q)


class TestSpace:
    def test_dedupe_and_tolerance(self):
        sp = LiftedStateSpace(3)
        assert sp.add([0.5, 0.5, 0.0]) == 0
        assert sp.add([0.5 + 1e-13, 0.5 - 1e-13, 0.0]) == 0
        assert sp.add([0.0, 0.5, 0.5]) == 1
        assert sp.index([0.2, 0.2, 0.6]) is None
        assert len(sp) == 2

    def test_cap(self):
        sp = LiftedStateSpace(2, cap=1)
        sp.add([1.0, 0.0])
        with pytest.raises(SpaceOverflowError):
            sp.add([0.0, 1.0])

    def test_nearest(self):
        sp = LiftedStateSpace(2, [[1.0, 0.0], [0.0, 1.0]])
        assert sp.nearest([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]).tolist() == [0, 0, 1]
        assert sp.nearest([[0.0, 1.0]], limit=1).tolist() == [0]

    def test_wrong_size(self):
        with pytest.raises(ValueError):
            LiftedStateSpace(3).add([1.0, 0.0])


class TestPolicies:
    def test_vertex_and_own_state(self):
        spec = acceptance_drift()
        mu = np.random.default_rng(0).dirichlet(np.ones(9))
        v = vertex_law(mu, 2, 3)
        assert np.array_equal(v[:, 2], mu) and v[:, :2].sum() == 0
        k = np.random.default_rng(1).dirichlet(np.ones(3), size=3)
        law = own_state_law(spec, 1, mu, k)
        np.testing.assert_allclose(law.sum(axis=1), mu, atol=1e-15)
        # joint state 5 is (1, 2): team 1 sits at 2
        np.testing.assert_allclose(law[5], mu[5] * k[2], atol=1e-15)

    def test_level0_validation(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [uniform(9)])
        with pytest.raises(ValueError):
            Level0Policy(sp, [np.array([[0.5, 0.6]])] * 2, [np.full((1, 2, 3, 3), 1 / 3)] * 2)
        pol = Level0Policy.random(spec, sp, 2, np.random.default_rng(0))
        back = Level0Policy.from_dict(pol.to_dict())
        assert all(np.array_equal(a, b) for a, b in zip(pol.kernels, back.kernels))
        assert np.array_equal(back.space.array, sp.array)

    def test_rally(self):
        spec = acceptance_drift()
        d = np.zeros(9)
        d[5] = 1.0
        sp = LiftedStateSpace(9, [uniform(9), d])
        pol = Level0Policy.rally(spec, sp, (2, 2))
        assert np.all(pol.kernels[0][0, 0, :, 2] == 1)
        assert [int(np.argmax(pol.kernels[0][1, 0, x])) for x in range(3)] == [0, 1, 2]

    def test_team_policy_projection(self):
        sp = LiftedStateSpace(2, [[0.5, 0.5]])
        pol = TeamPolicy.pure(np.array([[[0.5, 0.0], [0.0, 0.5]]]))
        sp.add([0.8, 0.2])
        w, laws = pol.components(1, sp)
        np.testing.assert_allclose(laws[0], [[0.8, 0.0], [0.0, 0.2]])
        assert pol.check_admissible(sp) == 0.0


class TestEnumeration:
    def test_plain_from_uniform(self):
        spec = acceptance_drift()
        sp = enumerate_states(spec, uniform(9), "closed_form")
        assert len(sp) == 10
        assert np.all(sp.array[1:].max(axis=1) == 1.0)

    def test_plain_from_dirac(self):
        spec = acceptance_drift()
        d = np.eye(9)[4]
        assert len(enumerate_states(spec, d, "closed_form")) == 9

    def test_periodic(self):
        spec = drift(variant="periodic")
        sp = enumerate_states(spec, uniform(9), "closed_form")
        assert len(sp) == 10
        atoms = successor_atoms(spec)
        # outcome (0, 0) smoothed by (1/4, 1/2, 1/4) around 0 modulo 3
        v = np.array([0.5, 0.25, 0.25])
        np.testing.assert_allclose(atoms[0], np.outer(v, v).ravel(), atol=1e-15)


class TestKernels:
    def test_coordinated_is_dirac(self):
        spec = acceptance_drift()
        mu = uniform(9)
        laws = [vertex_law(mu, 1, 3), vertex_law(mu, 2, 3)]
        for fn in (kernel_drift_closed_form, kernel_drift_quadrature):
            st, p = fn(spec, mu, laws)
            assert p.tolist() == [1.0] and np.argmax(st[0]) == 5
        st, p = kernel_pushforward_mc(spec, mu, laws, samples=2000)
        assert p.tolist() == [1.0] and np.argmax(st[0]) == 5

    def test_uniform_mc(self):
        spec = drift(G=2, m=2, targets=(0, 1))
        mu = uniform(4)
        laws = [product_law(mu, [0.5, 0.5])] * 2
        st, p = kernel_pushforward_mc(spec, mu, laws, samples=20_000, seed=3)
        row = row_on(st, p, np.eye(4))
        se = np.sqrt(0.25 * 0.75 / 20_000)
        assert np.all(np.abs(row - 0.25) <= 4 * se)

    def test_deterministic_mc_exact(self):
        spec = cycle_spec(1.0, 2.0)
        st, p = kernel_pushforward_mc(spec, np.array([0.3, 0.7]), [np.array([[0.3], [0.7]])], samples=50)
        assert p.tolist() == [1.0]
        np.testing.assert_allclose(st[0], [0.7, 0.3])

    def test_skewed_gap(self):
        spec = drift(G=2, m=1, targets=(1,), weights=[[0]])
        mu = np.array([0.5, 0.5])
        law = product_law(mu, [1 / 3, 2 / 3])
        out = compare_drift_backends(spec, mu, [law])
        assert abs(out["quadrature"][0] - (2 * np.log(2) - 1)) < 1e-9
        assert abs(out["closed_form"][0] - 1 / 3) < 1e-15
        assert out["flagged"] and abs(out["max_gap"] - 0.0530) < 1e-4

    def test_mc_agrees_with_quadrature(self):
        spec = drift(G=2, m=1, targets=(1,), weights=[[0]])
        mu = np.array([0.5, 0.5])
        law = product_law(mu, [1 / 3, 2 / 3])
        st, p = kernel_pushforward_mc(spec, mu, [law], samples=100_000, seed=1)
        mc = row_on(st, p, np.eye(2))
        q = 2 * np.log(2) - 1
        assert abs(mc[0] - q) <= 4 * np.sqrt(q * (1 - q) / 100_000)

    def test_backends_agree_on_uniform(self):
        spec = acceptance_drift()
        mu = uniform(9)
        laws = [product_law(mu, uniform(3))] * 2
        out = compare_drift_backends(spec, mu, laws)
        assert out["max_gap"] < 1e-10 and not out["flagged"]

    def test_rows_are_pmfs_and_continuous(self):
        spec = acceptance_drift()
        rng = np.random.default_rng(7)
        for _ in range(5):
            mu = rng.dirichlet(np.ones(9))
            laws = [mu[:, None] * rng.dirichlet(np.ones(3), size=9) for _ in range(2)]
            for fn in (kernel_drift_closed_form, kernel_drift_quadrature):
                _, p = fn(spec, mu, laws)
                assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12

    def test_inadmissible_rejected(self):
        spec = acceptance_drift()
        with pytest.raises(ValueError):
            kernel_drift_closed_form(spec, uniform(9), [np.full((9, 3), 1 / 9)] * 2)

    def test_backend_errors(self):
        spec = constant_cost_spec()
        with pytest.raises(BackendError):
            kernel_drift_closed_form(spec, uniform(4), [product_law(uniform(4), [1, 0])] * 2)
        with pytest.raises(ValueError):
            make_backend("exact")

    def test_density(self):
        spec = acceptance_drift()
        mu = uniform(9)
        laws = [product_law(mu, uniform(3))] * 2
        assert abs(density_q(spec, np.eye(9)[3], mu, laws) - 1.0) < 1e-12
        assert density_q(spec, uniform(9), mu, laws) == 0.0
        coord = [vertex_law(mu, 0, 3), vertex_law(mu, 0, 3)]
        assert density_q(spec, np.eye(9)[0], mu, coord) == 9.0


class TestLiftCost:
    def test_constant(self):
        spec = constant_cost_spec(1.5)
        mu = uniform(4)
        assert lift_cost(spec, 0, mu, [product_law(mu, [1, 0])] * 2) == 1.5

    def test_dirac_state(self):
        spec = acceptance_drift()
        mu = np.eye(9)[6]
        laws = [vertex_law(mu, 0, 3)] * 2
        assert lift_cost(spec, 1, mu, laws) == 4.0
        assert lift_cost(spec, 0, mu, laws) == 0.0


def _game(spec, mu0, backend="closed_form", samples=1):
    game = LiftedGame(spec, LiftedStateSpace(spec.n_joint_states), backend, mc_samples=samples)
    enumerate_states(spec, mu0, backend, game=game)
    return game


class TestDynamicProgramming:
    def test_constant_cost(self):
        spec = constant_cost_spec(1.0)
        mu0 = uniform(4)
        sp = LiftedStateSpace(4, [mu0])
        game = LiftedGame(spec, sp, "mc", mc_samples=1)
        prof = [TeamPolicy.vertex(sp, 2, 0)] * 2
        res = policy_value_dp(game, prof, eps=1e-8)
        assert np.all(np.abs(res.values - 10.0) <= 1e-8)

    def test_two_state_cycle(self):
        spec = cycle_spec(1.0, 3.0, gamma=0.9)
        game = _game(spec, np.array([1.0, 0.0]), "mc")
        assert len(game.space) == 2
        prof = [TeamPolicy.vertex(game.space, 1, 0)]
        v = policy_value_dp(game, prof, eps=1e-10).values[0]
        exact0 = (1.0 + 0.9 * 3.0) / (1 - 0.81)
        exact1 = (3.0 + 0.9 * 1.0) / (1 - 0.81)
        assert abs(v[0] - exact0) <= 1e-10 and abs(v[1] - exact1) <= 1e-10

    def test_contraction_check(self):
        _check_contraction([1.0, 0.9, 0.81], 0.9)
        with pytest.raises(ContractionError):
            _check_contraction([1.0, 0.95], 0.9)

    def test_needs_one_policy_per_player(self):
        spec = constant_cost_spec()
        sp = LiftedStateSpace(4, [uniform(4)])
        with pytest.raises(ValueError):
            policy_value_dp(LiftedGame(spec, sp, "mc", mc_samples=1), [TeamPolicy.vertex(sp, 2)])


class TestBestResponse:
    def test_tie_break_lowest_index(self):
        spec = constant_cost_spec(1.0)
        sp = LiftedStateSpace(4, [uniform(4)])
        game = LiftedGame(spec, sp, "mc", mc_samples=1)
        prof = [TeamPolicy.vertex(sp, 2, 1)] * 2
        br = best_response(game, 0, prof)
        assert br.choice.tolist() == [0]

    @pytest.mark.parametrize("backend", ["closed_form", "quadrature"])
    def test_single_team_exhaustive(self, backend):
        spec = drift(G=2, m=1, targets=(1,), weights=[[0]])
        game = _game(spec, uniform(2), backend)
        n = len(game.space)
        br = best_response(game, 0, [TeamPolicy.vertex(game.space, 2, 0)], eps=1e-10)
        best = np.inf
        for acts in itertools.product(range(2), repeat=n):
            v = policy_value_dp(game, [TeamPolicy.vertex(game.space, 2, np.array(acts))], eps=1e-10).values[0]
            best = np.minimum(best, v)
        assert np.all(np.abs(br.values - best) <= 2e-10)
        v_br = policy_value_dp(game, [br.policy], eps=1e-10).values[0]
        assert np.all(np.abs(v_br - best) <= 2e-10)

    @pytest.mark.parametrize("backend", ["closed_form", "quadrature"])
    def test_vertex_beats_grid(self, backend):
        spec = drift(G=2, m=1, targets=(1,), weights=[[0]])
        game = _game(spec, uniform(2), backend)
        init = [TeamPolicy.vertex(game.space, 2, 0)]
        vert = best_response(game, 0, init, eps=1e-10)
        grid = best_response(game, 0, init, eps=1e-10, grid=100)
        assert np.all(vert.values <= grid.values + 2e-10)

    def test_simplex_grid(self):
        g = simplex_grid(2, 100)
        assert g.shape == (101, 2) and np.all(np.abs(g.sum(axis=1) - 1) < 1e-15)
        assert g[0].tolist() == [1.0, 0.0]
        assert simplex_grid(3, 2).shape == (6, 3)
