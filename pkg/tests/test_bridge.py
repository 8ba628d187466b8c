import numpy as np
import pytest

from mftglab.bridge import BackendMismatchError, equivalence_check, lift_policy, lower_policy
from mftglab.lifted import enumerate_states
from mftglab.policies import Level0Policy, TeamPolicy, own_state_law
from mftglab.reconstruction import admissible
from mftglab.space import LiftedStateSpace

from helpers import acceptance_drift, constant_cost_spec, drift

U9 = np.full(9, 1 / 9)


def space_with(spec, mu0):
    return enumerate_states(spec, mu0, "closed_form")


class TestLift:
    def test_dirac_kernel(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [U9])
        pol = Level0Policy.constant(spec, sp, (2, 0))
        prof = lift_policy(spec, pol)
        assert np.array_equal(prof[0].laws[0, 0][:, 2], U9)
        assert prof[1].laws[0, 0][:, 1:].sum() == 0

    def test_state_independent_kernel_is_product(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [U9])
        q = np.array([0.2, 0.3, 0.5])
        pol = Level0Policy(sp, [np.ones((1, 1))] * 2, [np.broadcast_to(q, (1, 1, 3, 3)).copy()] * 2)
        for tp in lift_policy(spec, pol):
            np.testing.assert_allclose(tp.laws[0, 0], np.outer(U9, q), atol=1e-15)

    def test_random_slots_admissible(self):
        spec = acceptance_drift()
        sp = space_with(spec, U9)
        pol = Level0Policy.random(spec, sp, 3, np.random.default_rng(0))
        for tp in lift_policy(spec, pol):
            assert tp.weights.shape == (len(sp), 3)
            for s in range(len(sp)):
                for law in tp.laws[s]:
                    assert admissible(sp[s], law)[1] <= 1e-15

    def test_round_trip(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [U9])
        pol = Level0Policy.random(spec, sp, 2, np.random.default_rng(1))
        back = lower_policy(spec, lift_policy(spec, pol), sp)
        for k0, k1 in zip(pol.kernels, back.kernels):
            assert np.max(np.abs(k0 - k1)) <= 1e-15

    def test_full_state_kernel_loses_information(self):
        # team 0 copies team 1's state: not expressible with own-state kernels
        spec = drift(G=2, m=2, targets=(0, 1))
        mu = np.full(4, 0.25)
        sp = LiftedStateSpace(4, [mu])
        law = np.zeros((4, 2))
        for s in range(4):
            law[s, s % 2] = mu[s]
        prof = [TeamPolicy.pure(law[None]), TeamPolicy.vertex(sp, 2, 0)]
        lowered = lower_policy(spec, prof, sp)
        np.testing.assert_allclose(lowered.kernels[0][0, 0], np.full((2, 2), 0.5))
        relifted = lift_policy(spec, lowered)[0].laws[0, 0]
        assert np.abs(relifted - law).sum() > 0.4


class TestEquivalence:
    def test_constant_cost(self):
        spec = constant_cost_spec(1.0, sizes=(3, 3), actions=(3, 3))
        sp = LiftedStateSpace(9, [U9])
        pol = Level0Policy.random(spec, sp, 2, np.random.default_rng(0))
        rep = equivalence_check(spec, pol, U9, backend="mc", reps=50, mc_samples=1)
        assert rep.ok and np.all(rep.diff <= 1e-4 + 1e-12)

    def test_coordinated_drift(self):
        spec = acceptance_drift()
        sp = space_with(spec, U9)
        pol = Level0Policy.constant(spec, sp, (1, 2))
        rep = equivalence_check(spec, pol, U9, reps=300)
        assert rep.ok

    def test_random_policy_mc_backend(self):
        spec = drift(G=2, m=2, targets=(0, 1), weights=((0, 1), (-1, 0)))
        mu0 = np.full(4, 0.25)
        sp = space_with(spec, mu0)
        pol = Level0Policy.random(spec, sp, 2, np.random.default_rng(3))
        rep = equivalence_check(spec, pol, mu0, backend="mc", reps=1000, mc_samples=20_000)
        assert rep.ok, (rep.diff, rep.threshold)

    def test_closed_form_rejected(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [U9])
        with pytest.raises(BackendMismatchError):
            equivalence_check(spec, Level0Policy.constant(spec, sp, (0, 0)), U9, backend="closed_form")

    def test_uncovered_start(self):
        spec = acceptance_drift()
        sp = LiftedStateSpace(9, [U9])
        with pytest.raises(ValueError):
            equivalence_check(spec, Level0Policy.constant(spec, sp, (0, 0)), np.eye(9)[0], reps=5)
