"""Correspondence between level-0 and level-1 policies, and the value check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifted import LiftedGame, policy_value_dp
from .model import MftgSpec
from .policies import Level0Policy, TeamPolicy, own_state_law
from .population import horizon_for, simulate_meanfield_level0
from .reconstruction import admissible, conditional_rows
from .space import LiftedStateSpace

__all__ = ["BackendMismatchError", "CorrespondenceReport", "lift_policy", "lower_policy", "equivalence_check"]


class BackendMismatchError(ValueError):
    """The level-1 kernel backend does not describe the simulated dynamics."""


def lift_policy(spec: MftgSpec, level0: Level0Policy) -> list[TeamPolicy]:
    """Level-1 mixed profile induced by a level-0 policy.

    At lifted state ``mu`` slot ``r`` of team ``i`` becomes the law
    ``mu(x) * kernel_r(a | x_i)`` with the slot's weight.
    """
    space = level0.space
    mus = space.array[: level0.n_states]
    out = []
    for i in range(spec.m):
        k = level0.kernels[i]
        laws = own_state_law(spec, i, mus[:, None, :], k)
        out.append(TeamPolicy(level0.weights[i].copy(), laws))
    return out


def lower_policy(spec: MftgSpec, profile: list[TeamPolicy], space: LiftedStateSpace) -> Level0Policy:
    """Level-0 policy whose slots are the mixture components of ``profile``.

    Each component is reduced to its ``(x_i, a_i)`` marginal and
    disintegrated along ``x_i`` (uniform rows where ``x_i`` has no mass), so
    any dependence on the other teams' states is dropped.
    """
    weights, kernels = [], []
    for i, pol in enumerate(profile):
        n, R = pol.weights.shape
        laws = pol.laws.reshape((n, R) + spec.state_sizes + (spec.action_sizes[i],))
        drop = tuple(2 + k for k in range(spec.m) if k != i)
        pair = laws.sum(axis=drop) if drop else laws
        weights.append(pol.weights.copy())
        kernels.append(conditional_rows(pair))
    return Level0Policy(space, weights, kernels)


@dataclass
class CorrespondenceReport:
    """Outcome of the level-0 versus level-1 value comparison."""

    admissibility_residual: list
    J0: np.ndarray
    J0_se: np.ndarray
    J1: np.ndarray
    diff: np.ndarray
    threshold: np.ndarray
    horizon: int
    truncation_bound: float
    eps: float
    reps: int
    backend: str
    xi_residual: float
    agents_outside_support: int
    passed: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.passed) and self.xi_residual <= 1e-12 and self.agents_outside_support == 0


def equivalence_check(spec: MftgSpec, level0: Level0Policy, mu0, backend: str = "quadrature",
                      reps: int = 2000, tol: float = 1e-4, seed: int = 0, eps: float = 1e-8,
                      mc_samples: int = 100_000, threads: int = 1) -> CorrespondenceReport:
    """Compare the simulated level-0 value with the DP value of the lifted policy.

    Team ``i`` passes when ``|J0_i - J1_i| <= 3 SE_i + truncation bound + 2 eps``.
    The simulator uses the true noise law, so only backends that reproduce
    it (``quadrature`` for the drift model, ``mc`` generally) are accepted.
    """
    if backend == "closed_form":
        raise BackendMismatchError(
            "the closed-form kernel is not the law of the simulated dynamics; use quadrature or mc"
        )
    space = level0.space
    s0 = space.index(mu0)
    if s0 is None or s0 >= level0.n_states:
        raise ValueError("initial lifted state is not covered by the policy")
    profile = lift_policy(spec, level0)
    residuals = []
    for i, pol in enumerate(profile):
        worst = 0.0
        for s in range(pol.n_states):
            for law in pol.laws[s]:
                worst = max(worst, admissible(space[s], law)[1])
        residuals.append(worst)
    game = LiftedGame(spec, space, backend, mc_samples=mc_samples, seed=seed)
    dp = policy_value_dp(game, profile, eps=eps)
    J1 = dp.values[:, s0]
    T = horizon_for(spec.gamma, spec.cost_bound, tol)
    mf = simulate_meanfield_level0(spec, level0, mu0, T, seed, reps, threads=threads, check_xi=True)
    diff = np.abs(mf.mean - J1)
    thr = 3 * mf.se + mf.truncation_bound + 2 * eps
    return CorrespondenceReport(
        admissibility_residual=residuals,
        J0=mf.mean,
        J0_se=mf.se,
        J1=J1,
        diff=diff,
        threshold=thr,
        horizon=T,
        truncation_bound=mf.truncation_bound,
        eps=eps,
        reps=reps,
        backend=backend,
        xi_residual=mf.checks["xi_residual"],
        agents_outside_support=mf.checks["agents_outside_support"],
        passed=[bool(d <= t) for d, t in zip(diff, thr)],
    )
