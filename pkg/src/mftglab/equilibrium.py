"""Equilibrium search on the lifted game.

Exploitability of player ``i`` under the initial mixture ``eta`` is

    gap_i = E_eta[V_i(profile)] - E_eta[V_i(BR_i, profile_-i)],

computed with :func:`best_response`. Nothing here guarantees convergence;
the solvers return a trace and certify whatever they find.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lifted import LiftedGame, best_response, policy_value_dp
from .policies import TeamPolicy
from .reconstruction import admissible

__all__ = [
    "EquilibriumConfig",
    "Exploitability",
    "TraceEntry",
    "EquilibriumTrace",
    "exploitability",
    "certify",
    "best_response_dynamics",
    "fictitious_play",
]


@dataclass
class EquilibriumConfig:
    """Solver settings; ``eta`` is a list of ``(weight, lifted state)`` pairs."""

    eta: list
    max_iter: int = 50
    eps: float = 1e-8
    mode: str = "best_response"
    update: str = "round_robin"
    grid: object = "vertex"
    own_state: bool = False

    def __post_init__(self):
        w = np.array([p for p, _ in self.eta], dtype=float)
        if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("eta weights must form a pmf")
        if self.mode not in ("best_response", "fictitious_play"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.update not in ("round_robin", "simultaneous"):
            raise ValueError(f"unknown update order {self.update!r}")
        if self.max_iter < 1 or self.eps <= 0:
            raise ValueError("need max_iter >= 1 and eps > 0")

    def eta_vector(self, game: LiftedGame) -> np.ndarray:
        """Dense ``eta`` weights over the current space."""
        vec = np.zeros(len(game.space))
        for p, mu in self.eta:
            s = game.space.index(mu)
            if s is None:
                raise ValueError("eta state not in the enumerated space")
            vec[s] += p
        return vec


@dataclass
class Exploitability:
    values: np.ndarray
    br_values: np.ndarray
    gaps: np.ndarray
    total: float
    responses: list = field(repr=False, default_factory=list)


def _eta_mean(vec: np.ndarray, values: np.ndarray) -> float:
    return float(vec @ values[: vec.size])


def exploitability(game: LiftedGame, profile: Sequence[TeamPolicy], config: EquilibriumConfig) -> Exploitability:
    m = game.spec.m
    responses = [best_response(game, i, profile, config.eps, config.grid, config.own_state) for i in range(m)]
    dp = policy_value_dp(game, profile, config.eps)
    eta = config.eta_vector(game)
    vals = np.array([_eta_mean(eta, dp.values[i]) for i in range(m)])
    brv = np.array([_eta_mean(eta, responses[i].values) for i in range(m)])
    gaps = vals - brv
    if np.any(gaps < -2 * config.eps):
        raise RuntimeError(f"best response worse than the current policy: gaps {gaps}")
    return Exploitability(vals, brv, gaps, float(gaps.sum()), responses)


def certify(game: LiftedGame, profile: Sequence[TeamPolicy], config: EquilibriumConfig) -> tuple[bool, np.ndarray]:
    """Whether no player gains more than ``2 eps`` by best-responding."""
    ex = exploitability(game, profile, config)
    return bool(np.all(ex.gaps <= 2 * config.eps)), ex.gaps


@dataclass
class TraceEntry:
    iteration: int
    profile: list
    values: np.ndarray
    gaps: np.ndarray
    total: float


@dataclass
class EquilibriumTrace:
    entries: list
    status: str  # "converged", "cycle" or "max_iter"
    threshold: float

    @property
    def final(self) -> TraceEntry:
        return self.entries[-1]

    @property
    def initial(self) -> TraceEntry:
        return self.entries[0]

    @property
    def best(self) -> TraceEntry:
        return min(self.entries, key=lambda e: (e.total, e.iteration))

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _snapshot(profile: Sequence[TeamPolicy]) -> list:
    return [TeamPolicy(p.weights.copy(), p.laws.copy()) for p in profile]


def _same(a: Sequence[TeamPolicy], b: Sequence[TeamPolicy]) -> bool:
    return all(x.weights.shape == y.weights.shape and np.array_equal(x.weights, y.weights)
               and np.array_equal(x.laws, y.laws) for x, y in zip(a, b))


def _check_profile(game: LiftedGame, profile: Sequence[TeamPolicy]) -> None:
    for i, pol in enumerate(profile):
        pol.check_admissible(game.space)


def _pad(profile: Sequence[TeamPolicy], game: LiftedGame) -> list:
    """Extend every policy to all states currently in the space."""
    n = len(game.space)
    out = []
    for pol in profile:
        if pol.n_states == n:
            out.append(pol)
            continue
        w, laws = [], []
        for s in range(n):
            ws, ls = pol.components(s, game.space)
            full_w = np.zeros(pol.weights.shape[1])
            full_l = np.zeros((pol.weights.shape[1],) + pol.laws.shape[2:])
            full_w[: ws.size] = ws
            full_l[: ws.size] = ls
            full_l[ws.size:] = ls[0]
            w.append(full_w)
            laws.append(full_l)
        out.append(TeamPolicy(np.array(w), np.array(laws)))
    return out


def _record(game, profile, config, it) -> TraceEntry:
    ex = exploitability(game, profile, config)
    return TraceEntry(it, _snapshot(profile), ex.values, ex.gaps, ex.total), ex


def _run(game: LiftedGame, init: Sequence[TeamPolicy], config: EquilibriumConfig, step) -> EquilibriumTrace:
    m = game.spec.m
    threshold = m * 2 * config.eps
    profile = _pad(list(init), game)
    _check_profile(game, profile)
    entry, ex = _record(game, profile, config, 0)
    entries = [entry]
    status = "max_iter"
    if entry.total <= threshold:
        return EquilibriumTrace(entries, "converged", threshold)
    for it in range(1, config.max_iter + 1):
        profile = _pad(step(profile, ex, it), game)
        _check_profile(game, profile)
        entry, ex = _record(game, profile, config, it)
        repeated = any(_same(e.profile, entry.profile) for e in entries)
        entries.append(entry)
        if entry.total <= threshold:
            status = "converged"
            break
        if repeated:
            status = "cycle"
            break
    return EquilibriumTrace(entries, status, threshold)


def best_response_dynamics(game: LiftedGame, init: Sequence[TeamPolicy], config: EquilibriumConfig) -> EquilibriumTrace:
    """Iterated best responses (round-robin by default, team 0 first)."""

    def step(profile, ex, it):
        if config.update == "simultaneous":
            return [r.policy for r in ex.responses]
        profile = list(profile)
        for i in range(game.spec.m):
            profile = _pad(profile, game)
            profile[i] = best_response(game, i, profile, config.eps, config.grid, config.own_state).policy
        return profile

    return _run(game, init, config, step)


def _mean_law(pol: TeamPolicy, s: int, game: LiftedGame) -> np.ndarray:
    w, laws = pol.components(s, game.space)
    return np.tensordot(w, laws, axes=1)


def fictitious_play(game: LiftedGame, init: Sequence[TeamPolicy], config: EquilibriumConfig) -> EquilibriumTrace:
    """State-wise averaging ``a <- (1 - 1/t) a + (1/t) BR`` starting at ``t = 1``.

    Averages of admissible laws stay admissible. The policies are pure, with
    mixed inputs first collapsed to their mean law.
    """

    def step(profile, ex, it):
        lam = 1.0 / it
        profile = list(profile)
        responses = ex.responses
        out = []
        for i in range(game.spec.m):
            if config.update == "round_robin" and i > 0:
                profile = _pad(profile, game)
                br = best_response(game, i, profile, config.eps, config.grid, config.own_state).policy
            else:
                br = responses[i].policy
            n = len(game.space)
            laws = np.array([(1 - lam) * _mean_law(profile[i], s, game) + lam * br.components(s, game.space)[1][0]
                             for s in range(n)])
            for s in range(n):
                ok, res = admissible(game.space[s], laws[s])
                if not ok:
                    raise RuntimeError(f"averaged law left the admissible set (residual {res:.3g})")
            pol = TeamPolicy.pure(laws)
            out.append(pol)
            if config.update == "round_robin":
                profile[i] = pol
        return out

    return _run(game, init, config, step)
