"""The lifted Markov game over pmfs of joint states.

Kernel backends map an admissible pair ``(mu, a_hats)`` to a finite list of
successor lifted states with probabilities:

``mc``
    generic: samples the common noise and pushes ``Xi(mu, a_hats) x nu``
    through the system function exactly for every sample;
``closed_form``
    drift only: successor of the joint action ``a`` has probability
    ``prod_i pr_{a_i}(a_hat_i)(a_i)``;
``quadrature``
    drift only: the exact law of the perturbed draw, using the
    perturbation mean computed by quadrature. Default for the drift model.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import MftgSpec, NoiseArchitecture, sample_common_noise
from .policies import TeamPolicy, own_state_law, vertex_law
from .prob import perturbed_mean
from .reconstruction import ADMISSIBLE_TOL, admissible, reconstruct_xi
from .space import LiftedStateSpace, SpaceOverflowError

__all__ = [
    "BACKENDS",
    "BackendError",
    "ContractionError",
    "pushforward",
    "kernel_pushforward_mc",
    "kernel_drift_closed_form",
    "kernel_drift_quadrature",
    "compare_drift_backends",
    "successor_atoms",
    "density_q",
    "lift_cost",
    "LiftedGame",
    "enumerate_states",
    "DPResult",
    "policy_value_dp",
    "BRResult",
    "best_response",
    "simplex_grid",
]

BACKENDS = ("closed_form", "quadrature", "mc")
MC_DEFAULT_SAMPLES = 100_000
_MC_CHUNK = 10_000
_TIE_TOL = 1e-10


class BackendError(ValueError):
    """A kernel backend was used on a model it does not support."""


class ContractionError(RuntimeError):
    """Value-iteration deltas failed to contract by the discount factor."""


# ---------------------------------------------------------------------------
# push-forward of the joint law through the system function
# ---------------------------------------------------------------------------


def _batch_of(common) -> int:
    for obj in (common.global_,) + tuple(common.team):
        if obj is None:
            continue
        first = obj[0] if isinstance(obj, tuple) else obj
        return int(np.shape(first)[0])
    return 1


def _team_transitions(spec: MftgSpec, i: int, bar_a: np.ndarray, common) -> np.ndarray:
    """``T[b, x, a, y] = sum_e nu(e) 1[F_i(x, a, bar_a_b, e, common_b) = y]``."""
    B = bar_a.shape[0]
    G, A = spec.state_sizes[i], spec.action_sizes[i]
    noise = spec.noise.idiosyncratic[i]
    E = noise.values.size
    xg, ag, eg = (g.ravel() for g in np.meshgrid(np.arange(G), np.arange(A), np.arange(E), indexing="ij"))
    n = xg.size
    y = spec.system(i, np.broadcast_to(xg, (B, n)), np.broadcast_to(ag, (B, n)), bar_a,
                    np.broadcast_to(noise.values[eg], (B, n)), common)
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= G):
        raise ValueError(f"system function of team {i} left the state space")
    T = np.zeros((B, n, G))
    T[np.arange(B)[:, None], np.arange(n)[None, :], y] = np.broadcast_to(noise.probs[eg], (B, n))
    return T.reshape(B, G, A, E, G).sum(axis=3)


def _einsum_next(spec: MftgSpec, bar_a: np.ndarray, Ts: Sequence[np.ndarray]) -> np.ndarray:
    m = spec.m
    letters = iter("abcdefghijklmnopqrstuvwxy")
    xs = [next(letters) for _ in range(m)]
    as_ = [next(letters) for _ in range(m)]
    ys = [next(letters) for _ in range(m)]
    terms = ["z" + "".join(xs) + "".join(as_)] + ["z" + xs[i] + as_[i] + ys[i] for i in range(m)]
    expr = ",".join(terms) + "->z" + "".join(ys)
    B = bar_a.shape[0]
    nxt = np.einsum(expr, bar_a.reshape((B,) + spec.state_sizes + spec.action_sizes), *Ts, optimize=True)
    return nxt.reshape(B, -1)


def pushforward(spec: MftgSpec, mu, a_hats: Sequence, common) -> np.ndarray:
    """Next lifted state for every common-noise sample in ``common``.

    ``mu`` may be ``(S,)`` or ``(B, S)``; ``a_hats[i]`` correspondingly
    ``(S, A_i)`` or ``(B, S, A_i)``. Returns ``(B, S)``.
    """
    B = _batch_of(common)
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = np.broadcast_to(mu, (B,) + mu.shape)
        a_hats = [np.broadcast_to(np.asarray(a, dtype=float), (B,) + np.shape(a)) for a in a_hats]
    bar_a = reconstruct_xi(mu, a_hats)
    Ts = [_team_transitions(spec, i, bar_a, common) for i in range(spec.m)]
    return _einsum_next(spec, bar_a, Ts)


# ---------------------------------------------------------------------------
# kernel backends
# ---------------------------------------------------------------------------


def _require_admissible(mu, a_hats) -> None:
    for i, a in enumerate(a_hats):
        ok, res = admissible(mu, a)
        if not ok:
            raise ValueError(f"team {i}: action law not admissible (residual {res:.3g})")


def _aggregate(states: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge duplicate successor states (rounded to 12 decimals), sorted canonically."""
    keys = np.round(states, 12) + 0.0
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    p = np.zeros(uniq.shape[0])
    np.add.at(p, inv.ravel(), probs)
    first = np.zeros(uniq.shape[0], dtype=np.int64)
    first[inv.ravel()[::-1]] = np.arange(inv.size)[::-1]
    return states[first], p


def kernel_pushforward_mc(spec: MftgSpec, mu, a_hats, samples: int = MC_DEFAULT_SAMPLES, seed: int = 0):
    """Empirical successor law from ``samples`` exact push-forwards."""
    if samples < 1:
        raise ValueError("need at least one sample")
    mu = np.asarray(mu, dtype=float)
    _require_admissible(mu, a_hats)
    arch = NoiseArchitecture(seed)
    states, counts = [], []
    for start in range(0, samples, _MC_CHUNK):
        reps = np.arange(start, min(start + _MC_CHUNK, samples))
        common = sample_common_noise(arch, spec, 1, reps)
        nxt = pushforward(spec, mu, a_hats, common)
        # without common noise the push-forward is deterministic (batch of 1)
        st, c = _aggregate(nxt, np.full(nxt.shape[0], reps.size / nxt.shape[0]))
        states.append(st)
        counts.append(c)
    st, c = _aggregate(np.concatenate(states), np.concatenate(counts))
    return st, c / samples


def successor_atoms(spec: MftgSpec) -> np.ndarray:
    """``(K, S)``: the lifted successor attached to each drift joint outcome."""
    d = _drift(spec)
    K = d.K
    if d.variant == "plain":
        return np.eye(K)
    law = np.array(d.idio_law)
    out = np.empty((K, K))
    for k, outcome in enumerate(np.ndindex(*spec.state_sizes)):
        vec = np.ones(1)
        for a in outcome:
            v = np.zeros(d.G)
            for e, p in zip((-1, 0, 1), law):
                v[(a + e) % d.G] += p
            vec = np.multiply.outer(vec, v).ravel()
        out[k] = vec
    return out


def _drift(spec: MftgSpec):
    if spec.drift is None:
        raise BackendError("this kernel backend only applies to the drift model")
    return spec.drift


def _drift_row(spec, probs: np.ndarray):
    atoms = successor_atoms(spec)
    keep = probs > 0
    return _aggregate(atoms[keep], probs[keep])


def kernel_drift_closed_form(spec: MftgSpec, mu, a_hats):
    """Product of the per-team action marginals, mapped to successor atoms."""
    _drift(spec)
    mu = np.asarray(mu, dtype=float)
    _require_admissible(mu, a_hats)
    p = np.ones(1)
    for a in a_hats:
        p = np.multiply.outer(p, np.asarray(a).sum(axis=0)).ravel()
    return _drift_row(spec, p / p.sum())


def kernel_drift_quadrature(spec: MftgSpec, mu, a_hats):
    """Exact successor law: perturbation mean of the joint action marginal."""
    _drift(spec)
    mu = np.asarray(mu, dtype=float)
    _require_admissible(mu, a_hats)
    w = reconstruct_xi(mu, a_hats).sum(axis=0).ravel()
    p = perturbed_mean(w)
    return _drift_row(spec, p / p.sum())


def make_backend(name: str, samples: int = MC_DEFAULT_SAMPLES, seed: int = 0) -> Callable:
    if name == "closed_form":
        return kernel_drift_closed_form
    if name == "quadrature":
        return kernel_drift_quadrature
    if name == "mc":
        return lambda spec, mu, a_hats: kernel_pushforward_mc(spec, mu, a_hats, samples, seed)
    raise ValueError(f"unknown kernel backend {name!r}; choose from {BACKENDS}")


def row_on(states: np.ndarray, probs: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Dense probabilities of ``reference`` rows under a sparse successor law."""
    out = np.zeros(reference.shape[0])
    for st, p in zip(states, probs):
        hit = np.flatnonzero(np.abs(reference - st).sum(axis=1) <= 1e-9)
        if hit.size == 0:
            raise ValueError("successor outside the reference set")
        out[hit[0]] += p
    return out


def compare_drift_backends(spec: MftgSpec, mu, a_hats, flag_tol: float = 1e-6) -> dict:
    """Closed-form versus quadrature rows over the successor atoms."""
    atoms = successor_atoms(spec)
    cf = row_on(*kernel_drift_closed_form(spec, mu, a_hats), atoms)
    qd = row_on(*kernel_drift_quadrature(spec, mu, a_hats), atoms)
    gap = float(np.max(np.abs(cf - qd)))
    return {"closed_form": cf, "quadrature": qd, "max_gap": gap, "flagged": gap > flag_tol}


def density_q(spec: MftgSpec, mu_prime, mu, a_hats, backend: str = "closed_form") -> float:
    """``K * P(mu' | mu, a_hats) * 1[mu' is a successor atom]``."""
    d = _drift(spec)
    atoms = successor_atoms(spec)
    mu_prime = np.asarray(mu_prime, dtype=float)
    if not np.any(np.abs(atoms - mu_prime).sum(axis=1) <= 1e-9):
        return 0.0
    fn = kernel_drift_closed_form if backend == "closed_form" else kernel_drift_quadrature
    row = row_on(*fn(spec, mu, a_hats), atoms)
    hit = int(np.flatnonzero(np.abs(atoms - mu_prime).sum(axis=1) <= 1e-9)[0])
    return float(d.K * row[hit])


def lift_cost(spec: MftgSpec, i: int, mu, a_hats) -> float:
    """Expected stage cost of team ``i`` under the reconstructed joint law."""
    mu = np.asarray(mu, dtype=float)
    bar_a = reconstruct_xi(mu, a_hats)
    G, A = spec.state_sizes[i], spec.action_sizes[i]
    xg, ag = (g.ravel()[None] for g in np.meshgrid(np.arange(G), np.arange(A), indexing="ij"))
    f = spec.cost(i, xg, ag, bar_a[None])[0]
    a_i = np.asarray(a_hats[i]).reshape(spec.state_sizes + (A,))
    drop = tuple(k for k in range(spec.m) if k != i)
    pr = (a_i.sum(axis=drop) if drop else a_i).ravel()
    return float(f @ pr)


# ---------------------------------------------------------------------------
# the lifted game with cached rows
# ---------------------------------------------------------------------------


class LiftedGame:
    """Lifted game on a growable state space with cached kernel rows and costs."""

    def __init__(self, spec: MftgSpec, space: LiftedStateSpace, backend: str = "quadrature",
                 mc_samples: int = MC_DEFAULT_SAMPLES, seed: int = 0, extend: bool = True):
        self.spec = spec
        self.space = space
        self.backend_name = backend
        self.kernel = make_backend(backend, mc_samples, seed)
        self.extend = extend
        self._cache: dict = {}

    def transition(self, s: int, laws: Sequence[np.ndarray]):
        """``(successor indices, probabilities, per-player costs)`` at state ``s``."""
        key = (s,) + tuple(np.ascontiguousarray(l).tobytes() for l in laws)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        mu = self.space[s]
        states, probs = self.kernel(self.spec, mu, laws)
        idx = np.empty(len(states), dtype=np.int64)
        for k, st in enumerate(states):
            j = self.space.index(st)
            if j is None:
                if not self.extend:
                    raise SpaceOverflowError("successor outside the enumerated space")
                j = self.space.add(st)
            idx[k] = j
        costs = np.array([lift_cost(self.spec, i, mu, laws) for i in range(self.spec.m)])
        out = (idx, probs, costs)
        self._cache[key] = out
        return out

    def mixed_transition(self, s: int, comps: Sequence[tuple[np.ndarray, np.ndarray]]):
        """Transition averaged over the product of the players' mixture components."""
        row: dict[int, float] = {}
        cost = np.zeros(self.spec.m)
        for combo in itertools.product(*(range(len(w)) for w, _ in comps)):
            weight = math.prod(comps[i][0][r] for i, r in enumerate(combo))
            idx, probs, c = self.transition(s, [comps[i][1][r] for i, r in enumerate(combo)])
            cost += weight * c
            for j, p in zip(idx, probs):
                row[int(j)] = row.get(int(j), 0.0) + weight * p
        keys = sorted(row)
        return np.array(keys, dtype=np.int64), np.array([row[k] for k in keys]), cost


def enumerate_states(spec: MftgSpec, mu0, backend: str = "quadrature", cap: int = 10_000,
                     game: LiftedGame | None = None) -> LiftedStateSpace:
    """``mu0`` and every state reachable under constant-action (vertex) profiles."""
    if game is None:
        game = LiftedGame(spec, LiftedStateSpace(spec.n_joint_states, cap=cap), backend)
    space = game.space
    space.add(mu0)
    s = 0
    while s < len(space):
        mu = space[s]
        for acts in np.ndindex(*spec.action_sizes):
            game.transition(s, [vertex_law(mu, a, spec.action_sizes[i]) for i, a in enumerate(acts)])
        s += 1
    return space


# ---------------------------------------------------------------------------
# dynamic programming
# ---------------------------------------------------------------------------


@dataclass
class DPResult:
    values: np.ndarray  # (m, n) or (n,)
    iterations: int
    deltas: list = field(default_factory=list)


def _stop_threshold(gamma: float, eps: float) -> float:
    return eps * (1 - gamma) / (2 * gamma)


def _check_contraction(deltas: list, gamma: float) -> None:
    for d0, d1 in zip(deltas, deltas[1:]):
        if d1 > gamma * d0 * (1 + 1e-9) + 1e-14:
            raise ContractionError(f"value-iteration delta grew from {d0:.3e} to {d1:.3e}")


def _dense_rows(game: LiftedGame, profile: Sequence[TeamPolicy]):
    rows, costs = [], []
    s = 0
    while s < len(game.space):
        comps = [pol.components(s, game.space) for pol in profile]
        idx, p, c = game.mixed_transition(s, comps)
        rows.append((idx, p))
        costs.append(c)
        s += 1
    n = len(game.space)
    P = np.zeros((n, n))
    for s, (idx, p) in enumerate(rows):
        P[s, idx] = p
    return P, np.array(costs).T


def policy_value_dp(game: LiftedGame, profile: Sequence[TeamPolicy], eps: float = 1e-8,
                    max_iter: int = 100_000) -> DPResult:
    """Per-player values of a stationary (mixed) level-1 profile by value iteration.

    Stops once the sup-norm update is at most ``eps (1 - gamma) / (2 gamma)``,
    so the returned values are within ``eps`` of the fixed point.
    """
    if len(profile) != game.spec.m:
        raise ValueError("need one policy per player")
    for pol in profile:
        pol.check_admissible(game.space)
    gamma = game.spec.gamma
    P, C = _dense_rows(game, profile)
    V = np.zeros_like(C)
    thr = _stop_threshold(gamma, eps)
    deltas = []
    for it in range(1, max_iter + 1):
        V_new = C + gamma * V @ P.T
        delta = float(np.max(np.abs(V_new - V)))
        deltas.append(delta)
        V = V_new
        if delta <= thr:
            break
    _check_contraction(deltas, gamma)
    return DPResult(V, it, deltas)


def simplex_grid(n: int, r: int) -> np.ndarray:
    """All points of the ``n``-simplex with coordinates in ``{0, 1/r, ..., 1}``."""
    pts = [c for c in itertools.product(range(r + 1), repeat=n) if sum(c) == r]
    return np.array(sorted(pts, reverse=True), dtype=float) / r


def _candidates(spec: MftgSpec, i: int, mu: np.ndarray, grid, own_state: bool) -> list:
    A = spec.action_sizes[i]
    if grid == "vertex":
        return [vertex_law(mu, a, A) for a in range(A)]
    pts = simplex_grid(A, int(grid))
    if not own_state:
        return [mu[:, None] * q[None, :] for q in pts]
    G = spec.state_sizes[i]
    out = []
    for choice in itertools.product(range(len(pts)), repeat=G):
        out.append(own_state_law(spec, i, mu, pts[list(choice)]))
    return out


@dataclass
class BRResult:
    policy: TeamPolicy
    values: np.ndarray
    choice: np.ndarray
    iterations: int


def best_response(game: LiftedGame, i: int, profile: Sequence[TeamPolicy], eps: float = 1e-8,
                  grid="vertex", own_state: bool = False, include_current: bool = True,
                  max_iter: int = 100_000) -> BRResult:
    """Player ``i``'s optimal stationary pure policy against ``profile``.

    Candidate laws per state are the vertex laws ``mu x delta_a`` (or a
    simplex grid of resolution ``grid``), followed by the components the
    player currently uses, so the response never does worse than the current
    policy. Ties within 1e-10 go to the lowest candidate index.
    """
    spec = game.spec
    gamma = spec.gamma
    cands: list[list[np.ndarray]] = []
    trans: list[list[tuple]] = []
    s = 0
    while s < len(game.space):
        mu = game.space[s]
        cs = _candidates(spec, i, mu, grid, own_state)
        if include_current:
            cs += list(profile[i].components(s, game.space)[1])
        opp = [pol.components(s, game.space) for pol in profile]
        ts = []
        for law in cs:
            comps = list(opp)
            comps[i] = (np.ones(1), law[None])
            idx, p, c = game.mixed_transition(s, comps)
            ts.append((idx, p, c[i]))
        cands.append(cs)
        trans.append(ts)
        s += 1
    n = len(game.space)
    V = np.zeros(n)
    thr = _stop_threshold(gamma, eps)
    deltas = []
    for it in range(1, max_iter + 1):
        V_new = np.array([min(c + gamma * (p @ V[idx]) for idx, p, c in ts) for ts in trans])
        delta = float(np.max(np.abs(V_new - V)))
        deltas.append(delta)
        V = V_new
        if delta <= thr:
            break
    _check_contraction(deltas, gamma)
    choice = np.empty(n, dtype=np.int64)
    for s, ts in enumerate(trans):
        q = np.array([c + gamma * (p @ V[idx]) for idx, p, c in ts])
        choice[s] = int(np.flatnonzero(q <= q.min() + _TIE_TOL)[0])
    policy = TeamPolicy.pure(np.array([cands[s][choice[s]] for s in range(n)]))
    return BRResult(policy, V, choice, it)
