"""Monte Carlo simulation of the N-agent team game and of its mean-field limit.

Both simulators draw from the same noise streams: agent ``j`` of team ``i``
in replication ``r`` uses the stream tuple ``(kind, i, j, n, r)``. The
representative agent of the mean-field simulation is agent 0, so the two
simulations are coupled through common random numbers.

Replications are processed in fixed-size blocks; ``threads`` only changes
scheduling, never the arithmetic, so results are bitwise independent of it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lifted import pushforward
from .model import MftgSpec, NoiseArchitecture, NoiseKind, sample_common_noise
from .policies import Level0Policy, own_state_law
from .prob import inverse_cdf_rows
from .reconstruction import reconstruct_xi

__all__ = [
    "ValueEstimate",
    "horizon_for",
    "truncation_bound",
    "empirical_joint",
    "simulate_population",
    "simulate_meanfield_level0",
    "propagation_of_chaos_sweep",
    "PocRow",
]

BLOCK = 250


@dataclass
class ValueEstimate:
    """Per-team discounted cost estimate over ``reps`` replications."""

    mean: np.ndarray
    se: np.ndarray
    reps: int
    horizon: int
    truncation_bound: float
    samples: np.ndarray = field(repr=False, default=None)
    checks: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: np.ndarray, horizon: int, bound: float, checks=None) -> "ValueEstimate":
        reps = samples.shape[0]
        se = samples.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(samples.shape[1])
        return cls(samples.mean(axis=0), se, reps, horizon, bound, samples, checks or {})


def horizon_for(gamma: float, cost_bound: float, tol: float = 1e-4) -> int:
    """Smallest ``T`` with ``C_f gamma^T / (1 - gamma) <= tol``."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if cost_bound == 0:
        return 1
    T = math.ceil(math.log(tol * (1 - gamma) / cost_bound) / math.log(gamma))
    return max(T, 1)


def truncation_bound(gamma: float, cost_bound: float, T: int) -> float:
    return cost_bound * gamma**T / (1 - gamma)


def _team_pmf(x: np.ndarray, a: np.ndarray, G: int, A: int) -> np.ndarray:
    """Batched empirical pmf over ``(x, a)``: ``(B, N) -> (B, G, A)``."""
    B, N = x.shape
    flat = (np.arange(B)[:, None] * (G * A) + x * A + a).ravel()
    counts = np.bincount(flat, minlength=B * G * A).reshape(B, G, A)
    return counts / N


def _outer_joint(spec: MftgSpec, pmfs: Sequence[np.ndarray]) -> np.ndarray:
    """Product of per-team ``(B, G_i, A_i)`` pmfs arranged as ``(B, S, A_1..A_m)``."""
    m = spec.m
    B = pmfs[0].shape[0]
    out = pmfs[0]
    for p in pmfs[1:]:
        out = out[..., None, None] * p.reshape((B,) + (1,) * (out.ndim - 1) + p.shape[1:])
    # axes are (B, G1, A1, G2, A2, ...); bring states first
    order = [0] + [1 + 2 * i for i in range(m)] + [2 + 2 * i for i in range(m)]
    return out.transpose(order).reshape((B, spec.n_joint_states) + spec.action_sizes)


def empirical_joint(spec: MftgSpec, states: Sequence, actions: Sequence) -> np.ndarray:
    """Empirical joint law over all cross-team agent tuples.

    ``states[i]`` and ``actions[i]`` are ``(N_i,)`` or batched ``(B, N_i)``.
    """
    batched = np.ndim(states[0]) == 2
    pmfs = []
    for i in range(spec.m):
        x = np.atleast_2d(np.asarray(states[i]))
        a = np.atleast_2d(np.asarray(actions[i]))
        if x.shape != a.shape:
            raise ValueError(f"team {i}: {x.shape} states but {a.shape} actions")
        pmfs.append(_team_pmf(x, a, spec.state_sizes[i], spec.action_sizes[i]))
    out = _outer_joint(spec, pmfs)
    return out if batched else out[0]


def _grid_costs(spec: MftgSpec, i: int, bar_a: np.ndarray) -> np.ndarray:
    """``(B, G_i * A_i)`` stage costs on the full ``(x, a)`` grid."""
    G, A = spec.state_sizes[i], spec.action_sizes[i]
    B = bar_a.shape[0]
    xg, ag = (g.ravel() for g in np.meshgrid(np.arange(G), np.arange(A), indexing="ij"))
    return spec.cost(i, np.broadcast_to(xg, (B, G * A)), np.broadcast_to(ag, (B, G * A)), bar_a)


def _run_blocks(fn, reps: int, threads: int) -> np.ndarray:
    starts = list(range(0, reps, BLOCK))
    blocks = [np.arange(s, min(s + BLOCK, reps)) for s in starts]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return parts


def _check_args(T: int, reps: int) -> None:
    if T < 1 or reps < 1:
        raise ValueError("need horizon T >= 1 and reps >= 1")


def _state_law(spec: MftgSpec, pmfs: Sequence[np.ndarray]) -> np.ndarray:
    B = pmfs[0].shape[0]
    out = np.ones((B, 1))
    for p in pmfs:
        out = (out[:, :, None] * p.sum(axis=2)[:, None, :]).reshape(B, -1)
    return out


def simulate_population(spec: MftgSpec, policy: Level0Policy, N: Sequence[int], T: int, seed: int,
                        reps: int, mu0, agent_ids: Sequence | None = None, threads: int = 1,
                        return_trajectories: bool = False):
    """Discounted team-average costs of the N-agent game over ``T`` steps.

    Agents start i.i.d. from the team marginals of ``mu0``. The policy is
    evaluated at the empirical joint state law. ``agent_ids[i]`` relabels
    the noise streams of team ``i`` (a permutation of ``range(N_i)``).
    Returns a :class:`ValueEstimate`, plus a list of trajectory arrays with
    columns ``(replication, time, team, agent, state, action)`` on request.
    """
    _check_args(T, reps)
    N = tuple(int(n) for n in N)
    if len(N) != spec.m or min(N) < 1:
        raise ValueError("need N_i >= 1 for every team")
    ids = [np.arange(n) if agent_ids is None else np.asarray(agent_ids[i]) for i, n in enumerate(N)]
    arch = NoiseArchitecture(seed)
    mu0 = np.asarray(mu0, dtype=float).reshape(spec.state_sizes)
    marg0 = [mu0.sum(axis=tuple(k for k in range(spec.m) if k != i)) if spec.m > 1 else mu0 for i in range(spec.m)]
    gamma = spec.gamma

    def block(r: np.ndarray):
        B = r.size
        x = [inverse_cdf_rows(np.broadcast_to(marg0[i], (B * N[i], marg0[i].size)),
                              arch.uniforms(NoiseKind.INITIAL, i, ids[i][None, :], 0, r[:, None])[..., 0].ravel()
                              ).reshape(B, N[i]) for i in range(spec.m)]
        total = np.zeros((B, spec.m))
        traj = []
        for n in range(T):
            state_pmfs = [_team_pmf(x[i], np.zeros_like(x[i]), spec.state_sizes[i], 1) for i in range(spec.m)]
            idx = policy.lookup(_state_law(spec, state_pmfs))
            acts = []
            for i in range(spec.m):
                theta = arch.uniforms(NoiseKind.TEAM_RAND, i, 0, n, r)[:, 0]
                rows = policy.action_rows(i, idx, policy.slots(i, idx, theta))
                probs = np.take_along_axis(rows, x[i][:, :, None], axis=1)
                u = arch.uniforms(NoiseKind.INDIVIDUAL_RAND, i, ids[i][None, :], n, r[:, None])[..., 0]
                acts.append(inverse_cdf_rows(probs.reshape(-1, probs.shape[-1]), u.ravel()).reshape(B, N[i]))
            pmfs = [_team_pmf(x[i], acts[i], spec.state_sizes[i], spec.action_sizes[i]) for i in range(spec.m)]
            bar_a = _outer_joint(spec, pmfs)
            for i in range(spec.m):
                total[:, i] += gamma**n * np.einsum("bk,bk->b", _grid_costs(spec, i, bar_a), pmfs[i].reshape(B, -1))
            if return_trajectories:
                for i in range(spec.m):
                    cols = np.broadcast_arrays(r[:, None], n, i, ids[i][None, :], x[i], acts[i])
                    traj.append(np.stack([c.ravel() for c in cols], axis=1))
            if n == T - 1:
                break
            common = sample_common_noise(arch, spec, n + 1, r)
            nxt = []
            for i in range(spec.m):
                noise = spec.noise.idiosyncratic[i]
                if noise.values.size == 1:
                    e = np.full((B, N[i]), noise.values[0])
                else:
                    u = arch.uniforms(NoiseKind.IDIOSYNCRATIC, i, ids[i][None, :], n + 1, r[:, None])[..., 0]
                    e = noise.sample(u)
                nxt.append(np.asarray(spec.system(i, x[i], acts[i], bar_a, e, common), dtype=np.int64))
            x = nxt
        return total, traj

    parts = _run_blocks(block, reps, threads)
    samples = np.concatenate([p[0] for p in parts])
    est = ValueEstimate.from_samples(samples, T, truncation_bound(gamma, spec.cost_bound, T))
    if return_trajectories:
        return est, [t for p in parts for t in p[1]]
    return est


def _sample_joint_initial(spec: MftgSpec, arch: NoiseArchitecture, mu0: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Joint initial states of agent 0 by sequential conditional inverse CDF."""
    B = r.size
    law = np.broadcast_to(mu0.reshape(spec.state_sizes), (B,) + spec.state_sizes)
    coords = np.zeros((B, spec.m), dtype=np.int64)
    for i in range(spec.m):
        rest = tuple(range(2, 1 + spec.m - i))
        marg = law.sum(axis=rest) if rest else law
        u = arch.uniforms(NoiseKind.INITIAL, i, 0, 0, r)[:, 0]
        coords[:, i] = inverse_cdf_rows(marg / marg.sum(axis=1, keepdims=True), u)
        law = law[np.arange(B), coords[:, i]]
    return coords


def simulate_meanfield_level0(spec: MftgSpec, policy: Level0Policy, mu0, T: int, seed: int, reps: int,
                              threads: int = 1, check_xi: bool = False, rao_blackwell: bool = False,
                              return_paths: bool = False) -> ValueEstimate:
    """Discounted costs of one representative agent per team in the mean-field limit.

    The lifted state is tracked exactly along each common-noise path. With
    ``check_xi`` the joint conditional law built directly from the level-0
    policy is compared against the reconstruction of the per-team laws, and
    the representative agents are checked to sit in the support of the
    tracked state. ``rao_blackwell`` replaces the agent's sampled cost by its
    conditional expectation given the common noise.
    """
    _check_args(T, reps)
    arch = NoiseArchitecture(seed)
    mu0 = np.asarray(mu0, dtype=float).ravel()
    gamma = spec.gamma
    xi = np.array(list(np.ndindex(*spec.state_sizes)), dtype=np.int64).reshape(-1, spec.m)

    def block(r: np.ndarray):
        B = r.size
        mu = np.broadcast_to(mu0, (B, mu0.size)).copy()
        X = _sample_joint_initial(spec, arch, mu0, r)
        total = np.zeros((B, spec.m))
        worst_xi, outside = 0.0, 0
        paths = []
        for n in range(T):
            if return_paths:
                paths.append(mu.copy())
            idx = policy.lookup(mu)
            rows, a_hats, alpha = [], [], []
            for i in range(spec.m):
                theta = arch.uniforms(NoiseKind.TEAM_RAND, i, 0, n, r)[:, 0]
                k = policy.action_rows(i, idx, policy.slots(i, idx, theta))
                rows.append(k)
                a_hats.append(own_state_law(spec, i, mu, k))
                u = arch.uniforms(NoiseKind.INDIVIDUAL_RAND, i, 0, n, r)[:, 0]
                alpha.append(inverse_cdf_rows(k[np.arange(B), X[:, i]], u))
            bar_a = reconstruct_xi(mu, a_hats)
            if check_xi:
                direct = mu.reshape(mu.shape + (1,) * spec.m)
                for i in range(spec.m):
                    shape = (B, xi.shape[0]) + (1,) * i + (spec.action_sizes[i],) + (1,) * (spec.m - i - 1)
                    direct = direct * rows[i][:, xi[:, i]].reshape(shape)
                worst_xi = max(worst_xi, float(np.max(np.abs(direct - bar_a))))
                flat = np.ravel_multi_index(tuple(X.T), spec.state_sizes)
                outside += int(np.sum(mu[np.arange(B), flat] <= 0))
            for i in range(spec.m):
                if rao_blackwell:
                    a_i = a_hats[i].reshape((B,) + spec.state_sizes + (spec.action_sizes[i],))
                    drop = tuple(1 + k for k in range(spec.m) if k != i)
                    pr = (a_i.sum(axis=drop) if drop else a_i).reshape(B, -1)
                    c = np.einsum("bk,bk->b", _grid_costs(spec, i, bar_a), pr)
                else:
                    c = spec.cost(i, X[:, i:i + 1], alpha[i][:, None], bar_a)[:, 0]
                total[:, i] += gamma**n * c
            if n == T - 1:
                break
            common = sample_common_noise(arch, spec, n + 1, r)
            nxt = np.empty_like(X)
            for i in range(spec.m):
                noise = spec.noise.idiosyncratic[i]
                if noise.values.size == 1:
                    e = np.full((B, 1), noise.values[0])
                else:
                    e = noise.sample(arch.uniforms(NoiseKind.IDIOSYNCRATIC, i, 0, n + 1, r))
                nxt[:, i] = np.asarray(spec.system(i, X[:, i:i + 1], alpha[i][:, None], bar_a, e, common))[:, 0]
            mu = pushforward(spec, mu, a_hats, common)
            X = nxt
        return total, worst_xi, outside, paths

    parts = _run_blocks(block, reps, threads)
    samples = np.concatenate([p[0] for p in parts])
    checks = {}
    if check_xi:
        checks = {"xi_residual": max(p[1] for p in parts), "agents_outside_support": sum(p[2] for p in parts)}
    if return_paths:
        checks["paths"] = np.concatenate([np.stack(p[3], axis=1) for p in parts])
    return ValueEstimate.from_samples(samples, T, truncation_bound(gamma, spec.cost_bound, T), checks)


@dataclass
class PocRow:
    N: int
    gap: np.ndarray  # per team |mean(J^N - J^MF)|
    se: np.ndarray
    total_gap: float
    total_se: float


def propagation_of_chaos_sweep(spec: MftgSpec, policy: Level0Policy, Ns: Sequence[int], T: int, reps: int,
                               seed: int, mu0, threads: int = 1) -> list[PocRow]:
    """``|J^N - J^MF|`` per population size, from paired replications.

    Each replication uses the same streams in both simulations, so the
    per-replication differences are paired. ``total_gap`` sums the per-team
    gaps; ``total_se`` combines the per-team standard errors in quadrature.
    """
    if not Ns:
        raise ValueError("need at least one population size")
    mf = simulate_meanfield_level0(spec, policy, mu0, T, seed, reps, threads=threads)
    rows = []
    for n in Ns:
        pop = simulate_population(spec, policy, (n,) * spec.m, T, seed, reps, mu0, threads=threads)
        diff = pop.samples - mf.samples
        se = diff.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(spec.m)
        gap = np.abs(diff.mean(axis=0))
        rows.append(PocRow(int(n), gap, se, float(gap.sum()), float(np.sqrt(np.sum(se**2)))))
    return rows
