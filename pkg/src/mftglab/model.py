"""MFTG instances: model declaration, counter-based noise streams, drift example.

Conventions used across the package:

* team ``i`` has states ``0..state_sizes[i]-1`` and actions
  ``0..action_sizes[i]-1``;
* a joint state is a flat index into ``np.ndindex(*state_sizes)`` (C order);
* a JointLaw is an array of shape ``(S, A_1, ..., A_m)`` with ``S`` the number
  of joint states; batched variants carry a leading axis ``B``.

System and cost callables are batched over ``B`` so that replications and
Monte Carlo samples can be pushed through them in one call:

``system(i, x, a, bar_a, e, common) -> next x``
    ``x``, ``a``, ``e`` have shape ``(B, n)``, ``bar_a`` has shape
    ``(B, S, A_1, ..., A_m)`` and ``common`` is a :class:`CommonDraw` whose
    arrays have leading length ``B``.
``cost(i, x, a, bar_a) -> (B, n) floats``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Sequence

import numpy as np

from .prob import FinitePmf, inverse_cdf_rows

__all__ = [
    "NoiseKind",
    "NoiseArchitecture",
    "FiniteNoise",
    "CommonNoise",
    "NoiseSpec",
    "CommonDraw",
    "MftgSpec",
    "DriftParams",
    "build_drift_model",
    "sample_common_noise",
    "step_system",
    "stage_cost",
    "audit_cost_bound",
    "joint_action_marginal",
    "team_state_marginal",
    "joint_state_coords",
]


# ---------------------------------------------------------------------------
# noise streams
# ---------------------------------------------------------------------------


class NoiseKind(IntEnum):
    IDIOSYNCRATIC = 0
    TEAM_COMMON = 1
    GLOBAL_COMMON = 2
    INDIVIDUAL_RAND = 3
    TEAM_RAND = 4
    INITIAL = 5


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer (64-bit avalanche)."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class NoiseArchitecture:
    """Stateless, counter-based source of uniforms.

    The draw for ``(kind, team, agent, time, replication, j)`` is obtained by
    folding each field into a 64-bit state with ``h <- mix(h ^ mix(v + g))``,
    starting from ``h = mix(seed + g)`` where ``g`` is the golden-ratio
    constant and ``mix`` the splitmix64 finalizer. The top 53 bits of the
    final state give a double in ``[0, 1)``. Changing this derivation changes
    every stored result.
    """

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) % 2**64)

    def raw(self, kind, team, agent, time, replication, size: int) -> np.ndarray:
        fields = np.broadcast_arrays(
            *(np.asarray(v, dtype=np.int64) for v in (kind, team, agent, time, replication))
        )
        with np.errstate(over="ignore"):
            h = _mix64(np.uint64(self.seed) + _GOLDEN)
            h = np.full(fields[0].shape, h, dtype=np.uint64)
            for v in fields:
                h = _mix64(h ^ _mix64(v.astype(np.uint64) + _GOLDEN))
            j = np.arange(size, dtype=np.uint64)
            return _mix64(h[..., None] ^ _mix64(j + _GOLDEN))

    def uniforms(self, kind, team, agent, time, replication, size: int = 1) -> np.ndarray:
        """Uniforms in ``[0, 1)`` of shape ``broadcast(indices) + (size,)``."""
        bits = self.raw(kind, team, agent, time, replication, size) >> np.uint64(11)
        return bits.astype(np.float64) * 2.0**-53


# ---------------------------------------------------------------------------
# noise laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteNoise:
    """A finitely supported noise law on integer values."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int64).ravel()
        p = FinitePmf(self.probs).weights
        if v.size != p.size:
            raise ValueError("noise values and probabilities differ in length")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def zero(cls) -> "FiniteNoise":
        return cls([0], [1.0])

    def sample(self, u: np.ndarray) -> np.ndarray:
        return self.values[np.searchsorted(np.cumsum(self.probs), u, side="right").clip(max=self.values.size - 1)]

    @property
    def mean(self) -> float:
        return float(self.values @ self.probs)


@dataclass(frozen=True)
class CommonNoise:
    """A common-noise law realized as a transform of ``n_uniforms`` uniforms.

    ``transform`` maps a ``(B, n_uniforms)`` array to any batched object.
    """

    n_uniforms: int
    transform: Callable[[np.ndarray], Any]


@dataclass(frozen=True)
class NoiseSpec:
    idiosyncratic: tuple  # per team: FiniteNoise
    team_common: tuple = ()  # per team: CommonNoise or None
    global_common: CommonNoise | None = None


@dataclass(frozen=True)
class CommonDraw:
    """Batched common-noise sample: the global draw and one draw per team."""

    global_: Any
    team: tuple

    def take(self, idx) -> "CommonDraw":
        def sel(obj):
            if obj is None:
                return None
            if isinstance(obj, tuple) and hasattr(obj, "_fields"):
                return type(obj)(*(np.asarray(f)[idx] for f in obj))
            return np.asarray(obj)[idx]

        return CommonDraw(sel(self.global_), tuple(sel(t) for t in self.team))


# ---------------------------------------------------------------------------
# model declaration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MftgSpec:
    """A finite MFTG instance. See the module docstring for callable shapes."""

    state_sizes: tuple[int, ...]
    action_sizes: tuple[int, ...]
    gamma: float
    system: Callable
    cost: Callable
    cost_bound: float
    noise: NoiseSpec
    drift: "DriftParams | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ss = tuple(int(s) for s in self.state_sizes)
        aa = tuple(int(a) for a in self.action_sizes)
        if not ss or len(ss) != len(aa) or min(ss + aa) < 1:
            raise ValueError("need m >= 1 teams with nonempty state and action sets")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma={self.gamma} must lie in (0, 1)")
        if not self.cost_bound >= 0:
            raise ValueError("cost bound must be nonnegative")
        if len(self.noise.idiosyncratic) != len(ss):
            raise ValueError("need one idiosyncratic law per team")
        object.__setattr__(self, "state_sizes", ss)
        object.__setattr__(self, "action_sizes", aa)
        if not self.noise.team_common:
            object.__setattr__(self, "noise", NoiseSpec(self.noise.idiosyncratic, (None,) * len(ss), self.noise.global_common))

    @property
    def m(self) -> int:
        return len(self.state_sizes)

    @property
    def n_joint_states(self) -> int:
        return math.prod(self.state_sizes)

    @property
    def n_joint_actions(self) -> int:
        return math.prod(self.action_sizes)

    @property
    def joint_law_shape(self) -> tuple[int, ...]:
        return (self.n_joint_states,) + self.action_sizes


def joint_state_coords(spec: MftgSpec) -> np.ndarray:
    """``(S, m)`` array: team coordinates of every joint state."""
    return np.array(list(np.ndindex(*spec.state_sizes)), dtype=np.int64).reshape(-1, spec.m)


def joint_action_marginal(bar_a: np.ndarray) -> np.ndarray:
    """Batched ``pr_a``: ``(B, S, A_1..A_m) -> (B, prod A)``."""
    b = bar_a.shape[0]
    return bar_a.sum(axis=1).reshape(b, -1)


def team_state_marginal(bar_a: np.ndarray, state_sizes: Sequence[int], j: int) -> np.ndarray:
    """Batched ``pr_{x^j}``: ``(B, S, ...) -> (B, state_sizes[j])``."""
    b = bar_a.shape[0]
    st = bar_a.reshape(b, bar_a.shape[1], -1).sum(axis=2).reshape((b,) + tuple(state_sizes))
    drop = tuple(1 + k for k in range(len(state_sizes)) if k != j)
    return st.sum(axis=drop) if drop else st


# ---------------------------------------------------------------------------
# drift of intentions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftParams:
    """Parameters of the drift-of-intentions example.

    ``variant`` is ``"plain"`` or ``"periodic"`` (the latter adds a shift
    ``e`` in ``{-1, 0, 1}`` drawn from ``idio_law`` and wraps modulo ``G``).
    """

    G: int
    m: int
    targets: tuple[int, ...]
    weights: tuple[tuple[float, ...], ...]
    variant: str = "plain"
    idio_law: tuple[float, float, float] = (0.25, 0.5, 0.25)
    gamma: float = 0.9
    C_f: float | None = None
    zero_rule: str = "normalizer"

    def __post_init__(self):
        if self.G < 1 or self.m < 1:
            raise ValueError("G and m must be positive")
        t = tuple(int(x) for x in self.targets)
        if len(t) != self.m or any(not 0 <= x < self.G for x in t):
            raise ValueError("need one target in [0, G-1] per team")
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.m, self.m):
            raise ValueError("weight matrix must be m x m")
        if not np.all(np.isin(w, (-1.0, 0.0, 1.0))):
            raise ValueError("weights must lie in {-1, 0, 1}")
        if self.variant not in ("plain", "periodic"):
            raise ValueError(f"unknown variant {self.variant!r}")
        law = np.array(self.idio_law, dtype=float)
        if self.variant == "periodic":
            FinitePmf(law)
            if law.size != 3 or abs(law[2] - law[0]) > 0:
                raise ValueError("idiosyncratic law on {-1,0,1} must have mean exactly 0")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "weights", tuple(tuple(float(v) for v in row) for row in w))
        object.__setattr__(self, "idio_law", tuple(float(v) for v in law))

    @property
    def K(self) -> int:
        return self.G**self.m

    @property
    def cost_bound(self) -> float:
        if self.C_f is not None:
            return float(self.C_f)
        w = np.abs(np.array(self.weights))
        np.fill_diagonal(w, 0.0)
        return float((self.G - 1) * (1.0 + w.sum(axis=1).max()))


class DriftNoise(tuple):
    """Batched drift common noise ``(u0, z)``; ``u0`` is ``(B,)``, ``z`` ``(B, K)``."""

    _fields = ("u0", "z")

    def __new__(cls, u0, z):
        return super().__new__(cls, (u0, z))

    @property
    def u0(self):
        return self[0]

    @property
    def z(self):
        return self[1]


def _drift_transform(u: np.ndarray) -> DriftNoise:
    return DriftNoise(u[:, 0], -np.log1p(-u[:, 1:]))


def perturbed_rows(w: np.ndarray, z: np.ndarray, zero_rule: str = "normalizer") -> np.ndarray:
    """Row-wise ``[Z w]`` with the uniform fallback; ``w``, ``z`` are ``(B, K)``."""
    zw = z * w
    tot = zw.sum(axis=1, keepdims=True)
    bad = tot[:, 0] <= 0
    if zero_rule == "literal":
        bad |= np.any(z == 0, axis=1)
    out = np.divide(zw, tot, out=np.zeros_like(zw), where=~bad[:, None])
    out[bad] = 1.0 / w.shape[1]
    return out


def build_drift_model(params: DriftParams) -> MftgSpec:
    """The drift-of-intentions MFTG.

    All teams share the same common draw ``(u0, Z)``: the joint action
    marginal of ``bar_a`` is reweighted by ``Z``, one joint outcome is drawn
    with ``u0`` and team ``i`` moves to coordinate ``i`` of that outcome
    (plus its own shift modulo ``G`` in the periodic variant).
    """
    G, m = params.G, params.m
    joint_shape = (G,) * m
    dist = np.abs(np.subtract.outer(np.arange(G), np.arange(G))).astype(float)
    weights = np.array(params.weights)
    targets = np.array(params.targets)
    periodic = params.variant == "periodic"

    def system(i, x, a, bar_a, e, common):
        w = joint_action_marginal(bar_a)
        p = perturbed_rows(w, common.global_.z, params.zero_rule)
        k = inverse_cdf_rows(p, common.global_.u0)
        coord = np.unravel_index(k, joint_shape)[i]
        out = np.broadcast_to(coord[:, None], np.shape(x)).astype(np.int64)
        if periodic:
            out = np.mod(out + e, G)
        return out

    def cost(i, x, a, bar_a):
        x = np.asarray(x)
        val = np.abs(x - targets[i]).astype(float)
        for j in range(m):
            if j == i or weights[i, j] == 0:
                continue
            pj = team_state_marginal(bar_a, joint_shape, j)
            val = val + weights[i, j] * np.take_along_axis(pj @ dist, x, axis=1)
        return val

    idio = FiniteNoise([-1, 0, 1], params.idio_law) if periodic else FiniteNoise.zero()
    noise = NoiseSpec(
        idiosyncratic=(idio,) * m,
        team_common=(None,) * m,
        global_common=CommonNoise(1 + params.K, _drift_transform),
    )
    return MftgSpec(joint_shape, joint_shape, params.gamma, system, cost, params.cost_bound, noise, drift=params)


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def sample_common_noise(arch: NoiseArchitecture, spec: MftgSpec, time, replication) -> CommonDraw:
    """Common draws for time ``time`` and each replication in ``replication``.

    Returns a batch of length ``len(replication)`` (1 for a scalar).
    """
    if np.any(np.asarray(time) < 1):
        raise ValueError("common noise is indexed by time n >= 1")
    reps = np.atleast_1d(np.asarray(replication, dtype=np.int64))
    g = spec.noise.global_common
    glob = None
    if g is not None and g.n_uniforms > 0:
        glob = g.transform(arch.uniforms(NoiseKind.GLOBAL_COMMON, 0, 0, time, reps, g.n_uniforms))
    team = []
    for i, tc in enumerate(spec.noise.team_common):
        if tc is None or tc.n_uniforms == 0:
            team.append(None)
        else:
            team.append(tc.transform(arch.uniforms(NoiseKind.TEAM_COMMON, i, 0, time, reps, tc.n_uniforms)))
    return CommonDraw(glob, tuple(team))


def step_system(spec: MftgSpec, states, actions, bar_a, idio, common: CommonDraw) -> tuple:
    """Apply every team's system function to one (unbatched) profile.

    ``states``, ``actions`` and ``idio`` hold one array of agent values per
    team; ``bar_a`` is a single JointLaw and ``common`` a batch of length 1.
    """
    bar_a = np.asarray(bar_a)[None]
    out = []
    for i in range(spec.m):
        x = np.atleast_1d(np.asarray(states[i]))[None]
        a = np.atleast_1d(np.asarray(actions[i]))[None]
        e = np.broadcast_to(np.atleast_1d(np.asarray(idio[i]))[None], x.shape)
        y = spec.system(i, x, a, bar_a, e, common)[0]
        if np.any(y < 0) or np.any(y >= spec.state_sizes[i]):
            raise ValueError(f"system function of team {i} left the state space")
        out.append(y)
    return tuple(out)


def stage_cost(spec: MftgSpec, i: int, x, a, bar_a) -> float:
    """Unbatched evaluation of team ``i``'s stage cost."""
    v = spec.cost(i, np.array([[x]]), np.array([[a]]), np.asarray(bar_a)[None])
    return float(v[0, 0])


def audit_cost_bound(spec: MftgSpec, n: int = 10_000, seed: int = 0) -> float:
    """Largest ``|f|`` on ``n`` random evaluations per team; raises if above the bound."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    shape = spec.joint_law_shape
    for i in range(spec.m):
        bar_a = rng.dirichlet(np.full(math.prod(shape), 0.3), size=n).reshape((n,) + shape)
        x = rng.integers(spec.state_sizes[i], size=(n, 1))
        a = rng.integers(spec.action_sizes[i], size=(n, 1))
        worst = max(worst, float(np.max(np.abs(spec.cost(i, x, a, bar_a)))))
    if worst > spec.cost_bound + 1e-12:
        raise ValueError(f"stage cost reaches {worst}, above the declared bound {spec.cost_bound}")
    return worst
