"""Probability primitives over finite index sets.

Atoms of a product space are integer tuples enumerated in lexicographic
(C) order, so a pmf over ``n_1 x ... x n_k`` is a flat weight vector of
length ``n_1 * ... * n_k`` whose ravel order matches ``np.ndindex``.

Two layers live here: the :class:`FinitePmf` / :class:`KernelMatrix` value
types with the public operations on them, and array-level helpers
(``perturb_weights``, ``inverse_cdf_index``, ``perturbed_mean``...) used in
the simulation hot paths.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "FinitePmf",
    "KernelMatrix",
    "QuadratureError",
    "PMF_TOL",
    "perturb",
    "perturb_weights",
    "inverse_cdf_sample",
    "inverse_cdf_index",
    "inverse_cdf_rows",
    "product",
    "marginal",
    "disintegrate",
    "mix",
    "perturbed_mean_quadrature",
    "perturbed_mean",
]

PMF_TOL = 1e-12

ZERO_RULE_NORMALIZER = "normalizer"
ZERO_RULE_LITERAL = "literal"


class QuadratureError(RuntimeError):
    """Raised when the perturbation-mean quadrature fails to converge."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FinitePmf:
    """A probability vector over the atoms of ``np.ndindex(shape)``.

    ``shape`` lists the coordinate sizes of the product space; a plain
    finite set is ``shape=(K,)``.
    """

    weights: np.ndarray
    shape: tuple[int, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        shape = (w.size,) if self.shape is None else tuple(int(s) for s in self.shape)
        if math.prod(shape) != w.size or w.size == 0:
            raise ValueError(f"shape {shape} does not match {w.size} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("pmf weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "shape", shape)

    @classmethod
    def uniform(cls, shape: int | Sequence[int]) -> "FinitePmf":
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = math.prod(shape)
        return cls(np.full(n, 1.0 / n), shape)

    @classmethod
    def dirac(cls, atom: int | Sequence[int], shape: int | Sequence[int]) -> "FinitePmf":
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        atom = (atom,) if isinstance(atom, (int, np.integer)) else tuple(atom)
        w = np.zeros(math.prod(shape))
        w[np.ravel_multi_index(atom, shape)] = 1.0
        return cls(w, shape)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def atoms(self) -> list[tuple[int, ...]]:
        return list(np.ndindex(*self.shape))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def dense(self) -> np.ndarray:
        return self.weights.reshape(self.shape)

    def __getitem__(self, atom) -> float:
        if isinstance(atom, (int, np.integer)) and len(self.shape) == 1:
            return float(self.weights[atom])
        return float(self.weights[np.ravel_multi_index(tuple(atom), self.shape)])


@dataclass(frozen=True)
class KernelMatrix:
    """Stochastic kernel from ``n_src`` source atoms to a finite target set.

    Rows where ``defined`` is False carry NaN and must not be used.
    """

    rows: np.ndarray
    defined: np.ndarray
    target_shape: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("kernel rows must form a 2-d array")
        defined = np.array(self.defined, dtype=bool).ravel()
        if defined.size != rows.shape[0]:
            raise ValueError("defined mask length must match the number of rows")
        good = rows[defined]
        if np.any(good < 0) or np.any(np.abs(good.sum(axis=1) - 1.0) > PMF_TOL):
            raise ValueError("defined kernel rows must be pmfs")
        rows[~defined] = np.nan
        tshape = (rows.shape[1],) if self.target_shape is None else tuple(self.target_shape)
        if math.prod(tshape) != rows.shape[1]:
            raise ValueError("target_shape does not match row length")
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "defined", _frozen(defined))
        object.__setattr__(self, "target_shape", tshape)

    @classmethod
    def constant(cls, q: FinitePmf, n_src: int) -> "KernelMatrix":
        return cls(np.tile(q.weights, (n_src, 1)), np.ones(n_src, bool), q.shape)

    def row(self, x: int) -> FinitePmf:
        if not self.defined[x]:
            raise ValueError(f"kernel row {x} is undefined")
        return FinitePmf(self.rows[x], self.target_shape)


# ---------------------------------------------------------------------------
# perturbed measures
# ---------------------------------------------------------------------------


def perturb_weights(w: np.ndarray, z: np.ndarray, zero_rule: str = ZERO_RULE_NORMALIZER) -> np.ndarray:
    """Array form of :func:`perturb`; ``w`` and ``z`` are 1-d of equal length."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if w.shape != z.shape:
        raise ValueError(f"perturbation has shape {z.shape}, pmf has {w.shape}")
    if zero_rule == ZERO_RULE_LITERAL:
        degenerate = bool(np.any(z == 0))
    elif zero_rule == ZERO_RULE_NORMALIZER:
        degenerate = False
    else:
        raise ValueError(f"unknown zero rule {zero_rule!r}")
    zw = z * w
    total = zw.sum()
    if degenerate or total <= 0:
        return np.full(w.size, 1.0 / w.size)
    return zw / total


def perturb(mu: FinitePmf, z, zero_rule: str = ZERO_RULE_NORMALIZER) -> FinitePmf:
    """Reweight ``mu`` componentwise by ``z`` and renormalize.

    When the normalizer ``sum(z * mu)`` vanishes the uniform pmf is returned.
    ``zero_rule="literal"`` instead returns the uniform pmf as soon as any
    coordinate of ``z`` is zero.
    """
    z = np.asarray(z, dtype=float).ravel()
    if np.any(z < 0):
        raise ValueError("perturbation entries must be nonnegative")
    return FinitePmf(perturb_weights(mu.weights, z, zero_rule), mu.shape)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _last_positive(w: np.ndarray) -> int:
    nz = np.flatnonzero(w > 0)
    return int(nz[-1]) if nz.size else w.size - 1


def inverse_cdf_index(w: np.ndarray, u):
    """Smallest ``k`` with ``u < cumsum(w)[k]``; vectorized over ``u``.

    Rounding can leave ``cumsum(w)[-1]`` a hair below 1, so indices past
    the end are clamped onto the last atom carrying mass.
    """
    w = np.asarray(w, dtype=float)
    cdf = np.cumsum(w)
    k = np.searchsorted(cdf, u, side="right")
    return np.minimum(k, _last_positive(w))


def inverse_cdf_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF: one uniform per row of ``probs``."""
    cdf = np.cumsum(probs, axis=1)
    k = (u[:, None] >= cdf).sum(axis=1)
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(k, last)


def inverse_cdf_sample(mu: FinitePmf, u: float) -> int:
    """Flat index of the atom selected by ``u`` in ``[0, 1)``.

    Atom ``k`` owns the half-open interval ``[cdf[k-1], cdf[k])``, so a
    ``u`` sitting exactly on a boundary goes to the next atom.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u={u!r} outside [0, 1)")
    return int(inverse_cdf_index(mu.weights, u))


# ---------------------------------------------------------------------------
# products, marginals, disintegration
# ---------------------------------------------------------------------------


def product(mus: Sequence[FinitePmf]) -> FinitePmf:
    if not mus:
        raise ValueError("product of an empty list")
    w = mus[0].weights
    shape = mus[0].shape
    for mu in mus[1:]:
        w = np.multiply.outer(w, mu.weights).ravel()
        shape = shape + mu.shape
    return FinitePmf(w, shape)


def marginal(joint: FinitePmf, coords: Sequence[int]) -> FinitePmf:
    """Marginal on the coordinates ``coords`` (returned in ascending order)."""
    coords = sorted(set(int(c) for c in coords))
    nd = len(joint.shape)
    if not coords or coords[0] < 0 or coords[-1] >= nd:
        raise ValueError(f"invalid coordinates {coords} for a {nd}-coordinate space")
    drop = tuple(c for c in range(nd) if c not in coords)
    dense = joint.dense().sum(axis=drop) if drop else joint.dense()
    return FinitePmf(dense.ravel(), tuple(joint.shape[c] for c in coords))


def disintegrate(joint: FinitePmf, n_base: int | None = None) -> tuple[FinitePmf, KernelMatrix]:
    """Split a pmf over ``X x A`` into its ``X`` marginal and a kernel on ``A``.

    The first ``n_base`` coordinates form ``X`` (default: all but the last).
    Rows at zero-mass base atoms are left undefined.
    """
    nd = len(joint.shape)
    n_base = nd - 1 if n_base is None else int(n_base)
    if not 0 < n_base < nd:
        raise ValueError(f"n_base={n_base} must split the {nd} coordinates")
    xshape, ashape = joint.shape[:n_base], joint.shape[n_base:]
    mat = joint.weights.reshape(math.prod(xshape), math.prod(ashape))
    base = mat.sum(axis=1)
    defined = base > 0
    rows = np.full(mat.shape, np.nan)
    rows[defined] = mat[defined] / base[defined, None]
    return FinitePmf(base, xshape), KernelMatrix(rows, defined, ashape)


def mix(base: FinitePmf, kernel: KernelMatrix) -> FinitePmf:
    """The joint law ``base(x) * kernel(a | x)`` over ``X x A``."""
    if kernel.rows.shape[0] != base.size:
        raise ValueError("kernel has the wrong number of source rows")
    supp = base.weights > 0
    if np.any(supp & ~kernel.defined):
        raise ValueError("kernel undefined on the support of the base measure")
    rows = np.where(kernel.defined[:, None], kernel.rows, 0.0)
    joint = base.weights[:, None] * rows
    return FinitePmf(joint.ravel(), base.shape + kernel.target_shape)


# ---------------------------------------------------------------------------
# mean of the perturbed measure under i.i.d. unit-exponential weights
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_QUAD_TOL = 1e-10
_QUAD_MAX_NODES = 2**20


def _quadrature_estimate(w: np.ndarray, n_panels: int) -> np.ndarray:
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    s = (mid[:, None] + half[:, None] * _GL_X).ravel()
    ws = (half[:, None] * _GL_W).ravel()
    t = s / (1.0 - s)
    wt = np.multiply.outer(t, w)
    # prod_j (1 + w_j t)^-1 dt/ds, evaluated in log space
    common = np.exp(-np.log1p(wt).sum(axis=1)) / (1.0 - s) ** 2
    return (ws * common) @ (w / (1.0 + wt))


@functools.lru_cache(maxsize=65536)
def _perturbed_mean_cached(key: tuple[float, ...]) -> tuple[float, ...]:
    w = np.array(key)
    n_panels = 4
    prev = _quadrature_estimate(w, n_panels)
    while True:
        n_panels *= 2
        if n_panels * _GL_X.size > _QUAD_MAX_NODES:
            raise QuadratureError(f"no convergence within {_QUAD_MAX_NODES} nodes")
        est = _quadrature_estimate(w, n_panels)
        if np.max(np.abs(est - prev)) < _QUAD_TOL:
            return tuple(est)
        prev = est


def perturbed_mean(w: np.ndarray) -> np.ndarray:
    """Array form of :func:`perturbed_mean_quadrature`.

    For ``Z`` with i.i.d. Exp(1) entries, ``E[Z_k w_k / sum_j Z_j w_j]``
    equals ``int_0^inf w_k/(1 + w_k t) prod_j 1/(1 + w_j t) dt``; the
    integral is mapped to ``[0, 1)`` by ``t = s / (1 - s)`` and evaluated
    with 16-point Gauss-Legendre panels, doubling the panel count until two
    successive estimates agree to 1e-10.
    """
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    supp = np.flatnonzero(w > 0)
    if supp.size == 0:
        raise ValueError("perturbed_mean of an all-zero vector")
    if supp.size == 1:
        out[supp] = 1.0
        return out
    ws = w[supp] / w[supp].sum()
    out[supp] = _perturbed_mean_cached(tuple(ws.tolist()))
    return out


def perturbed_mean_quadrature(mu: FinitePmf) -> FinitePmf:
    """``E[[Z mu]]`` for ``Z`` with i.i.d. unit-exponential entries.

    Atoms outside the support of ``mu`` get zero mass. The result is
    renormalized after the quadrature (the raw sum is 1 to within ~1e-10).
    """
    m = perturbed_mean(mu.weights)
    return FinitePmf(m / m.sum(), mu.shape)
