"""Reconstruction of the joint state-action law from per-team action laws.

Given a lifted state ``mu`` over joint states and, for every team, a law
``a_hat[i]`` over ``(joint state, team-i action)`` with state marginal
``mu``, the reconstruction is

    bar_a(x, a_1, ..., a_m) = mu(x) * prod_i a_hat[i](a_i | x).

All functions accept a leading batch axis: ``mu`` of shape ``(..., S)`` and
``a_hat[i]`` of shape ``(..., S, A_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .prob import FinitePmf

__all__ = [
    "ADMISSIBLE_TOL",
    "MAX_JOINT_ENTRIES",
    "XiReport",
    "admissible",
    "project_admissible",
    "conditional_rows",
    "reconstruct_xi",
    "verify_xi",
]

ADMISSIBLE_TOL = 1e-9
MAX_JOINT_ENTRIES = 10**6


def _w(mu) -> np.ndarray:
    return np.asarray(mu.weights if isinstance(mu, FinitePmf) else mu, dtype=float)


def admissible(mu, a_hat, tol: float = ADMISSIBLE_TOL) -> tuple[bool, float]:
    """Whether the state marginal of ``a_hat`` equals ``mu``; also the residual."""
    mu = _w(mu)
    a_hat = np.asarray(a_hat, dtype=float)
    if a_hat.shape[:-1] != mu.shape:
        raise ValueError(f"action law of shape {a_hat.shape} does not fit a state law of shape {mu.shape}")
    res = float(np.max(np.abs(a_hat.sum(axis=-1) - mu)))
    ok = res <= tol and bool(np.all(a_hat >= 0))
    return ok, res


def conditional_rows(a_hat: np.ndarray) -> np.ndarray:
    """Disintegration rows ``a_hat(. | x)``, uniform where the marginal vanishes."""
    a_hat = np.asarray(a_hat, dtype=float)
    marg = a_hat.sum(axis=-1, keepdims=True)
    n = a_hat.shape[-1]
    return np.divide(a_hat, marg, out=np.full(a_hat.shape, 1.0 / n), where=marg > 0)


def project_admissible(mu, a_hat) -> np.ndarray:
    """Replace the state marginal of ``a_hat`` by ``mu``, keeping its kernel.

    Rows where ``a_hat`` has no mass get the uniform kernel. Admissible
    inputs come back unchanged.
    """
    mu = _w(mu)
    a_hat = np.asarray(a_hat, dtype=float)
    if admissible(mu, a_hat, tol=0.0)[0]:
        return a_hat.copy()
    return mu[..., None] * conditional_rows(a_hat)


def _check_shapes(mu: np.ndarray, a_hats: Sequence[np.ndarray]) -> None:
    if not a_hats:
        raise ValueError("need at least one team")
    for i, a in enumerate(a_hats):
        if a.shape[:-1] != mu.shape:
            raise ValueError(f"team {i}: action law shape {a.shape} does not fit {mu.shape}")
    per_item = mu.shape[-1] * math.prod(a.shape[-1] for a in a_hats)
    if per_item > MAX_JOINT_ENTRIES:
        raise ValueError(f"joint law would have {per_item} entries (limit {MAX_JOINT_ENTRIES})")


def reconstruct_xi(mu, a_hats: Sequence, tol: float = ADMISSIBLE_TOL, return_flag: bool = False):
    """The joint law over ``(joint state, a_1, ..., a_m)``.

    Inputs that are not admissible for ``mu`` are projected first; pass
    ``return_flag=True`` to learn whether that happened. The output has
    shape ``mu.shape + (A_1, ..., A_m)``.
    """
    mu = _w(mu)
    a_hats = [np.asarray(a, dtype=float) for a in a_hats]
    _check_shapes(mu, a_hats)
    projected = False
    fixed = []
    for a in a_hats:
        if not admissible(mu, a, tol)[0]:
            a = project_admissible(mu, a)
            projected = True
        fixed.append(a)
    m = len(fixed)
    out = mu.reshape(mu.shape + (1,) * m)
    for i, a in enumerate(fixed):
        rows = conditional_rows(a)
        shape = rows.shape[:-1] + (1,) * i + rows.shape[-1:] + (1,) * (m - i - 1)
        out = out * rows.reshape(shape)
    return (out, projected) if return_flag else out


@dataclass(frozen=True)
class XiReport:
    """Residuals of a candidate joint law against the two defining properties."""

    marginal_residuals: tuple[float, ...]
    product_residual: float
    state_residual: float
    tol: float = 1e-12

    @property
    def certified(self) -> bool:
        return max(self.marginal_residuals + (self.product_residual, self.state_residual)) <= self.tol


def verify_xi(joint, mu, a_hats: Sequence, tol: float = 1e-12) -> XiReport:
    """Check ``joint`` against the marginal and product-kernel properties.

    * marginal: summing ``joint`` over all actions except team ``i``'s gives
      ``a_hat[i]``;
    * product: on the support of ``mu``, ``joint(a | x)`` equals the product
      of the per-team rows ``a_hat[i](a_i | x)``.
    Both properties determine the joint law uniquely on finite spaces.
    """
    joint = np.asarray(joint, dtype=float)
    mu = _w(mu)
    a_hats = [np.asarray(a, dtype=float) for a in a_hats]
    m = len(a_hats)
    nb = mu.ndim
    act_axes = tuple(range(nb, nb + m))
    marg = []
    for i, a in enumerate(a_hats):
        drop = tuple(ax for k, ax in enumerate(act_axes) if k != i)
        pi = joint.sum(axis=drop) if drop else joint
        marg.append(float(np.max(np.abs(pi - a))))
    state = joint.sum(axis=act_axes)
    state_res = float(np.max(np.abs(state - mu)))
    supp = mu > 0
    prod = np.ones(mu.shape + (1,) * m)
    for i, a in enumerate(a_hats):
        rows = conditional_rows(a)
        shape = rows.shape[:-1] + (1,) * i + rows.shape[-1:] + (1,) * (m - i - 1)
        prod = prod * rows.reshape(shape)
    cond = np.divide(joint, state.reshape(state.shape + (1,) * m), out=np.zeros_like(joint),
                     where=state.reshape(state.shape + (1,) * m) > 0)
    diff = np.abs(cond - prod)[supp]
    prod_res = float(diff.max()) if diff.size else 0.0
    return XiReport(tuple(marg), prod_res, state_res, tol)
