"""Stationary policies at both levels.

Level 0 (representative agent): team ``i`` picks a slot ``r`` from the slot
weights at the current lifted state using its team randomization, then each
agent draws its action from ``kernels[s, r, x_i, :]``.

Level 1 (central planner): at lifted state ``s`` player ``i`` plays the
admissible law ``laws[s, r]`` with probability ``weights[s, r]``. A pure
policy has a single slot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MftgSpec, joint_state_coords
from .prob import inverse_cdf_rows
from .reconstruction import ADMISSIBLE_TOL, admissible, project_admissible
from .space import LiftedStateSpace

__all__ = ["Level0Policy", "TeamPolicy", "own_state_law", "vertex_law"]


def own_state_law(spec: MftgSpec, i: int, mu: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """The admissible law ``mu(x) * kernel(a | x_i)``; batched over leading axes.

    ``mu`` is ``(..., S)`` and ``kernel`` is ``(..., X_i, A_i)``.
    """
    xi = joint_state_coords(spec)[:, i]
    return mu[..., None] * np.take(kernel, xi, axis=-2)


def vertex_law(mu: np.ndarray, a: int, n_actions: int) -> np.ndarray:
    """``mu`` times the point mass on action ``a``."""
    out = np.zeros(np.shape(mu) + (n_actions,))
    out[..., a] = mu
    return out


@dataclass
class Level0Policy:
    """Closed-loop stationary level-0 policy defined on the states of ``space``.

    ``weights[i]`` has shape ``(n, R_i)`` and ``kernels[i]`` shape
    ``(n, R_i, X_i, A_i)``. Lifted states outside the space are served by
    the L1-nearest enumerated state.
    """

    space: LiftedStateSpace
    weights: list
    kernels: list

    def __post_init__(self):
        n = len(self.space)
        for i, (w, k) in enumerate(zip(self.weights, self.kernels)):
            if w.shape[0] > n or k.shape[:2] != w.shape:
                raise ValueError(f"team {i}: policy arrays do not match the space")
            if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1) > 1e-12):
                raise ValueError(f"team {i}: slot weights must be pmfs")
            if np.any(k < 0) or np.any(np.abs(k.sum(axis=-1) - 1) > 1e-12):
                raise ValueError(f"team {i}: action rows must be pmfs")

    @property
    def m(self) -> int:
        return len(self.weights)

    @classmethod
    def random(cls, spec: MftgSpec, space: LiftedStateSpace, R: int, rng: np.random.Generator,
               alpha: float = 1.0) -> "Level0Policy":
        n = len(space)
        weights, kernels = [], []
        for i in range(spec.m):
            weights.append(rng.dirichlet(np.ones(R), size=n))
            kernels.append(rng.dirichlet(np.full(spec.action_sizes[i], alpha),
                                         size=(n, R, spec.state_sizes[i])))
        return cls(space, weights, kernels)

    @classmethod
    def constant(cls, spec: MftgSpec, space: LiftedStateSpace, actions) -> "Level0Policy":
        n = len(space)
        weights, kernels = [], []
        for i, a in enumerate(actions):
            k = np.zeros((n, 1, spec.state_sizes[i], spec.action_sizes[i]))
            k[..., a] = 1.0
            weights.append(np.ones((n, 1)))
            kernels.append(k)
        return cls(space, weights, kernels)

    @property
    def n_states(self) -> int:
        return self.weights[0].shape[0]

    def to_dict(self) -> dict:
        return {
            "states": self.space.array[: self.n_states].tolist(),
            "teams": [{"weights": w.tolist(), "kernels": k.tolist()} for w, k in zip(self.weights, self.kernels)],
        }

    @classmethod
    def from_dict(cls, d: dict, space: LiftedStateSpace | None = None) -> "Level0Policy":
        """Rebuild a policy; its states are appended to ``space`` in file order."""
        states = np.array(d["states"], dtype=float)
        if space is None:
            space = LiftedStateSpace(states.shape[1])
        order = [space.add(mu) for mu in states]
        if order != list(range(len(order))):
            raise ValueError("policy states must form a prefix of the space, in order")
        weights = [np.array(t["weights"], dtype=float) for t in d["teams"]]
        kernels = [np.array(t["kernels"], dtype=float) for t in d["teams"]]
        return cls(space, weights, kernels)

    @classmethod
    def rally(cls, spec: MftgSpec, space: LiftedStateSpace, actions) -> "Level0Policy":
        """Hold position (``a = x``) at point-mass states, else play ``actions``.

        Needs ``A_i >= X_i`` for every team.
        """
        n = len(space)
        dirac = space.array.max(axis=1) >= 1.0 - 1e-12
        weights, kernels = [], []
        for i, a in enumerate(actions):
            X, A = spec.state_sizes[i], spec.action_sizes[i]
            if A < X:
                raise ValueError("rally policy needs at least as many actions as states")
            k = np.zeros((n, 1, X, A))
            k[~dirac, 0, :, a] = 1.0
            for x in range(X):
                k[dirac, 0, x, x] = 1.0
            weights.append(np.ones((n, 1)))
            kernels.append(k)
        return cls(space, weights, kernels)

    def lookup(self, mus: np.ndarray) -> np.ndarray:
        return self.space.nearest(mus, limit=self.n_states)

    def slots(self, i: int, idx: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Slot chosen by the team randomization ``theta`` at state indices ``idx``."""
        return inverse_cdf_rows(self.weights[i][idx], theta)

    def action_rows(self, i: int, idx: np.ndarray, slot: np.ndarray) -> np.ndarray:
        """``(B, X_i, A_i)`` action kernels for the selected states and slots."""
        return self.kernels[i][idx, slot]


@dataclass
class TeamPolicy:
    """Stationary (possibly mixed) level-1 policy of one player.

    ``weights`` is ``(n, R)`` and ``laws`` is ``(n, R, S, A_i)``. States added
    to the space after construction reuse the kernel of the nearest known
    state, projected onto the new state.
    """

    weights: np.ndarray
    laws: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.laws = np.asarray(self.laws, dtype=float)
        if self.laws.shape[:2] != self.weights.shape:
            raise ValueError("laws and weights disagree on (states, slots)")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(axis=1) - 1) > 1e-12):
            raise ValueError("slot weights must be pmfs")

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def pure(cls, laws: np.ndarray) -> "TeamPolicy":
        laws = np.asarray(laws, dtype=float)
        return cls(np.ones((laws.shape[0], 1)), laws[:, None])

    @classmethod
    def vertex(cls, space: LiftedStateSpace, n_actions: int, action: int | np.ndarray = 0) -> "TeamPolicy":
        acts = np.broadcast_to(np.asarray(action), (len(space),))
        return cls.pure(np.array([vertex_law(mu, int(a), n_actions) for mu, a in zip(space.array, acts)]))

    def components(self, s: int, space: LiftedStateSpace | None = None):
        """``(weights, laws)`` at state ``s``, dropping zero-weight slots."""
        if s < self.n_states:
            w, laws = self.weights[s], self.laws[s]
        else:
            mu = space[s]
            near = int(np.argmin(np.abs(space.array[: self.n_states] - mu).sum(axis=1)))
            w = self.weights[near]
            laws = np.array([project_admissible(mu, law) for law in self.laws[near]])
        keep = w > 0
        return w[keep], laws[keep]

    def check_admissible(self, space: LiftedStateSpace, tol: float = ADMISSIBLE_TOL) -> float:
        """Largest marginal residual over all states and slots; raises above ``tol``."""
        worst = 0.0
        for s in range(self.n_states):
            for r in range(self.weights.shape[1]):
                if self.weights[s, r] == 0:
                    continue
                ok, res = admissible(space[s], self.laws[s, r], tol)
                worst = max(worst, res)
                if not ok:
                    raise ValueError(f"inadmissible law at state {s}, slot {r} (residual {res:.3g})")
        return worst
