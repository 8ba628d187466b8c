"""Finite enumerations of lifted states (pmfs over joint states)."""
from __future__ import annotations

import numpy as np

__all__ = ["LiftedStateSpace", "SpaceOverflowError", "STATE_MATCH_TOL"]

STATE_MATCH_TOL = 1e-9


class SpaceOverflowError(RuntimeError):
    """Raised when a lifted state space outgrows its cap."""


def _key(mu: np.ndarray) -> bytes:
    return (np.round(mu, 12) + 0.0).tobytes()


class LiftedStateSpace:
    """An ordered, growable list of distinct pmfs over ``S`` joint states.

    Lookups first try an exact key on the values rounded to 12 decimals and
    fall back to an L1 search with tolerance ``STATE_MATCH_TOL``.
    """

    def __init__(self, n_joint_states: int, states=(), cap: int = 10_000):
        self.S = int(n_joint_states)
        self.cap = int(cap)
        self._states: list[np.ndarray] = []
        self._keys: dict[bytes, int] = {}
        self._arr = np.zeros((0, self.S))
        for mu in states:
            self.add(mu)

    def __len__(self) -> int:
        return len(self._states)

    def __getitem__(self, idx: int) -> np.ndarray:
        return self._states[idx]

    def __iter__(self):
        return iter(self._states)

    @property
    def array(self) -> np.ndarray:
        if self._arr.shape[0] != len(self._states):
            self._arr = np.array(self._states).reshape(-1, self.S)
        return self._arr

    def index(self, mu, tol: float = STATE_MATCH_TOL) -> int | None:
        mu = np.asarray(mu, dtype=float)
        k = self._keys.get(_key(mu))
        if k is not None:
            return k
        if not self._states:
            return None
        d = np.abs(self.array - mu).sum(axis=1)
        j = int(np.argmin(d))
        return j if d[j] <= tol else None

    def add(self, mu) -> int:
        mu = np.array(mu, dtype=float).ravel()
        if mu.size != self.S:
            raise ValueError(f"state has {mu.size} entries, space expects {self.S}")
        k = self.index(mu)
        if k is not None:
            return k
        if len(self._states) >= self.cap:
            raise SpaceOverflowError(f"lifted state space exceeds its cap of {self.cap}")
        mu.setflags(write=False)
        self._states.append(mu)
        self._keys[_key(mu)] = len(self._states) - 1
        return len(self._states) - 1

    def nearest(self, mus, limit: int | None = None) -> np.ndarray:
        """Index of the L1-nearest enumerated state for each row of ``mus``.

        Only the first ``limit`` states are candidates (all by default).
        Ties go to the lowest index.
        """
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        limit = len(self._states) if limit is None else int(limit)
        out = np.empty(mus.shape[0], dtype=np.int64)
        keys = [_key(m) for m in mus]
        miss = []
        for b, key in enumerate(keys):
            k = self._keys.get(key)
            if k is None or k >= limit:
                miss.append(b)
            else:
                out[b] = k
        if miss:
            d = np.abs(mus[miss][:, None, :] - self.array[None, :limit]).sum(axis=2)
            out[miss] = np.argmin(d, axis=1)
        return out
