"""Small test models shared across test modules."""
import numpy as np

from mftglab.model import DriftParams, FiniteNoise, MftgSpec, NoiseSpec, build_drift_model


def drift(G=3, m=2, targets=None, weights=None, variant="plain", gamma=0.9):
    targets = targets if targets is not None else (0, 2)[:m] if m <= 2 else tuple(range(m))
    weights = weights if weights is not None else np.zeros((m, m))
    return build_drift_model(DriftParams(G, m, tuple(targets), tuple(map(tuple, np.asarray(weights))),
                                         variant=variant, gamma=gamma))


def acceptance_drift(**kw):
    return drift(3, 2, (0, 2), ((0, -1), (1, 0)), **kw)


def constant_cost_spec(c=1.0, sizes=(2, 2), actions=(2, 2), gamma=0.9):
    """Random-walk-free model: states never change, cost is always ``c``."""

    def system(i, x, a, bar_a, e, common):
        return np.asarray(x, dtype=np.int64)

    def cost(i, x, a, bar_a):
        return np.full(np.shape(x), float(c))

    m = len(sizes)
    return MftgSpec(sizes, actions, gamma, system, cost, abs(c), NoiseSpec((FiniteNoise.zero(),) * m))


def cycle_spec(c0, c1, gamma=0.9):
    """One team, two states, deterministic flip ``x -> 1 - x``, cost ``c_x``."""

    def system(i, x, a, bar_a, e, common):
        return 1 - np.asarray(x, dtype=np.int64)

    def cost(i, x, a, bar_a):
        # cost of the mean field: sum_x c_x * mu(x)
        st = bar_a.reshape(bar_a.shape[0], 2, -1).sum(axis=2)
        val = st @ np.array([c0, c1])
        return np.broadcast_to(val[:, None], np.shape(x)).astype(float)

    return MftgSpec((2,), (1,), gamma, system, cost, max(abs(c0), abs(c1)), NoiseSpec((FiniteNoise.zero(),)))
