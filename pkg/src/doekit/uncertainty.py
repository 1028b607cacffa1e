"""Budgeted-box fixed-load uncertainty and the per-row worst-case tightening."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSystem, rhs_b_q


@dataclass(frozen=True)
class UncertaintyModel:
    """``s_fixed = s_bar + diag(deviation) zeta`` with ``zeta`` in U(gamma).

    ``s_bar`` and ``deviation`` are stacked ``[p; q]`` vectors of length 2N,
    so one budget covers active and reactive deviations jointly.
    """

    s_bar: np.ndarray
    deviation: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        s_bar = np.asarray(self.s_bar, dtype=float)
        dev = np.asarray(self.deviation, dtype=float)
        if s_bar.shape != dev.shape:
            raise ValueError("s_bar and deviation must have the same shape")
        if np.any(dev < 0):
            raise ValueError("deviation magnitudes must be nonnegative")
        if self.gamma < 0 or self.gamma > len(dev):
            raise ValueError(f"gamma must lie in [0, {len(dev)}]")
        object.__setattr__(self, "s_bar", s_bar)
        object.__setattr__(self, "deviation", dev)

    @classmethod
    def nominal(cls, s_fixed) -> "UncertaintyModel":
        s_fixed = np.asarray(s_fixed, dtype=float)
        return cls(s_fixed, np.zeros_like(s_fixed), 0.0)

    @classmethod
    def proportional(cls, s_fixed, eta: float, gamma: float, q_deviations: bool = True):
        """Deviation bounds ``eta * |s_fixed|``; ``q_deviations=False`` zeroes the reactive half."""
        s_fixed = np.asarray(s_fixed, dtype=float)
        dev = eta * np.abs(s_fixed)
        if not q_deviations:
            dev[len(dev) // 2:] = 0.0
        return cls(s_fixed, dev, min(float(gamma), float(len(dev))))

    @property
    def is_nominal(self) -> bool:
        return self.gamma == 0 or not np.any(self.deviation)


def worst_case_delta(h_row, gamma: float) -> float:
    """max of ``h . zeta`` over ``{|zeta|_inf <= 1, |zeta|_1 <= gamma}``.

    Sum of the ``floor(gamma)`` largest ``|h_j|`` plus the fractional part of
    gamma times the next one.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    mag = np.sort(np.abs(np.asarray(h_row, dtype=float)), kind="stable")[::-1]
    if gamma >= len(mag):
        return float(mag.sum())
    k = int(math.floor(gamma))
    theta = gamma - k
    return float(mag[:k].sum() + theta * mag[k])


def worst_case_deltas(HD: np.ndarray, gamma: float) -> np.ndarray:
    """Row-wise :func:`worst_case_delta` for a matrix ``H diag(deviation)``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    mag = -np.sort(-np.abs(HD), axis=1, kind="stable")
    n = mag.shape[1]
    if gamma >= n:
        return mag.sum(axis=1)
    k = int(math.floor(gamma))
    return mag[:, :k].sum(axis=1) + (gamma - k) * mag[:, k]


@functools.lru_cache(maxsize=256)
def _budget_vertices(n: int, k: int, theta: float) -> np.ndarray:
    signs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n))).reshape(-1, n)
    used = np.count_nonzero(signs, axis=1)
    verts = [signs[used <= k]]
    if theta > 0:
        base = signs[used == k]
        for j in range(n):
            free = base[base[:, j] == 0]
            for sgn in (-1.0, 1.0):
                z = free.copy()
                z[:, j] = sgn * theta
                verts.append(z)
    return np.vstack(verts)


def brute_force_delta(h_row, gamma: float, max_dim: int = 12) -> float:
    """Exact worst case by enumerating the vertices of the budgeted box.

    Vertices have at most ``floor(gamma)`` entries at +-1 and, for
    fractional budgets, one extra entry at +-theta.  Exponential in the
    dimension; a test oracle only.
    """
    h = np.asarray(h_row, dtype=float)
    n = len(h)
    if n > max_dim:
        raise ValueError(f"dimension {n} too large for vertex enumeration (max {max_dim})")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    k = min(int(math.floor(gamma)), n)
    theta = float(gamma - math.floor(gamma)) if gamma < n else 0.0
    return float(np.max(_budget_vertices(n, k, theta) @ h))


def delta_vector(cs: ConstraintSystem, um: UncertaintyModel) -> np.ndarray:
    if um.is_nominal:
        return np.zeros(len(cs))
    return worst_case_deltas(cs.H_fixed * um.deviation[None, :], um.gamma)


def tighten_rhs(cs: ConstraintSystem, um: UncertaintyModel, q) -> np.ndarray:
    """Robust right-hand side ``c - H s_bar - B q - delta(gamma)``."""
    return rhs_b_q(cs, um.s_bar, q) - delta_vector(cs, um)
