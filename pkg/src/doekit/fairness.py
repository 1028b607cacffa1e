"""Weight normalization, weight-normalized allocations and the Gini index.

Participants are the individual non-coordinated customers plus the
coordinated cohort counted as *one* participant.  Throughout, the cohort
is stored last in participant vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FairnessConfig:
    """Export/import weights per customer node and the relaxation levels.

    ``omega_plus`` / ``omega_minus`` map node index -> weight.  The cohort
    weights default to the sum over its members when left as ``None``.
    ``sigma = 1`` disables the constraint for that direction.
    """

    sigma_plus: float = 1.0
    sigma_minus: float = 1.0
    omega_plus: dict = field(default_factory=dict)
    omega_minus: dict = field(default_factory=dict)
    omega_group_plus: float | None = None
    omega_group_minus: float | None = None

    def __post_init__(self):
        for s in (self.sigma_plus, self.sigma_minus):
            if not 0.0 <= s <= 1.0:
                raise ValueError("sigma must lie in [0, 1]")
        for w in (*self.omega_plus.values(), *self.omega_minus.values()):
            if w < 0:
                raise ValueError("weights must be nonnegative")

    @property
    def active(self) -> bool:
        return self.sigma_plus < 1.0 or self.sigma_minus < 1.0

    def participant_weights(self, coordinated, non_coordinated):
        """(omega_plus, omega_minus) over ``non_coordinated`` then the cohort.

        The cohort entry is omitted when ``coordinated`` is empty.
        """
        out = []
        for omega, group in ((self.omega_plus, self.omega_group_plus),
                             (self.omega_minus, self.omega_group_minus)):
            w = [float(omega.get(int(i), 0.0)) for i in non_coordinated]
            if len(coordinated):
                w.append(float(group) if group is not None
                         else sum(float(omega.get(int(i), 0.0)) for i in coordinated))
            out.append(np.array(w))
        return out[0], out[1]


def normalize_weights(weights) -> np.ndarray:
    """alpha_k = omega_k / sum(omega)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all-zero weights in an enabled direction")
    return w / total


def weight_normalized_allocations(a_plus, a_minus, alpha_plus, alpha_minus):
    """x_k = (a_k+ + a_k-) / (alpha_k+ + alpha_k-) over participants with nonzero weight.

    ``a_minus`` is the import headroom as a positive number.  Returns
    ``(x, kept)`` where ``kept`` is the boolean mask of retained participants.
    """
    a = np.asarray(a_plus, dtype=float) + np.asarray(a_minus, dtype=float)
    alpha = np.asarray(alpha_plus, dtype=float) + np.asarray(alpha_minus, dtype=float)
    kept = alpha > 0
    if not np.any(kept):
        raise ValueError("no participants with nonzero weight")
    return a[kept] / alpha[kept], kept


def gini(x) -> float:
    """Gini coefficient by the exact double sum."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = x.mean() if n else 0.0
    if mean <= 0:
        raise ValueError("Gini coefficient undefined for zero mean")
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2.0 * n * n * mean))


def split_cohort(total: float, member_weights) -> np.ndarray:
    """Per-member share of a cohort aggregate, proportional to weight (reporting only)."""
    w = np.asarray(member_weights, dtype=float)
    if w.sum() <= 0:
        return np.full(len(w), total / max(len(w), 1))
    return total * w / w.sum()
