"""Stacked half-space description ``A p_hat + B q_hat <= c`` of the feasible injections."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .feeder import Feeder, Sensitivities

DEFAULT_RHO = 8


@dataclass(frozen=True)
class Rows:
    """A block of constraint rows with one provenance tag per row."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    tags: tuple

    def __len__(self):
        return len(self.c)


@dataclass(frozen=True)
class ConstraintSystem:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    tags: tuple

    @property
    def H(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @property
    def network(self) -> np.ndarray:
        """Rows through which fixed injections act (voltage and thermal)."""
        return np.array([t[0] != "customer" for t in self.tags])

    @property
    def H_fixed(self) -> np.ndarray:
        """``H`` with device rows zeroed: device limits bound the flexible part only."""
        return self.H * self.network[:, None]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def __len__(self):
        return len(self.c)

    def family(self) -> np.ndarray:
        """Constraint family per row: 'voltage', 'thermal' or 'customer'."""
        return np.array([t[0].split("-")[0] for t in self.tags])

    def violation(self, p_hat, q_hat) -> np.ndarray:
        return self.A @ p_hat + self.B @ q_hat - self.c

    def to_document(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "c": self.c.tolist(),
                "tags": [list(t) for t in self.tags]}

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_document(), fh)


def voltage_rows(sens: Sensitivities, v_min, v_max) -> Rows:
    n = sens.R.shape[0]
    v_min = np.broadcast_to(np.asarray(v_min, dtype=float), (n,))
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (n,))
    if np.any(v_min >= v_max):
        raise ValueError("inverted voltage bounds (v_min >= v_max)")
    if np.any(sens.v0 < v_min) or np.any(sens.v0 > v_max):
        raise ValueError("slack voltage outside the voltage band")
    A = np.vstack([sens.R, -sens.R])
    B = np.vstack([sens.X, -sens.X])
    c = np.concatenate([v_max - sens.v0, sens.v0 - v_min])
    tags = tuple(("voltage-upper", i) for i in range(n)) + tuple(("voltage-lower", i) for i in range(n))
    return Rows(A, B, c, tags)


def thermal_rows(sens: Sensitivities, s_max, rho: int = DEFAULT_RHO) -> Rows:
    """Inscribed 2*rho-gon for each line's apparent-power disc.

    Facet normals sit at angles ``pi r / rho``; the offset ``S cos(pi / 2 rho)``
    places the vertices on the circle, so the polygon lies inside the disc.
    """
    if rho < 2:
        raise ValueError("rho must be >= 2")
    M = sens.M
    n_lines = M.shape[0]
    s_max = np.broadcast_to(np.asarray(s_max, dtype=float), (n_lines,))
    theta = np.pi * np.arange(2 * rho) / rho
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    shrink = math.cos(math.pi / (2 * rho))
    # row order: line-major, facet-minor
    A = (cos_t[None, :, None] * M[:, None, :]).reshape(-1, M.shape[1])
    B = (sin_t[None, :, None] * M[:, None, :]).reshape(-1, M.shape[1])
    c = np.repeat(s_max * shrink, 2 * rho)
    tags = tuple(("thermal", l, r) for l in range(n_lines) for r in range(2 * rho))
    return Rows(A, B, c, tags)


def customer_rows(feeder: Feeder, extra: dict | None = None) -> Rows:
    """Device boxes ``|p_i| <= p_max, |q_i| <= q_max`` at every node.

    Nodes without a customer get zero limits, i.e. their flexible injection
    is pinned at 0 by a pair of opposing rows.  ``extra`` maps node index to
    additional ``(a_p, a_q, rhs)`` facets on the customer's flexible (p, q).
    """
    n = feeder.n
    p_max, q_max = feeder.p_max, feeder.q_max
    A_rows, B_rows, c, tags = [], [], [], []
    eye = np.eye(n)
    for i in range(n):
        facets = [(1.0, 0.0, p_max[i], "p+"), (-1.0, 0.0, p_max[i], "p-"),
                  (0.0, 1.0, q_max[i], "q+"), (0.0, -1.0, q_max[i], "q-")]
        for k, (ap, aq, rhs) in enumerate((extra or {}).get(i, ())):
            facets.append((ap, aq, rhs, f"extra{k}"))
        for ap, aq, rhs, label in facets:
            A_rows.append(ap * eye[i])
            B_rows.append(aq * eye[i])
            c.append(rhs)
            tags.append(("customer", i, label))
    return Rows(np.array(A_rows), np.array(B_rows), np.array(c), tuple(tags))


def assemble(*blocks: Rows) -> ConstraintSystem:
    widths = {b.A.shape[1] for b in blocks} | {b.B.shape[1] for b in blocks}
    if len(widths) != 1:
        raise ValueError(f"column dimension mismatch across blocks: {sorted(widths)}")
    return ConstraintSystem(
        np.vstack([b.A for b in blocks]),
        np.vstack([b.B for b in blocks]),
        np.concatenate([b.c for b in blocks]),
        tuple(t for b in blocks for t in b.tags),
    )


def build_constraints(feeder: Feeder, sens: Sensitivities, v_band=(0.95, 1.05),
                      rho: int = DEFAULT_RHO) -> ConstraintSystem:
    """All three families for a feeder; ``v_band`` is in pu magnitude (squared internally)."""
    lo, hi = v_band
    return assemble(voltage_rows(sens, lo ** 2, hi ** 2),
                    thermal_rows(sens, feeder.s_max, rho),
                    customer_rows(feeder))


def rhs_b_q(cs: ConstraintSystem, s_fixed, q) -> np.ndarray:
    """Right-hand side ``c - H s_fixed - B q`` for the flexible active power.

    Device rows see only the flexible injection, so ``s_fixed`` enters
    through the network rows.
    """
    s_fixed = np.asarray(s_fixed, dtype=float)
    q = np.asarray(q, dtype=float)
    if s_fixed.shape != (2 * cs.n,) or q.shape != (cs.n,):
        raise ValueError("dimension mismatch in rhs_b_q")
    return cs.c - cs.H_fixed @ s_fixed - cs.B @ q
