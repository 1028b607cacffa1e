"""Nonlinear AC validation of designed envelopes.

A batched backward/forward sweep solves the radial power flow for many
injection samples at once.  Stress samples are drawn from the published
envelope (box corners, LP extremes of the linear voltage and flow maps,
interior points) and the AC extrema are collected in a :class:`StressReport`.

The adversary here maximizes linear-model objectives and evaluates the
resulting points with AC physics; it is weaker than an AC-constrained
nonlinear adversary.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .feeder import Feeder, Sensitivities, build_sensitivities, downstream_matrix
from .geometry import (Polytope, _lp, chebyshev_center, pull_inside, residual_polytope,
                       sample_box, sample_polytope)
from .solver import DesignProblem, EnvelopeSolution

ADVERSARY_NOTE = ("extremes are LP maximizers of linear voltage/flow objectives evaluated "
                  "with AC power flow; this is weaker than an AC-constrained adversary")


@dataclass
class PowerFlowResult:
    """Batched sweep output; arrays are (samples, N)."""

    v2: np.ndarray  # squared voltage magnitude, pu^2
    s_flow: np.ndarray  # complex sending-end power on the line feeding each node, pu
    converged: np.ndarray
    iterations: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.v2)


def ac_power_flow(feeder: Feeder, p_hat, q_hat, tol: float = 1e-9, max_iter: int = 100,
                  M: np.ndarray | None = None) -> PowerFlowResult:
    """Backward/forward sweep with constant-power injections.

    ``p_hat``/``q_hat`` are net injections (pu) of shape (N,) or (S, N).
    Convergence means the largest complex voltage update is below ``tol``.
    """
    p = np.atleast_2d(np.asarray(p_hat, dtype=float))
    q = np.atleast_2d(np.asarray(q_hat, dtype=float))
    if p.shape != q.shape or p.shape[1] != feeder.n:
        raise ValueError("injection arrays must have shape (samples, N)")
    M = downstream_matrix(feeder) if M is None else M
    z = feeder.r + 1j * feeder.x
    V0 = np.sqrt(feeder.v0)
    s = p + 1j * q
    S = len(p)
    V = np.full((S, feeder.n), V0, dtype=complex)
    J = np.zeros_like(V)
    converged = np.zeros(S, dtype=bool)
    iterations = np.full(S, max_iter, dtype=int)
    live = np.arange(S)
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            Vl = V[live]
            Jl = -np.conj(s[live] / Vl) @ M.T  # parent -> child current per line
            Vn = V0 - (Jl * z) @ M
            step = np.max(np.abs(Vn - Vl), axis=1)
            V[live], J[live] = Vn, Jl
            ok = step < tol
            bad = ~np.isfinite(step)
            converged[live[ok]] = True
            iterations[live[ok | bad]] = it
            live = live[~(ok | bad)]
            if not len(live):
                break
    parent = np.asarray(feeder.parent)
    V_up = np.where(parent >= 0, V[:, np.maximum(parent, 0)], V0)
    s_flow = V_up * np.conj(J)
    return PowerFlowResult(np.abs(V) ** 2, s_flow, converged, iterations)


@dataclass
class StressSamples:
    """Injection samples in pu; ``p_flex`` is the envelope part, ``p_hat`` adds fixed loads."""

    p_flex: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray
    kind: np.ndarray

    def __len__(self):
        return len(self.kind)

    def census(self) -> dict:
        names, counts = np.unique(self.kind, return_counts=True)
        return {str(k): int(c) for k, c in zip(names, counts)}


def _extreme_point(poly: Polytope, d, anchor):
    if poly.n == 0 or not np.any(d):
        return anchor.copy()
    x = _lp(-np.asarray(d, dtype=float), poly).x
    return pull_inside(poly, x, anchor)[0]


def stress_sample(dp: DesignProblem, sol: EnvelopeSolution, sens: Sensitivities | None = None,
                  poly: Polytope | None = None, strategy=("corners", "extremes", "interior"),
                  seed=0, count: int = 1000, q_mode: str = "setpoint", q_max=None,
                  exact_corners: int = 12) -> StressSamples:
    """Envelope-admissible injections for the AC stress test.

    ``count`` is split between random corners and interior points; corner
    enumeration is exhaustive when at most ``exact_corners`` intervals are
    active.  Extremes are one LP per objective: max and min of every row of
    ``R`` (node voltages) and of ``M`` (line flows).  ``q_mode='corners'``
    replaces the reactive setpoints by random ``+-q_max`` (pu, per node).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if sens is None:
        raise ValueError("stress sampling needs the feeder sensitivities")
    part, s = dp.partition, sol.s_base_kva
    n = dp.cs.n
    poly = residual_polytope(dp, sol) if poly is None else poly
    coord, non = part.coordinated, part.non_coordinated
    act = part.active
    lo, hi = sol.p_minus.copy(), sol.p_plus.copy()  # kW
    anchor = chebyshev_center(poly)[0] if part.n_m else np.zeros(0)
    x_max = _extreme_point(poly, np.ones(part.n_m), anchor)
    x_min = _extreme_point(poly, -np.ones(part.n_m), anchor)

    blocks_m, blocks_n, kinds = [], [], []

    def add(xm, xn, kind):
        xm, xn = np.atleast_2d(xm), np.atleast_2d(xn)
        rows = max(len(xm), len(xn))
        blocks_m.append(np.broadcast_to(xm, (rows, part.n_m)))
        blocks_n.append(np.broadcast_to(xn, (rows, part.n_n)))
        kinds.extend([kind] * rows)

    n_rand = count // 2 if "interior" in strategy else count
    if "corners" in strategy and part.n_n:
        k = int(act.sum())
        if k <= exact_corners:
            signs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=bool)
        else:
            signs = rng.random((n_rand, k)) < 0.5
        corners = np.zeros((len(signs), part.n_n))
        corners[:, act] = np.where(signs, hi[act], lo[act])
        up = corners.sum(axis=1) >= 0
        add(np.where(up[:, None], x_max, x_min), corners, "corner")

    if "extremes" in strategy:
        objectives = [(sens.R[i], "voltage") for i in range(n)] + \
                     [(sens.M[l], "flow") for l in range(n)]
        for row, tag in objectives:
            for sign, suffix in ((1.0, "max"), (-1.0, "min")):
                d = sign * row
                xm = _extreme_point(poly, d[coord], anchor)
                dn = d[non]
                xn = np.where(dn > 0, hi, np.where(dn < 0, lo, 0.0))
                add(xm, xn, f"{tag}-{suffix}")

    if "interior" in strategy:
        m = count - n_rand if "corners" in strategy else count
        xm = sample_polytope(poly, m, rng) if part.n_m else np.zeros((m, 0))
        xn = sample_box(lo, hi, m, rng, corner_share=0.0) if part.n_n else np.zeros((m, 0))
        add(xm, xn, "interior")

    XM = np.vstack(blocks_m) if blocks_m else np.zeros((0, part.n_m))
    XN = np.vstack(blocks_n) if blocks_n else np.zeros((0, part.n_n))
    S = len(XN)
    p_flex = np.zeros((S, n))
    p_flex[:, coord] = XM / s
    p_flex[:, non] = XN / s
    q_set = sol.q_nodes(n) / s
    if q_mode == "setpoint":
        q_flex = np.tile(q_set, (S, 1))
    elif q_mode == "corners":
        if q_max is None:
            raise ValueError("q_mode='corners' needs q_max")
        q_flex = np.where(rng.random((S, n)) < 0.5, -1.0, 1.0) * np.asarray(q_max, dtype=float)
    else:
        raise ValueError(f"unknown q_mode {q_mode!r}")
    s_bar = dp.uncertainty.s_bar
    p_hat = p_flex + s_bar[:n]
    q_hat = q_flex + s_bar[n:]
    return StressSamples(p_flex, p_hat, q_hat, np.array(kinds))


@dataclass
class StressReport:
    """AC extrema over converged samples; voltages in pu magnitude, loading as a fraction of rating."""

    v_min: np.ndarray
    v_max: np.ndarray
    loading_max: np.ndarray
    worst: dict
    census: dict
    convergence: dict
    linear_error: dict
    v_band: tuple = (0.95, 1.05)
    note: str = ADVERSARY_NOTE
    nodes: tuple = ()
    lines: tuple = field(default=())

    def within(self, v_slack: float = 0.005, loading_cap: float = 1.01) -> bool:
        lo, hi = self.v_band
        return bool(self.v_min.min() >= lo - v_slack and self.v_max.max() <= hi + v_slack
                    and self.loading_max.max() <= loading_cap)

    def to_document(self) -> dict:
        return {
            "note": self.note,
            "v_band": list(self.v_band),
            "worst": self.worst,
            "census": self.census,
            "convergence": self.convergence,
            "linear_error": self.linear_error,
            "nodes": [{"node": nd, "v_min": float(a), "v_max": float(b)}
                      for nd, a, b in zip(self.nodes, self.v_min, self.v_max)],
            "lines": [{"from": ln[0], "to": ln[1], "loading_max": float(u)}
                      for ln, u in zip(self.lines, self.loading_max)],
        }


def stress_report(feeder: Feeder, samples: StressSamples, sens: Sensitivities | None = None,
                  v_band=(0.95, 1.05), tol: float = 1e-9, max_iter: int = 100) -> StressReport:
    sens = build_sensitivities(feeder) if sens is None else sens
    pf = ac_power_flow(feeder, samples.p_hat, samples.q_hat, tol=tol, max_iter=max_iter, M=sens.M)
    ok = pf.converged
    if not np.any(ok):
        raise RuntimeError("no stress sample converged")
    v = pf.v[ok]
    load = np.abs(pf.s_flow[ok]) / feeder.s_max
    v_min, v_max, load_max = v.min(axis=0), v.max(axis=0), load.max(axis=0)
    lo, hi = v_band
    worst = {
        "undervoltage": float(max(0.0, lo - v_min.min())),
        "overvoltage": float(max(0.0, v_max.max() - hi)),
        "overload": float(max(0.0, load_max.max() - 1.0)),
        "v_min": float(v_min.min()),
        "v_max": float(v_max.max()),
        "loading_max": float(load_max.max()),
    }
    v_lin = samples.p_hat[ok] @ sens.R.T + samples.q_hat[ok] @ sens.X.T + sens.v0
    v_lin = np.sqrt(np.maximum(v_lin, 0.0))
    err = np.abs(v_lin - v)
    linear_error = {"median": float(np.median(err)), "max": float(err.max())}
    convergence = {
        "converged": int(ok.sum()),
        "non_converged": np.flatnonzero(~ok).tolist(),
        "max_iterations": int(pf.iterations[ok].max()),
    }
    census = {"total": len(samples), **samples.census()}
    return StressReport(v_min, v_max, load_max, worst, census, convergence, linear_error,
                        tuple(v_band), ADVERSARY_NOTE, feeder.nodes,
                        tuple((ln.from_node, ln.to_node) for ln in feeder.lines))
