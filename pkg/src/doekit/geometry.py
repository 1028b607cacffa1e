"""Published coordinated polytope, support functions, volumes and aggregate ranges."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .solver import DesignProblem, EnvelopeSolution, _split


class GeometryError(ValueError):
    pass


class EmptyPolytope(GeometryError):
    pass


class UnboundedPolytope(GeometryError):
    pass


@dataclass(frozen=True)
class Polytope:
    """``{x : F x <= g}``."""

    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        if F.shape[0] != len(g):
            raise GeometryError("facet matrix and offsets disagree in length")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise GeometryError("non-finite polytope data")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.F.shape[1]

    def __len__(self):
        return len(self.g)

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        eye = np.eye(len(lo))
        return cls(np.vstack([eye, -eye]), np.r_[hi, -lo])

    def slack(self, x) -> np.ndarray:
        """``g - F x``; ``x`` may be a single point or an ``(m, n)`` batch."""
        x = np.asarray(x, dtype=float)
        return self.g - x @ self.F.T

    def contains(self, x, tol: float = 1e-9):
        s = self.slack(x)
        return np.all(s >= -tol, axis=-1)

    def reduced(self) -> "Polytope":
        """Drop zero rows and keep the tightest of rows that coincide after normalization."""
        norm = np.linalg.norm(self.F, axis=1)
        zero = norm == 0
        if np.any(self.g[zero] < 0):
            raise EmptyPolytope("a zero row has a negative offset")
        F, g, norm = self.F[~zero], self.g[~zero], norm[~zero]
        if not len(g):
            return Polytope(np.zeros((0, self.n)), np.zeros(0))
        key = np.round(F / norm[:, None], 10)
        _, group = np.unique(key, axis=0, return_inverse=True)
        group = group.ravel()
        rhs = g / norm
        order = np.lexsort((rhs, group))
        first = order[np.r_[True, group[order][1:] != group[order][:-1]]]
        first.sort()
        return Polytope(F[first], g[first])

    def to_document(self) -> dict:
        return {"n": self.n, "F": self.F.tolist(), "g": self.g.tolist()}

    @classmethod
    def from_document(cls, doc) -> "Polytope":
        n = int(doc["n"])
        F = np.asarray(doc["F"], dtype=float).reshape(-1, n)
        return cls(F, doc["g"])


def residual_polytope(dp: DesignProblem, sol: EnvelopeSolution, reduce: bool = True) -> Polytope:
    """Coordinated DOE in kW: ``A_M x <= b_q - A_N+ P+ - A_N- P-``.

    ``b_q`` uses the optimal reactive setpoints and, when enabled, the
    robust tightening, so it is the set the cohort may roam in regardless
    of what the non-coordinated customers do inside their intervals.
    """
    cs, part = dp.cs, dp.partition
    s = sol.s_base_kva
    b = dp.rhs_constant() - cs.B[:, part.customers] @ (sol.q / s)
    if part.n_n:
        A_Np, A_Nm = _split(cs.A[:, part.non_coordinated])
        b = b - A_Np @ (sol.p_plus / s) - A_Nm @ (sol.p_minus / s)
    poly = Polytope(cs.A[:, part.coordinated], b * s)
    if reduce:
        poly = poly.reduced()
    if part.n_m:
        try:
            chebyshev_center(poly)
        except EmptyPolytope as exc:
            raise EmptyPolytope(f"residual polytope is empty: {exc}") from exc
    return poly


def ellipsoid_support(W, center, d):
    """(min, max) of ``d . x`` over ``{W u + center : |u| <= 1}``."""
    W = np.asarray(W, dtype=float)
    d = np.asarray(d, dtype=float)
    mid = float(d @ np.asarray(center, dtype=float))
    half = float(np.linalg.norm(W.T @ d))
    return mid - half, mid + half


def ellipsoid_boundary(W, center, count: int, rng) -> np.ndarray:
    u = rng.standard_normal((count, len(center)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u @ np.asarray(W).T + np.asarray(center)


def ellipsoid_volume(W) -> float:
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if n == 0:
        return 1.0
    sign, logdet = np.linalg.slogdet(W)
    if sign <= 0:
        return 0.0
    return float(math.exp(logdet + 0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1)))


def _lp(c, poly: Polytope, extra_cols: int = 0, A=None, bounds=None):
    res = linprog(c, A_ub=poly.F if A is None else A, b_ub=poly.g,
                  bounds=bounds if bounds is not None else [(None, None)] * (poly.n + extra_cols),
                  method="highs")
    if res.status == 2:
        raise EmptyPolytope("infeasible facet system")
    if res.status == 3:
        raise UnboundedPolytope("polytope unbounded in the requested direction")
    if res.status != 0:
        raise GeometryError(f"LP failure: {res.message}")
    return res


def chebyshev_center(poly: Polytope):
    """Center and radius of the largest inscribed ball (HiGHS LP)."""
    norm = np.linalg.norm(poly.F, axis=1)
    A = np.hstack([poly.F, norm[:, None]])
    c = np.r_[np.zeros(poly.n), -1.0]
    bounds = [(None, None)] * poly.n + [(0, None)]
    res = _lp(c, poly, A=A, bounds=bounds)
    return res.x[:-1], float(res.x[-1])


def bounding_box(poly: Polytope):
    lo, hi = np.empty(poly.n), np.empty(poly.n)
    for j in range(poly.n):
        e = np.zeros(poly.n)
        e[j] = 1.0
        lo[j] = _lp(e, poly).fun
        hi[j] = -_lp(-e, poly).fun
    return lo, hi


def _rejection_volume(poly: Polytope, budget: int, rng, chunk: int = 50_000):
    lo, hi = bounding_box(poly)
    box = float(np.prod(hi - lo))
    if box == 0.0:
        return 0.0, 0.0
    hits, done = 0, 0
    while done < budget:
        m = min(chunk, budget - done)
        x = lo + (hi - lo) * rng.random((m, poly.n))
        hits += int(np.count_nonzero(poly.contains(x, tol=0.0)))
        done += m
    frac = hits / budget
    return box * frac, box * math.sqrt(frac * (1 - frac) / budget)


def _chords(poly: Polytope, X, U, x0, r):
    """Parameter intervals of ``X + t U`` (row-wise) inside the polytope and the ball ``|y - x0| <= r``."""
    FU = U @ poly.F.T
    S = poly.g - X @ poly.F.T
    with np.errstate(divide="ignore", invalid="ignore"):
        T = S / FU
    hi = np.min(np.where(FU > 0, T, np.inf), axis=1)
    lo = np.max(np.where(FU < 0, T, -np.inf), axis=1)
    D = X - x0
    bq = np.einsum("ij,ij->i", U, D)
    root = np.sqrt(np.maximum(bq * bq - (np.einsum("ij,ij->i", D, D) - r * r), 0.0))
    return np.maximum(lo, -bq - root), np.minimum(hi, -bq + root)


def _hit_and_run_volume(poly: Polytope, budget: int, rng, chains: int = 64):
    """Multi-phase estimate over the balls ``r_k = r_0 2^(k/n)`` around the Chebyshev center.

    ``r_0`` is the inscribed radius (ball volume known exactly) and the last
    ball covers the polytope.  Each ratio ``vol(P cap B_k) / vol(P cap B_{k-1})``
    is estimated from thinned hit-and-run chains in ``P cap B_k``; the chains
    are advanced together and carried over from one phase to the next.
    """
    n = poly.n
    x0, r0 = chebyshev_center(poly)
    if r0 <= 0:
        return 0.0, 0.0
    lo, hi = bounding_box(poly)
    corners = np.where(np.abs(lo - x0) > np.abs(hi - x0), lo, hi)
    r_max = float(np.linalg.norm(corners - x0))
    phases = max(1, int(math.ceil(n * math.log2(r_max / r0))))
    radii = r0 * 2.0 ** (np.arange(phases + 1) / n)
    radii[-1] = max(radii[-1], r_max)
    rounds = max(budget // (phases * chains), 4)
    thin = 10 * n
    log_vol = 0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1) + n * math.log(r0)
    rel_var = 0.0
    X = np.repeat(x0[None, :], chains, axis=0)
    for k in range(1, phases + 1):
        inside = 0
        # burn-in so the chains spread into the newly added shell
        for step in range((rounds + 1) * thin):
            U = rng.standard_normal((chains, n))
            U /= np.linalg.norm(U, axis=1, keepdims=True)
            a, b = _chords(poly, X, U, x0, radii[k])
            t = a + np.maximum(b - a, 0.0) * rng.random(chains)
            X = X + np.where(b > a, t, 0.0)[:, None] * U
            if step >= thin:
                # every step counts; the error bar uses the thinned sample size
                inside += int(np.count_nonzero(np.linalg.norm(X - x0, axis=1) <= radii[k - 1]))
        m = rounds * chains
        frac = max(inside, 1) / (m * thin)
        log_vol -= math.log(frac)
        rel_var += (1 - frac) / (frac * m)
    vol = math.exp(log_vol)
    return vol, vol * math.sqrt(rel_var)


def sample_polytope(poly: Polytope, count: int, rng, chains: int = 32, burn_in: int | None = None):
    """Approximately uniform points from hit-and-run chains started at the Chebyshev center."""
    n = poly.n
    if n == 0 or count == 0:
        return np.zeros((count, n))
    x0, r0 = chebyshev_center(poly)
    lo, hi = bounding_box(poly)
    r_max = float(np.linalg.norm(np.maximum(np.abs(lo - x0), np.abs(hi - x0)))) + 1.0
    chains = max(1, min(chains, count))
    thin = 10 * n
    burn_in = 20 * thin if burn_in is None else burn_in
    X = np.repeat(x0[None, :], chains, axis=0)
    out = []
    per_chain = -(-count // chains)
    for step in range(burn_in + per_chain * thin):
        U = rng.standard_normal((chains, n))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        a, b = _chords(poly, X, U, x0, r_max)
        t = a + np.maximum(b - a, 0.0) * rng.random(chains)
        X = X + np.where(b > a, t, 0.0)[:, None] * U
        if step >= burn_in and (step - burn_in + 1) % thin == 0:
            out.append(X.copy())
    return np.vstack(out)[:count]


def sample_ellipsoid(W, center, count: int, rng) -> np.ndarray:
    """Uniform points in ``{W u + center : |u| <= 1}``."""
    center = np.asarray(center, dtype=float)
    n = len(center)
    if n == 0:
        return np.zeros((count, 0))
    u = rng.standard_normal((count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.random((count, 1)) ** (1.0 / n)
    return u @ np.asarray(W, dtype=float).T + center


def sample_box(lo, hi, count: int, rng, corner_share: float = 0.5) -> np.ndarray:
    """Points of ``[lo, hi]``: a ``corner_share`` of random corners, the rest uniform."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    n_corner = int(round(corner_share * count))
    corners = np.where(rng.random((n_corner, len(lo))) < 0.5, lo, hi)
    inner = lo + (hi - lo) * rng.random((count - n_corner, len(lo)))
    return np.vstack([corners, inner])


def pull_inside(poly: Polytope, x, anchor) -> np.ndarray:
    """Shrink ``x`` toward an interior ``anchor`` until every facet holds exactly."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    anchor = np.asarray(anchor, dtype=float)
    if poly.n == 0:
        return x
    s_x, s_a = poly.slack(x), poly.slack(anchor)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(s_x < 0, s_a / (s_a - s_x), 1.0)
    t = np.clip(np.min(t, axis=1, initial=1.0), 0.0, 1.0)
    return anchor + t[:, None] * (x - anchor)


def volume_estimate(poly: Polytope, sample_budget: int = 100_000, seed=0, method: str = "auto"):
    """(volume, standard error).

    Rejection sampling from the tight bounding box for ``n <= 6`` and
    multi-phase hit-and-run otherwise.  Deterministic given ``seed``.
    """
    if sample_budget < 1:
        raise ValueError("sample budget must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if poly.n == 0:
        return 1.0, 0.0
    bounding_box(poly)  # raises when unbounded or empty
    if method == "auto":
        method = "rejection" if poly.n <= 6 else "hit-and-run"
    if method == "rejection":
        return _rejection_volume(poly, sample_budget, rng)
    if method == "hit-and-run":
        return _hit_and_run_volume(poly, sample_budget, rng)
    raise ValueError(f"unknown volume method {method!r}")


def aggregate_range(poly: Polytope | None = None, box=None, direction=None):
    """(F_min, F_max) of ``direction . x`` over the polytope times the boxes.

    ``box`` is ``(P_plus, P_minus)``; its contribution is additive.  With
    the default all-ones direction this is the aggregate injection range.
    """
    f_min = f_max = 0.0
    if poly is not None and poly.n:
        d = np.ones(poly.n) if direction is None else np.asarray(direction, dtype=float)[:poly.n]
        f_min += _lp(d, poly).fun
        f_max += -_lp(-d, poly).fun
    if box is not None:
        pp, pm = (np.asarray(v, dtype=float) for v in box)
        if direction is None:
            f_max += float(pp.sum())
            f_min += float(pm.sum())
        else:
            d = np.asarray(direction, dtype=float)[-len(pp):] if len(pp) else np.zeros(0)
            f_max += float(np.sum(np.maximum(d * pp, d * pm)))
            f_min += float(np.sum(np.minimum(d * pp, d * pm)))
    return float(f_min), float(f_max)


def geometric_mean_size(vol_m: float, vol_n: float, n_act: int) -> float:
    """``(vol_M vol_N)^(1 / n_act)`` in kW."""
    if n_act < 1:
        raise ValueError("n_act must be at least 1")
    if vol_m < 0 or vol_n < 0:
        raise ValueError("volumes must be nonnegative")
    prod = vol_m * vol_n
    return 0.0 if prod == 0 else float(prod ** (1.0 / n_act))
