"""Convex max-volume DOE design.

Coordinated customers share an ellipsoid ``{W u + center : |u| <= 1}``;
non-coordinated customers each get an interval ``[P-, P+]``.  The design
maximizes ``log det W + sum log(P+ - P-)`` such that every combination of
admissible injections satisfies the (optionally robust-tightened) network
rows.  Reactive setpoints are co-optimized.

All optimization happens in per-unit; :class:`EnvelopeSolution` reports kW.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from .barrier import BarrierError, ConicProblem, NoInterior, solve_conic
from .constraints import ConstraintSystem
from .fairness import FairnessConfig, normalize_weights
from .feeder import Feeder
from .uncertainty import UncertaintyModel, delta_vector

log = logging.getLogger(__name__)
_VERBOSE = False


class DesignError(RuntimeError):
    """Problem construction or solve failure."""


class InfeasibleDesign(DesignError):
    def __init__(self, message, row_tag=None):
        super().__init__(message)
        self.row_tag = row_tag


@dataclass(frozen=True)
class Partition:
    """Column split of the customer nodes.

    ``coordinated`` are the ellipsoid dimensions; ``non_coordinated`` get
    intervals.  Customers with a zero device limit cannot carry an ellipsoid
    axis, so they are always placed in ``non_coordinated`` and pinned at
    ``[0, 0]`` (``active`` is False for them).
    """

    coordinated: np.ndarray
    non_coordinated: np.ndarray
    active: np.ndarray  # over non_coordinated
    customers: np.ndarray

    @classmethod
    def build(cls, feeder: Feeder, coordinated=()) -> "Partition":
        cust = np.sort(feeder.customer_index)
        coordinated = np.asarray(sorted(int(i) for i in coordinated), dtype=int)
        if len(set(coordinated.tolist())) != len(coordinated):
            raise ValueError("duplicate coordinated node")
        if not set(coordinated.tolist()) <= set(cust.tolist()):
            raise ValueError("coordinated set must contain customer nodes only")
        p_max = feeder.p_max
        coord = np.array([i for i in coordinated if p_max[i] > 0], dtype=int)
        non = np.array([i for i in cust if i not in set(coord.tolist())], dtype=int)
        return cls(coord, non, p_max[non] > 0, cust)

    @property
    def n_m(self) -> int:
        return len(self.coordinated)

    @property
    def n_n(self) -> int:
        return len(self.non_coordinated)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    eps_rel: float = 1e-7  # W >= eps_rel * (largest device limit) * I
    solver: str = "barrier"  # or any cvxpy conic solver name, e.g. "CLARABEL"
    verify_tol: float = 1e-6


@dataclass(frozen=True)
class DesignProblem:
    cs: ConstraintSystem
    partition: Partition
    uncertainty: UncertaintyModel
    fairness: FairnessConfig
    options: SolverOptions
    p_max: np.ndarray  # pu, per node
    s_base_kva: float = 1.0
    nominal: bool = False  # build the base problem without directional/fairness blocks

    @property
    def reduces_to_nominal(self) -> bool:
        return self.uncertainty.is_nominal and not self.fairness.active

    @property
    def has_directional(self) -> bool:
        return not self.nominal and self.partition.n_m > 0

    def rhs_constant(self) -> np.ndarray:
        """``c - H s_bar - delta``; the ``- B q`` part is added by the caller."""
        cs = self.cs
        return cs.c - cs.H_fixed @ self.uncertainty.s_bar - delta_vector(cs, self.uncertainty)

    def participant_alphas(self):
        """Normalized (alpha+, alpha-) over non-coordinated customers then the cohort."""
        part = self.partition
        w_plus, w_minus = self.fairness.participant_weights(part.coordinated, part.non_coordinated)
        # pinned customers hold no flexibility and take no share
        pinned = np.r_[~part.active, np.zeros(len(w_plus) - part.n_n, dtype=bool)]
        w_plus, w_minus = np.where(pinned, 0.0, w_plus), np.where(pinned, 0.0, w_minus)
        out = []
        for w, sigma in ((w_plus, self.fairness.sigma_plus), (w_minus, self.fairness.sigma_minus)):
            if w.sum() > 0:
                out.append(normalize_weights(w))
            elif sigma < 1:
                raise ValueError("fairness enabled with all-zero weights")
            else:
                out.append(np.zeros_like(w))
        return out[0], out[1]

    def census(self) -> dict:
        """Constraint counts per family (directional/fairness reported separately)."""
        L = len(self.cs)
        part = self.partition
        out = {
            "robust_rows": L,
            "zero_containment_sign": 2 * part.n_n,
            "zero_containment_rows": L,
            "psd": int(part.n_m > 0),
            "log_terms": int(part.n_m > 0),
            "interval_log_terms": int(part.active.sum()),
        }
        extra = {"directional": 0, "fairness": 0}
        if self.has_directional:
            extra["directional"] = 2 * L + 2
        if not self.nominal:
            n_part = part.n_n + (1 if part.n_m else 0)
            extra["fairness"] = (n_part if self.fairness.sigma_plus < 1 else 0) + \
                                (n_part if self.fairness.sigma_minus < 1 else 0)
        return {"network": out, "extensions": extra}


@dataclass
class EnvelopeSolution:
    """Optimal envelope, reported in kW / kVAr."""

    W: np.ndarray
    center: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    q: np.ndarray  # per customer node, in Partition.customers order
    pm_plus: np.ndarray
    pm_minus: np.ndarray
    objective: float  # in per-unit terms, as optimized
    status: str
    solve_time: float
    coordinated: np.ndarray
    non_coordinated: np.ndarray
    customers: np.ndarray
    s_base_kva: float
    residuals: dict = field(default_factory=dict)

    def pu(self, name):
        return getattr(self, name) / self.s_base_kva

    @property
    def n_m(self):
        return len(self.coordinated)

    def q_nodes(self, n: int) -> np.ndarray:
        """Reactive setpoints scattered to an N-vector (kVAr)."""
        out = np.zeros(n)
        out[self.customers] = self.q
        return out


def build_problem(cs: ConstraintSystem, partition: Partition, uncertainty: UncertaintyModel,
                  fairness: FairnessConfig | None = None, options: SolverOptions | None = None,
                  *, p_max=None, s_base_kva: float = 1.0, nominal: bool = False) -> DesignProblem:
    fairness = fairness or FairnessConfig()
    options = options or SolverOptions()
    n = cs.n
    for idx in (partition.coordinated, partition.non_coordinated):
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise ValueError("partition indices out of range for the constraint system")
    if set(partition.coordinated.tolist()) & set(partition.non_coordinated.tolist()):
        raise ValueError("coordinated and non-coordinated sets overlap")
    if uncertainty.s_bar.shape != (2 * n,):
        raise ValueError("uncertainty model dimension does not match constraint system")
    if nominal and (fairness.active or not uncertainty.is_nominal):
        raise ValueError("the nominal build takes neither uncertainty nor fairness")
    if p_max is None:
        p_max = _box_limits(cs, "p+")
    if partition.n_m == 0 and not np.any(partition.active):
        raise ValueError("no flexible customers to design for")
    dp = DesignProblem(cs, partition, uncertainty, fairness, options, np.asarray(p_max, float),
                       s_base_kva, nominal)
    if not nominal:
        dp.participant_alphas()  # validates weights
    return dp


def _box_limits(cs: ConstraintSystem, label: str) -> np.ndarray:
    lim = np.zeros(cs.n)
    for row, tag in enumerate(cs.tags):
        if tag[0] == "customer" and tag[2] == label:
            lim[tag[1]] = cs.c[row]
    return lim


def presolve_rows(dp: DesignProblem, b0: np.ndarray) -> np.ndarray:
    """Indices of the network rows worth passing to the conic solver.

    Two exact reductions: a row implied by the device box (every feasible
    design lies inside it) is dropped, and rows that coincide after
    normalization keep only the tightest right-hand side.  Duplicate rows
    arise on trunk lines sharing a downstream customer set and make the
    interior-point iterations stall.
    """
    cs, part = dp.cs, dp.partition
    active = part.non_coordinated[part.active]
    cols = np.r_[part.coordinated, active].astype(int)
    H = np.hstack([cs.A[:, cols], cs.B[:, part.customers]])
    lim = np.r_[_box_limits(cs, "p+")[cols], _box_limits(cs, "q+")[part.customers]]
    device = ~cs.network
    norm = np.linalg.norm(H, axis=1)
    keep = _touched_rows(dp) & (norm > 0)
    implied = np.abs(H) @ lim <= b0 - dp.options.tol * np.maximum(1.0, np.abs(b0))
    candidates = np.flatnonzero(keep & ~implied & ~device)
    if len(candidates):
        key = np.round(H[candidates] / norm[candidates, None], 10)
        _, group = np.unique(key, axis=0, return_inverse=True)
        group = group.ravel()
        rhs = b0[candidates] / norm[candidates]
        order = np.lexsort((rhs, group))
        first = np.r_[True, group[order][1:] != group[order][:-1]]
        candidates = np.sort(candidates[order[first]])
    return np.sort(np.r_[candidates, np.flatnonzero(keep & device)]).astype(int)


def _rows(expr, mask):
    return expr[mask] if isinstance(expr, cp.Expression) else expr


def _split(A_N):
    return np.maximum(A_N, 0.0), np.minimum(A_N, 0.0)


def _touched_rows(dp: DesignProblem) -> np.ndarray:
    """Rows that involve at least one free variable (active p column or a q setpoint)."""
    cs, part = dp.cs, dp.partition
    cols = np.r_[part.coordinated, part.non_coordinated[part.active]].astype(int)
    return np.any(cs.A[:, cols] != 0, axis=1) | np.any(cs.B[:, part.customers] != 0, axis=1)


def slater_probe(dp: DesignProblem):
    """Max over q of the smallest slack, at zero flexible injection, among rows with free variables.

    Returns ``(slack, q, row)``; ``row`` indexes the tightest row.
    """
    cs, part = dp.cs, dp.partition
    touched = _touched_rows(dp)
    b0 = dp.rhs_constant()[touched]
    Bq = cs.B[touched][:, part.customers]
    rows = np.flatnonzero(touched)
    nq = Bq.shape[1]
    # variables [q, t]: maximize t s.t. Bq q + t <= b0
    A_ub = np.hstack([Bq, np.ones((len(b0), 1))])
    res = linprog(np.r_[np.zeros(nq), -1.0], A_ub=A_ub, b_ub=b0,
                  bounds=[(None, None)] * nq + [(None, 1.0)], method="highs")
    if res.status != 0:
        return -np.inf, np.zeros(nq), int(rows[np.argmin(b0)])
    q = res.x[:nq]
    slack = b0 - Bq @ q
    return float(res.x[-1]), q, int(rows[np.argmin(slack)])


@dataclass
class _Rows:
    """Presolved, unit-norm network rows: ``A_M x + A_N+ P+ + A_N- P- + Bq q <= b0``."""

    idx: np.ndarray
    b0: np.ndarray
    Bq: np.ndarray
    A_M: np.ndarray
    A_Np: np.ndarray
    A_Nm: np.ndarray

    @property
    def coupled(self) -> np.ndarray:
        return np.any(self.A_M != 0, axis=1)


def _prepare(dp: DesignProblem) -> _Rows:
    cs, part, opts = dp.cs, dp.partition, dp.options
    slack, _, row = slater_probe(dp)
    if slack <= 0:
        raise InfeasibleDesign(
            f"no strictly feasible point: zero injection violates row {cs.tags[row]}", cs.tags[row])
    b0 = dp.rhs_constant()
    touched = _touched_rows(dp)
    if np.any(b0[~touched] < -opts.tol):
        bad = int(np.flatnonzero(~touched)[np.argmin(b0[~touched])])
        raise InfeasibleDesign(f"row {cs.tags[bad]} violated at any design", cs.tags[bad])
    rows = presolve_rows(dp, b0)
    A_M = cs.A[np.ix_(rows, part.coordinated)]
    A_N = cs.A[np.ix_(rows, part.non_coordinated)]
    Bq = cs.B[np.ix_(rows, part.customers)]
    # unit-norm rows; the feasible set is unchanged
    norm = np.linalg.norm(np.hstack([A_M, A_N, Bq]), axis=1)[:, None]
    A_Np, A_Nm = _split(A_N / norm)
    return _Rows(rows, b0[rows] / norm[:, 0], Bq / norm, A_M / norm, A_Np, A_Nm)


def _eps(dp: DesignProblem) -> float:
    scale = float(np.max(dp.p_max)) if np.any(dp.p_max > 0) else 1.0
    return dp.options.eps_rel * scale


class _Layout:
    """Offsets of the barrier variables ``z = [center, P+, P-, q, P_M+, P_M-]``.

    Only active non-coordinated customers carry interval variables.
    """

    def __init__(self, dp: DesignProblem):
        part = dp.partition
        self.n_m = part.n_m
        self.act = np.flatnonzero(part.active)
        n_a, n_q = len(self.act), len(part.customers)
        n_d = part.n_m if dp.has_directional else 0
        sizes = [("center", part.n_m), ("pp", n_a), ("pm", n_a), ("q", n_q), ("pmp", n_d), ("pmm", n_d)]
        self.sl, start = {}, 0
        for name, size in sizes:
            self.sl[name] = slice(start, start + size)
            start += size
        self.nz = start

    def block(self, rows, **parts):
        out = np.zeros((rows, self.nz))
        for name, M in parts.items():
            out[:, self.sl[name]] = M
        return out


def _fairness_rows(dp: DesignProblem, lay: _Layout):
    """Rows ``(1 - sigma) alpha_k F - x_k <= 0`` per direction; equalities at sigma = 0."""
    part = dp.partition
    alpha_p, alpha_m = dp.participant_alphas()
    ineq, eq = [], []
    n_n = part.n_n
    for sigma, alpha, sign, name, cohort in ((dp.fairness.sigma_plus, alpha_p, 1.0, "pp", "pmp"),
                                             (dp.fairness.sigma_minus, alpha_m, -1.0, "pm", "pmm")):
        if sigma >= 1:
            continue
        # x_k as rows over z; pinned customers contribute zero rows
        X = []
        for k in range(n_n):
            r = np.zeros(lay.nz)
            pos = np.flatnonzero(lay.act == k)
            if len(pos):
                r[lay.sl[name].start + pos[0]] = sign
            X.append(r)
        if part.n_m:
            r = np.zeros(lay.nz)
            r[lay.sl[cohort]] = sign
            X.append(r)
        X = np.array(X)
        F = X.sum(axis=0)
        target = eq if sigma == 0 else ineq
        for k in range(len(X)):
            row = (1.0 - sigma) * alpha[k] * F - X[k]
            if np.any(row):  # pinned participants give 0 <= 0
                target.append(row)
    return (np.array(ineq).reshape(-1, lay.nz), np.array(eq).reshape(-1, lay.nz))


def conic_data(dp: DesignProblem, rows: _Rows | None = None):
    """Barrier-form data for ``dp``; returns ``(ConicProblem, layout)``."""
    rows = rows if rows is not None else _prepare(dp)
    part = dp.partition
    lay = _Layout(dp)
    L = len(rows.b0)
    A_Np, A_Nm = rows.A_Np[:, lay.act], rows.A_Nm[:, lay.act]
    box = lay.block(L, pp=A_Np, pm=A_Nm, q=rows.Bq)
    cpl = rows.coupled
    soc_A = [rows.A_M[cpl]]
    soc_G = [box[cpl] + lay.block(int(cpl.sum()), center=rows.A_M[cpl])]
    soc_h = [rows.b0[cpl]]
    lin_G = [box]
    lin_h = [rows.b0]
    n_a = len(lay.act)
    # sign constraints P- <= 0 <= P+
    lin_G += [lay.block(n_a, pp=-np.eye(n_a)), lay.block(n_a, pm=np.eye(n_a))]
    lin_h += [np.zeros(2 * n_a)]
    if dp.has_directional:
        n_m = part.n_m
        lin_G += [box + lay.block(L, pmp=rows.A_M), box + lay.block(L, pmm=rows.A_M)]
        lin_h += [rows.b0, rows.b0]
        ones = np.ones((1, n_m))
        # |W 1| <= 1'P_M+ - 1'center  and  |W 1| <= 1'center - 1'P_M-
        soc_A += [ones, ones]
        soc_G += [lay.block(1, center=ones, pmp=-ones), lay.block(1, center=-ones, pmm=ones)]
        soc_h += [np.zeros(2)]
    E = np.zeros((0, lay.nz))
    if not dp.nominal and dp.fairness.active:
        F_in, F_eq = _fairness_rows(dp, lay)
        lin_G.append(F_in)
        lin_h.append(np.zeros(len(F_in)))
        E = F_eq
    L_log = lay.block(n_a, pp=np.eye(n_a), pm=-np.eye(n_a))
    data = ConicProblem(
        part.n_m, lay.nz,
        A_soc=np.vstack(soc_A), G_soc=np.vstack(soc_G), h_soc=np.concatenate(soc_h),
        G_lin=np.vstack(lin_G), h_lin=np.concatenate(lin_h), L_log=L_log,
        E=E, e=np.zeros(len(E)), eps=_eps(dp))
    return data, lay


def _solve_barrier(dp: DesignProblem, rows: _Rows) -> dict:
    data, lay = conic_data(dp, rows)
    opts = dp.options
    try:
        res = solve_conic(data, tol=opts.tol, max_newton=opts.max_iter)
    except NoInterior as exc:
        raise InfeasibleDesign(f"design problem has no strictly feasible point: {exc}") from exc
    except BarrierError as exc:
        raise DesignError(f"barrier solver failure: {exc}") from exc
    z = res.z
    n_n = dp.partition.n_n
    pp, pm = np.zeros(n_n), np.zeros(n_n)
    pp[lay.act], pm[lay.act] = z[lay.sl["pp"]], z[lay.sl["pm"]]
    return dict(W=res.W, center=z[lay.sl["center"]], pp=pp, pm=pm, q=z[lay.sl["q"]],
                pmp=z[lay.sl["pmp"]], pmm=z[lay.sl["pmm"]], objective=res.objective,
                status="optimal", info={"newton_steps": res.newton_steps,
                                        "gap_bound": res.gap_bound})


def _solve_cvxpy(dp: DesignProblem, rows: _Rows) -> dict:
    part, opts = dp.partition, dp.options
    b0, Bq, A_M, A_Np, A_Nm = rows.b0, rows.Bq, rows.A_M, rows.A_Np, rows.A_Nm
    n_m, n_n = part.n_m, part.n_n
    q = cp.Variable(len(part.customers), name="q")
    b = b0 - Bq @ q
    cons, objective = [], 0

    if n_n:
        pp = cp.Variable(n_n, name="p_plus")
        pm = cp.Variable(n_n, name="p_minus")
        box = A_Np @ pp + A_Nm @ pm
        cons += [pm <= 0, pp >= 0, box <= b]
        inactive = ~part.active
        if np.any(inactive):
            cons += [pp[inactive] == 0, pm[inactive] == 0]
        act = np.flatnonzero(part.active)
        if len(act):
            objective = objective + cp.sum(cp.log(pp[act] - pm[act]))
    else:
        pp = pm = None
        box = 0

    if n_m:
        W = cp.Variable((n_m, n_m), symmetric=True, name="W")
        center = cp.Variable(n_m, name="center")
        cons += [W - _eps(dp) * np.eye(n_m) >> 0]
        coupled = rows.coupled
        cons += [cp.norm(A_M[coupled] @ W, 2, axis=1) + A_M[coupled] @ center
                 + _rows(box, coupled) <= b[coupled]]
        objective = objective + cp.log_det(W)
    else:
        W = center = None

    pmp = pmm = None
    if dp.has_directional:
        pmp = cp.Variable(n_m, name="pm_plus")
        pmm = cp.Variable(n_m, name="pm_minus")
        ones = np.ones(n_m)
        spread = cp.norm(W @ ones, 2)
        cons += [A_M @ pmp + box <= b, A_M @ pmm + box <= b,
                 cp.sum(pmp) >= ones @ center + spread,
                 cp.sum(pmm) <= ones @ center - spread]

    if not dp.nominal and dp.fairness.active:
        alpha_p, alpha_m = dp.participant_alphas()
        parts_p = [pp[i] for i in range(n_n)] if n_n else []
        parts_m = [-pm[i] for i in range(n_n)] if n_n else []
        if n_m:
            parts_p.append(cp.sum(pmp))
            parts_m.append(-cp.sum(pmm))
        F_p, F_m = cp.sum(cp.hstack(parts_p)), cp.sum(cp.hstack(parts_m))
        for sigma, alpha, parts, F in ((dp.fairness.sigma_plus, alpha_p, parts_p, F_p),
                                       (dp.fairness.sigma_minus, alpha_m, parts_m, F_m)):
            if sigma < 1:
                cons += [parts[k] >= (1 - sigma) * alpha[k] * F for k in range(len(parts))]

    prob = cp.Problem(cp.Maximize(objective), cons)
    try:
        prob.solve(solver=opts.solver, verbose=_VERBOSE, **_solver_kwargs(opts))
    except cp.error.SolverError as exc:
        raise DesignError(f"solver failure: {exc}") from exc
    status = prob.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleDesign(f"design problem infeasible ({status})")
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        raise DesignError("design problem unbounded (device limits missing?)")
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise DesignError(f"solver did not converge: {status}")
    val = lambda v: np.zeros(0) if v is None else np.asarray(v.value, dtype=float)  # noqa: E731
    return dict(W=np.zeros((0, 0)) if W is None else 0.5 * (W.value + W.value.T),
                center=val(center), pp=val(pp) if n_n else np.zeros(0),
                pm=val(pm) if n_n else np.zeros(0), q=val(q), pmp=val(pmp), pmm=val(pmm),
                objective=float(prob.value), status=status, info={})


def solve(dp: DesignProblem) -> EnvelopeSolution:
    rows = _prepare(dp)
    t0 = time.perf_counter()
    backend = _solve_barrier if dp.options.solver.lower() == "barrier" else _solve_cvxpy
    out = backend(dp, rows)
    elapsed = time.perf_counter() - t0
    part, s = dp.partition, dp.s_base_kva
    sol = EnvelopeSolution(
        W=out["W"] * s,
        center=out["center"] * s,
        p_plus=out["pp"] * s,
        p_minus=out["pm"] * s,
        q=out["q"] * s,
        pm_plus=out["pmp"] * s,
        pm_minus=out["pmm"] * s,
        objective=out["objective"],
        status=out["status"],
        solve_time=elapsed,
        coordinated=part.coordinated.copy(),
        non_coordinated=part.non_coordinated.copy(),
        customers=part.customers.copy(),
        s_base_kva=s,
    )
    sol.residuals = verify_solution(dp, sol)
    sol.residuals.update(out["info"])
    if sol.status != "optimal":
        log.warning("solver returned %s; max residual %.2e", sol.status, sol.residuals["max_violation"])
    return sol


def _solver_kwargs(opts: SolverOptions) -> dict:
    if opts.solver == "CLARABEL":
        return {"max_iter": opts.max_iter, "tol_gap_abs": opts.tol, "tol_gap_rel": opts.tol,
                "tol_feas": opts.tol}
    if opts.solver == "SCS":
        return {"max_iters": 1000 * opts.max_iter, "eps": opts.tol}
    return {}


def objective_value(sol: EnvelopeSolution, dp: DesignProblem) -> float:
    """Recompute the design objective (per-unit) from a solution."""
    total = 0.0
    if sol.n_m:
        sign, logdet = np.linalg.slogdet(sol.pu("W"))
        total += logdet if sign > 0 else -np.inf
    act = dp.partition.active
    if np.any(act):
        total += float(np.sum(np.log(sol.pu("p_plus")[act] - sol.pu("p_minus")[act])))
    return total


def verify_solution(dp: DesignProblem, sol: EnvelopeSolution) -> dict:
    """Recompute every constraint residual from the solution alone.

    Positive numbers are violations (per-unit).  ``ok`` compares the
    largest one against ``options.verify_tol``.
    """
    cs, part = dp.cs, dp.partition
    W, center = sol.pu("W"), sol.pu("center")
    pp, pm, q = sol.pu("p_plus"), sol.pu("p_minus"), sol.pu("q")
    b = dp.rhs_constant() - cs.B[:, part.customers] @ q
    A_M = cs.A[:, part.coordinated]
    A_Np, A_Nm = _split(cs.A[:, part.non_coordinated])
    box = A_Np @ pp + A_Nm @ pm

    fam = cs.family()
    rep: dict = {}
    if part.n_m:
        ell = np.linalg.norm(A_M @ W, axis=1) + A_M @ center
    else:
        ell = np.zeros(len(cs))
    robust = ell + box - b
    for name in ("voltage", "thermal", "customer"):
        sel = fam == name
        rep[f"rows_{name}"] = float(robust[sel].max()) if np.any(sel) else 0.0
    worst = int(np.argmax(robust))
    rep["worst_row"] = list(cs.tags[worst])
    rep["zero_containment_sign"] = float(max(np.max(pm, initial=0.0), np.max(-pp, initial=0.0)))
    rep["zero_containment_rows"] = float(np.max(box - b))
    pinned = ~part.active
    rep["pinned"] = float(np.max(np.abs(np.r_[pp[pinned], pm[pinned]]), initial=0.0))

    if part.n_m:
        eig = np.linalg.eigvalsh(W)
        rep["psd_min_eig"] = float(eig.min())
        rep["psd_defect"] = bool(eig.min() < -1e-8 * max(np.linalg.norm(W, 2), 1e-300))
    else:
        rep["psd_defect"] = False

    if dp.has_directional:
        pmp, pmm = sol.pu("pm_plus"), sol.pu("pm_minus")
        spread = np.linalg.norm(W @ np.ones(part.n_m))
        rep["directional"] = float(max(np.max(A_M @ pmp + box - b), np.max(A_M @ pmm + box - b)))
        rep["support_dominance"] = float(max(center.sum() + spread - pmp.sum(),
                                             pmm.sum() - (center.sum() - spread)))
    if not dp.nominal and dp.fairness.active:
        rep["fairness"] = fairness_residual(dp, sol)

    keys = [k for k, v in rep.items() if isinstance(v, float) and k != "psd_min_eig"]
    rep["max_violation"] = float(max(rep[k] for k in keys))
    rep["ok"] = bool(rep["max_violation"] <= dp.options.verify_tol and not rep["psd_defect"])
    return rep


def fairness_shares(dp: DesignProblem, sol: EnvelopeSolution):
    """Realized export/import headroom per participant (pu), cohort last."""
    a_plus = list(sol.pu("p_plus"))
    a_minus = list(-sol.pu("p_minus"))
    if sol.n_m:
        a_plus.append(float(sol.pu("pm_plus").sum()))
        a_minus.append(float(-sol.pu("pm_minus").sum()))
    return np.array(a_plus), np.array(a_minus)


def fairness_residual(dp: DesignProblem, sol: EnvelopeSolution) -> float:
    a_plus, a_minus = fairness_shares(dp, sol)
    alpha_p, alpha_m = dp.participant_alphas()
    worst = 0.0
    for sigma, a, alpha in ((dp.fairness.sigma_plus, a_plus, alpha_p),
                            (dp.fairness.sigma_minus, a_minus, alpha_m)):
        if sigma < 1:
            worst = max(worst, float(np.max((1 - sigma) * alpha * a.sum() - a)))
    return worst


def sample_residuals(dp: DesignProblem, sol: EnvelopeSolution, p_flex) -> np.ndarray:
    """``A p + B q - b`` (per-unit) for flexible injections ``p_flex`` of shape (S, N) in pu.

    ``b`` is the robust right-hand side at zero reactive flexibility, so the
    result is the violation of every stacked row with the optimal setpoints.
    """
    cs = dp.cs
    p_flex = np.atleast_2d(np.asarray(p_flex, dtype=float))
    b = dp.rhs_constant() - cs.B[:, dp.partition.customers] @ sol.pu("q")
    return p_flex @ cs.A.T - b
