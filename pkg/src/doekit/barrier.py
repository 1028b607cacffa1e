"""Path-following barrier method for the max-volume envelope problem.

Solves

    maximize    log det W + sum_k log (L z)_k
    subject to  |W a_l| <= h_l - g_l . z      (second-order cone rows)
                G z <= h                      (linear rows)
                E z = e
                W >= eps I

over a symmetric ``W`` (stored by its lower triangle) and a vector ``z``.
Hessians of the log-det and cone terms are assembled in closed form in
lower-triangle coordinates, so one Newton step costs a dense Cholesky
factorization of order ``n(n+1)/2 + len(z)``.  A strictly feasible start
comes from an LP with ``W`` restricted to multiples of the identity.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

log = logging.getLogger(__name__)


class BarrierError(RuntimeError):
    pass


class NoInterior(BarrierError):
    """The constraint set has no strictly feasible point."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def _empty(rows, cols):
    return np.zeros((rows, cols))


@dataclass
class ConicProblem:
    n: int
    nz: int
    A_soc: np.ndarray = None
    G_soc: np.ndarray = None
    h_soc: np.ndarray = None
    G_lin: np.ndarray = None
    h_lin: np.ndarray = None
    L_log: np.ndarray = None
    E: np.ndarray = None
    e: np.ndarray = None
    eps: float = 0.0

    def __post_init__(self):
        n, nz = self.n, self.nz
        if self.A_soc is None:
            self.A_soc, self.G_soc, self.h_soc = _empty(0, n), _empty(0, nz), np.zeros(0)
        if self.G_lin is None:
            self.G_lin, self.h_lin = _empty(0, nz), np.zeros(0)
        if self.L_log is None:
            self.L_log = _empty(0, nz)
        if self.E is None:
            self.E, self.e = _empty(0, nz), np.zeros(0)
        for name, M, cols in (("A_soc", self.A_soc, n), ("G_soc", self.G_soc, nz),
                              ("G_lin", self.G_lin, nz), ("L_log", self.L_log, nz), ("E", self.E, nz)):
            if M.ndim != 2 or M.shape[1] != cols:
                raise ValueError(f"{name} must have {cols} columns")
        if not (len(self.A_soc) == len(self.G_soc) == len(self.h_soc)):
            raise ValueError("cone row blocks disagree in length")
        if len(self.G_lin) != len(self.h_lin) or len(self.E) != len(self.e):
            raise ValueError("linear row blocks disagree in length")

    @property
    def nu(self) -> float:
        """Barrier parameter: 2 per cone row, 1 per linear row, n for the PSD bound."""
        return 2.0 * len(self.h_soc) + len(self.h_lin) + self.n


@dataclass
class BarrierResult:
    W: np.ndarray
    z: np.ndarray
    objective: float
    gap_bound: float
    newton_steps: int
    outer_steps: int
    solve_time: float
    status: str
    history: list = field(default_factory=list)


class _Sym:
    """Lower-triangle coordinates of symmetric n x n matrices."""

    def __init__(self, n):
        self.n = n
        self.I, self.J = np.tril_indices(n)
        self.off = (self.I != self.J).astype(float)
        self.nw = len(self.I)

    def mat(self, w):
        W = np.zeros((self.n, self.n))
        W[self.I, self.J] = w
        W[self.J, self.I] = w
        return W

    def vec(self, W):
        return W[self.I, self.J].copy()

    def grad(self, Gm):
        """Coordinates of ``sum_ab Gm[a,b] dW[a,b]`` as a linear form in the lower triangle."""
        return Gm[self.I, self.J] + self.off * Gm[self.J, self.I]

    def hess_kk(self, K):
        """Quadratic form ``tr(K dW K dW)`` for symmetric K."""
        I, J, off = self.I, self.J, self.off
        T1 = K[I][:, J] * K[J][:, I]
        T2 = K[I][:, I] * K[J][:, J]
        mp, mq = off[:, None], off[None, :]
        return T1 * (1.0 + mp * mq) + T2 * (mp + mq)

    def hess_kron(self, S):
        """Quadratic form ``tr(dW S dW^T)`` for symmetric S."""
        I, J, off = self.I, self.J, self.off
        dII = (I[:, None] == I[None, :]).astype(float)
        dIJ = (I[:, None] == J[None, :]).astype(float)
        dJI = (J[:, None] == I[None, :]).astype(float)
        dJJ = (J[:, None] == J[None, :]).astype(float)
        mp, mq = off[:, None], off[None, :]
        return (S[J][:, J] * dII + mq * S[J][:, I] * dIJ
                + mp * S[I][:, J] * dJI + mp * mq * S[I][:, I] * dJJ)


class _Evaluator:
    def __init__(self, cp: ConicProblem):
        self.cp = cp
        self.sym = _Sym(cp.n)
        self.soc_norm = np.linalg.norm(cp.A_soc, axis=1)

    def split(self, x):
        nw = self.sym.nw
        return self.sym.mat(x[:nw]), x[nw:]

    def pieces(self, x):
        """Slack quantities, or ``None`` outside the domain."""
        cp = self.cp
        W, z = self.split(x)
        if cp.n:
            try:
                Lw = np.linalg.cholesky(W - cp.eps * np.eye(cp.n))
            except np.linalg.LinAlgError:
                return None
            Lw0 = np.linalg.cholesky(W)
        else:
            Lw = Lw0 = np.zeros((0, 0))
        t = cp.h_soc - cp.G_soc @ z
        Y = cp.A_soc @ W
        s = t * t - np.einsum("ij,ij->i", Y, Y)
        sl = cp.h_lin - cp.G_lin @ z
        lz = cp.L_log @ z
        if np.any(t <= 0) or np.any(s <= 0) or np.any(sl <= 0) or np.any(lz <= 0):
            return None
        return dict(W=W, z=z, Lw=Lw, Lw0=Lw0, t=t, Y=Y, s=s, sl=sl, lz=lz)

    def max_step(self, p, d, keep: float) -> float:
        """Largest step along ``d`` leaving every slack above ``keep`` times its current value."""
        cp, sym = self.cp, self.sym
        dW, dz = sym.mat(d[:sym.nw]), d[sym.nw:]
        steps = [np.inf]

        def ratio(slack, rate):
            # slack - a * rate >= keep * slack
            shrink = rate > 0
            if np.any(shrink):
                steps.append(float(np.min((1.0 - keep) * slack[shrink] / rate[shrink])))

        ratio(p["sl"], cp.G_lin @ dz)
        ratio(p["lz"], -(cp.L_log @ dz))
        if len(p["s"]):
            dt = -(cp.G_soc @ dz)
            dY = cp.A_soc @ dW
            ratio(p["t"], -dt)
            # s(a) = s + 2 a (t dt - y.dy) + a^2 (dt^2 - |dy|^2) >= keep^2 s
            c0 = (1.0 - keep ** 2) * p["s"]
            c1 = 2.0 * (p["t"] * dt - np.einsum("ij,ij->i", p["Y"], dY))
            c2 = dt * dt - np.einsum("ij,ij->i", dY, dY)
            steps.append(_first_root(c2, c1, c0))
        if cp.n:
            Linv = sla.solve_triangular(p["Lw"], np.eye(cp.n), lower=True)
            ev = np.linalg.eigvalsh(Linv @ dW @ Linv.T)
            if ev[0] < 0:
                steps.append((1.0 - keep) / -ev[0])
        return max(min(steps), 0.0)

    @staticmethod
    def objective(p) -> float:
        """log det W + sum log(Lz)."""
        return float(2.0 * np.sum(np.log(np.diag(p["Lw0"]))) + np.sum(np.log(p["lz"])))

    def value(self, p, tau) -> float:
        barrier = (-np.sum(np.log(p["s"])) - np.sum(np.log(p["sl"]))
                   - 2.0 * np.sum(np.log(np.diag(p["Lw"]))))
        return float(-tau * self.objective(p) + barrier)

    def derivatives(self, p, tau):
        cp, sym = self.cp, self.sym
        nw, nz = sym.nw, cp.nz
        g = np.zeros(nw + nz)
        g_obj = np.zeros(nw + nz)  # gradient of -(log det W + sum log Lz)
        H = np.zeros((nw + nz, nw + nz))
        gw, gz = g[:nw], g[nw:]
        Hww, Hwz, Hzz = H[:nw, :nw], H[:nw, nw:], H[nw:, nw:]

        if cp.n:
            K = sla.cho_solve((p["Lw0"], True), np.eye(cp.n))
            Ke = sla.cho_solve((p["Lw"], True), np.eye(cp.n))
            g_obj[:nw] = -sym.grad(K)
            gw += tau * g_obj[:nw] - sym.grad(Ke)
            Hww += tau * sym.hess_kk(K) + sym.hess_kk(Ke)

        if len(p["s"]):
            A, G, t, Y, s = cp.A_soc, cp.G_soc, p["t"], p["Y"], p["s"]
            if cp.n:
                gw += sym.grad(Y.T @ (A * (2.0 / s)[:, None]))
                U = Y[:, sym.I] * A[:, sym.J] + sym.off * Y[:, sym.J] * A[:, sym.I]
                Hww += sym.hess_kron(A.T @ (A * (2.0 / s)[:, None]))
                Us = U * (4.0 / s ** 2)[:, None]
                Hww += U.T @ Us
                Hwz += Us.T @ (G * t[:, None])
            gz += G.T @ (2.0 * t / s)
            Hzz += G.T @ (G * (4.0 * t * t / s ** 2 - 2.0 / s)[:, None])

        if len(p["sl"]):
            G, sl = cp.G_lin, p["sl"]
            gz += G.T @ (1.0 / sl)
            Hzz += G.T @ (G / (sl ** 2)[:, None])

        if len(p["lz"]):
            L, lz = cp.L_log, p["lz"]
            g_obj[nw:] = -(L.T @ (1.0 / lz))
            gz += tau * g_obj[nw:]
            Hzz += tau * (L.T @ (L / (lz ** 2)[:, None]))

        H[nw:, :nw] = Hwz.T
        return g, H, g_obj


def _first_root(c2, c1, c0) -> float:
    """Smallest positive ``a`` with ``c0 + c1 a + c2 a^2 = 0`` over rows (``c0 > 0``)."""
    best = np.inf
    lin = np.abs(c2) < 1e-300
    neg = lin & (c1 < 0)
    if np.any(neg):
        best = min(best, float(np.min(-c0[neg] / c1[neg])))
    q = ~lin
    if np.any(q):
        disc = c1[q] ** 2 - 4.0 * c2[q] * c0[q]
        real = disc >= 0
        if np.any(real):
            sq = np.sqrt(disc[real])
            a, b = c2[q][real], c1[q][real]
            # numerically stable pair of roots
            qq = -0.5 * (b + np.copysign(sq, b))
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = qq / a
                r2 = c0[q][real] / qq
            roots = np.concatenate([r1, r2])
            roots = roots[np.isfinite(roots) & (roots > 0)]
            if len(roots):
                best = min(best, float(np.min(roots)))
    return best


def _newton_direction(H, g, E):
    """Equality-constrained Newton step ``H d = -g - E^T y, E d = 0``."""
    n = len(g)
    scale = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / scale[:, None] / scale[None, :]
    gs = g / scale
    reg = 0.0
    for _ in range(8):
        try:
            factor = sla.cho_factor(Hs + reg * np.eye(n), lower=True, check_finite=False)
            break
        except np.linalg.LinAlgError:
            reg = 1e-12 if reg == 0.0 else reg * 100.0
    else:
        raise BarrierError("Newton system is not positive definite")
    d = -sla.cho_solve(factor, gs, check_finite=False)
    if len(E):
        Es = E / scale[None, :]
        HiE = sla.cho_solve(factor, Es.T, check_finite=False)
        y = np.linalg.lstsq(Es @ HiE, Es @ d, rcond=None)[0]
        d = d - HiE @ y
    return d / scale


def _row_basis(E, e, tol=1e-10):
    """Orthonormal rows spanning the equality system, or raise when inconsistent."""
    if not len(E):
        return E, e
    U, S, Vt = np.linalg.svd(E, full_matrices=False)
    r = int(np.sum(S > tol * max(S[0], 1.0)))
    E2 = Vt[:r]
    e2 = (U[:, :r].T @ e) / S[:r]
    if np.linalg.norm(E @ (E2.T @ e2) - e) > 1e-8 * max(1.0, np.linalg.norm(e)):
        raise NoInterior("inconsistent equality constraints")
    return E2, e2


def _drop_constant_rows(cp: ConicProblem, E2, e2):
    """Remove linear rows and log terms that are constant on ``{E z = e}``.

    Such rows hold with equality everywhere (or nowhere), so they carry no
    interior; a constant log term is reported because it pins the objective.
    """
    if not len(E2):
        return cp, []
    z0 = E2.T @ e2

    def constant(rows):
        if not len(rows):
            return np.zeros(0, dtype=bool)
        resid = rows - (rows @ E2.T) @ E2
        return np.linalg.norm(resid, axis=1) <= 1e-9 * np.maximum(1.0, np.linalg.norm(rows, axis=1))

    lin_const = constant(cp.G_lin)
    bad = lin_const & (cp.G_lin @ z0 > cp.h_lin + 1e-9)
    if np.any(bad):
        raise NoInterior("a linear row is violated on the equality subspace",
                         int(np.flatnonzero(bad)[0]))
    log_const = constant(cp.L_log)
    dropped_logs = list(np.flatnonzero(log_const))
    out = ConicProblem(cp.n, cp.nz, cp.A_soc, cp.G_soc, cp.h_soc,
                       cp.G_lin[~lin_const], cp.h_lin[~lin_const],
                       cp.L_log[~log_const], E2, e2, cp.eps)
    return out, dropped_logs


def strict_start(cp: ConicProblem, cap: float = 1.0):
    """Strictly feasible ``(W, z)`` with ``W`` a multiple of the identity (HiGHS LP).

    Maximizes the smallest slack ``m``; returns ``(W, z, m)``.  ``m <= 0``
    means the interior is empty.
    """
    nz = cp.nz
    # variables [z, omega, m]
    blocks, rhs = [], []
    if len(cp.h_soc):
        blocks.append(np.hstack([cp.G_soc, np.linalg.norm(cp.A_soc, axis=1)[:, None],
                                 np.ones((len(cp.h_soc), 1))]))
        rhs.append(cp.h_soc)
    if len(cp.h_lin):
        blocks.append(np.hstack([cp.G_lin, np.zeros((len(cp.h_lin), 1)), np.ones((len(cp.h_lin), 1))]))
        rhs.append(cp.h_lin)
    if len(cp.L_log):
        blocks.append(np.hstack([-cp.L_log, np.zeros((len(cp.L_log), 1)), np.ones((len(cp.L_log), 1))]))
        rhs.append(np.zeros(len(cp.L_log)))
    if cp.n:
        blocks.append(np.r_[np.zeros(nz), -1.0, 1.0][None, :])
        rhs.append(np.array([-cp.eps]))
    A_ub = np.vstack(blocks) if blocks else None
    b_ub = np.concatenate(rhs) if rhs else None
    A_eq = np.hstack([cp.E, np.zeros((len(cp.e), 2))]) if len(cp.e) else None
    b_eq = cp.e if len(cp.e) else None
    bounds = [(None, None)] * nz + [(0.0, None) if cp.n else (0.0, 0.0), (None, cap)]
    c = np.zeros(nz + 2)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise NoInterior(f"phase-one LP failed: {res.message}")
    z, omega, m = res.x[:nz], res.x[nz], res.x[nz + 1]
    return omega * np.eye(cp.n), z, float(m)


def solve_conic(cp: ConicProblem, tol: float = 1e-8, max_newton: int = 400, mu: float = 50.0,
                tau0: float = 1.0, center_tol: float = 1e-6, keep: float = 0.1,
                predict_keep: float = 0.5) -> BarrierResult:
    """Barrier method; stops when the duality-gap bound ``nu / tau`` drops below ``tol``."""
    t_start = time.perf_counter()
    E2, e2 = _row_basis(cp.E, cp.e)
    work, dropped = _drop_constant_rows(cp, E2, e2)
    if dropped:
        raise NoInterior("an objective interval is pinned to zero by the equality constraints",
                         int(dropped[0]))
    W0, z0, margin = strict_start(work)
    if margin <= 1e-12:
        raise NoInterior(f"no strictly feasible point (phase-one margin {margin:.3e})")

    ev = _Evaluator(work)
    x = np.r_[ev.sym.vec(W0), z0]
    Efull = np.hstack([np.zeros((len(work.e), ev.sym.nw)), work.E]) if len(work.e) else np.zeros((0, len(x)))
    p = ev.pieces(x)
    if p is None:
        raise BarrierError("phase-one point outside the barrier domain")
    nu = max(work.nu, 1.0)
    tau = tau0
    steps = outer = 0
    history = []
    while True:
        outer += 1
        # centering; an off-center point adds about lam2 / tau to the gap
        recent = []
        while True:
            g, H, g_obj = ev.derivatives(p, tau)
            d = _newton_direction(H, g, Efull)
            lam2 = float(-g @ d)
            if lam2 / 2.0 <= min(max(center_tol, 0.01 * tol * tau), 1e-2):
                break
            recent.append(lam2)
            if len(recent) > 5 and lam2 < 1.0 and lam2 > 0.5 * min(recent[-6:-1]):
                break  # round-off floor: no further progress in the decrement
            steps += 1
            if steps > max_newton:
                raise BarrierError(f"no convergence within {max_newton} Newton steps")
            f0 = ev.value(p, tau)
            alpha = min(1.0, ev.max_step(p, d, keep))
            while True:
                cand = ev.pieces(x + alpha * d)
                if cand is not None:
                    # inside the quadratic-convergence region a full step is safe
                    if lam2 < 0.04 or ev.value(cand, tau) <= f0 - 0.25 * alpha * lam2:
                        break
                alpha *= 0.5
                if alpha < 1e-14:
                    break
            if cand is None or alpha < 1e-14:
                if lam2 < 1e-6:
                    break
                raise BarrierError("line search failed")
            x, p = x + alpha * d, cand
        history.append((tau, ev.objective(p), steps))
        if nu / tau < tol * max(1.0, abs(history[-1][1])):
            break
        # predictor along the central-path tangent dx/dtau = -H^-1 grad f0
        tangent = _newton_direction(H, g_obj, Efull) * (mu - 1.0) * tau
        alpha = min(1.0, ev.max_step(p, tangent, predict_keep))
        cand = ev.pieces(x + alpha * tangent)
        while cand is None and alpha > 1e-6:
            alpha *= 0.5
            cand = ev.pieces(x + alpha * tangent)
        if cand is not None and alpha > 1e-6:
            x, p = x + alpha * tangent, cand
        else:
            alpha = 0.0
        tau *= max(1.0 + alpha * (mu - 1.0), 2.0)

    W, z = ev.split(x)
    return BarrierResult(W=W, z=z, objective=ev.objective(p), gap_bound=nu / tau,
                         newton_steps=steps, outer_steps=outer,
                         solve_time=time.perf_counter() - t_start, status="optimal",
                         history=history)
