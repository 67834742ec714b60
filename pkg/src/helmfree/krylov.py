"""Outer Krylov solvers: full GMRES, Bi-CGSTAB and IDR(s).

All three operate on worker-local ndarrays through operator callbacks and a
context providing the global inner product, so the same code runs
sequentially and SPMD. GMRES is left-preconditioned and reports the
preconditioned relative residual ||Minv(b - A x)|| / ||Minv b||; Bi-CGSTAB
and IDR(s) are right-preconditioned and report true relative residuals
||b - A x|| / ||b||. matvec_count includes applications of the system
operator A only, never preconditioner-internal work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SolverConfig",
    "ConvergenceReport",
    "KrylovError",
    "gmres",
    "bicgstab",
    "idr_s",
    "dot",
    "run_solver",
]


class KrylovError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    method: str = "gmres"          # gmres | bicgstab | idrs
    tol: float = 1e-6
    maxit: int = 400
    precond_side: str = "auto"     # auto: left for gmres, right for the others
    s: int = 4                     # IDR shadow dimension
    rng_seed: int = 1234
    restart: int | None = None     # optional GMRES restart length (memory escape hatch)
    breakdown_tol: float = 1e-30


@dataclass
class ConvergenceReport:
    method: str = ""
    matvec_count: int = 0
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    final_relres: float = float("nan")
    breakdown: str | None = None
    rng_seed: int | None = None
    phase_times: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def record(self, relres: float, sink=None) -> None:
        self.iterations += 1
        self.residual_history.append(float(relres))
        self.final_relres = float(relres)
        if sink is not None:
            sink(self.iterations, float(relres))


def dot(u, v, ctx=None):
    """Global conjugated inner product sum(conj(u) * v) over owned regions."""
    from .grid import HaloField
    if isinstance(u, HaloField):
        if u.extent.shape != v.extent.shape:
            raise KrylovError(f"shape mismatch {u.extent.shape} vs {v.extent.shape}")
        u, v = u.owned, v.owned
    elif u.shape != v.shape:
        raise KrylovError(f"shape mismatch {u.shape} vs {v.shape}")
    if ctx is None:
        return complex(np.vdot(u, v))
    return ctx.dot(u, v)


class _CountedOp:
    """Wraps the system operator so every A-application is tallied."""

    def __init__(self, fn, report):
        self.fn = fn
        self.report = report

    def __call__(self, x):
        self.report.matvec_count += 1
        return self.fn(x)


def _identity(x):
    return x.copy()


def _givens(a: complex, b: complex):
    """Complex Givens rotation zeroing b: returns (c, s, r) with c real,
    such that [c s; -conj(s) c] @ [a; b] = [r; 0]."""
    absa, absb = abs(a), abs(b)
    if absb == 0.0:
        return 1.0, 0.0 + 0.0j, a
    if absa == 0.0:
        return 0.0, b.conjugate() / absb, absb + 0.0j
    t = float(np.hypot(absa, absb))
    c = absa / t
    s = (a / absa) * (b.conjugate() / t)
    return c, s, (a / absa) * t


def gmres(A, Minv, b, ctx, cfg: SolverConfig, sink=None):
    """Full (non-restarted by default) left-preconditioned GMRES.

    Modified Gram-Schmidt Arnoldi with Givens-rotation least squares. The
    small Hessenberg problem is solved redundantly on every worker, which
    removes a broadcast and is numerically identical. Initial guess is zero.
    """
    report = ConvergenceReport(method="gmres")
    A = _CountedOp(A, report)
    Minv = Minv if Minv is not None else _identity
    restart = cfg.restart if cfg.restart is not None else cfg.maxit

    x = np.zeros_like(b)
    r0 = Minv(b)
    denom = ctx.norm(r0)
    if denom == 0.0:
        report.converged = True
        report.final_relres = 0.0
        return x, report

    first = True
    while True:
        if not first:
            r0 = Minv(b - A(x))
        beta = ctx.norm(r0)
        if beta / denom <= cfg.tol:
            report.converged = True
            report.final_relres = beta / denom
            return x, report
        first = False

        V = [r0 / beta]
        H = []                      # rotated (triangular) columns
        cs, sn = [], []
        g = [beta + 0.0j]
        breakdown = False
        while len(H) < restart and report.iterations < cfg.maxit:
            w = Minv(A(V[-1]))
            m = len(V)
            col = np.zeros(m + 1, dtype=np.complex128)
            for i in range(m):          # modified Gram-Schmidt
                hij = ctx.dot(V[i], w)
                w = w - hij * V[i]
                col[i] = hij
            hlast = ctx.norm(w)
            col[m] = hlast
            for i in range(len(cs)):    # previously computed rotations
                t = cs[i] * col[i] + sn[i] * col[i + 1]
                col[i + 1] = -np.conj(sn[i]) * col[i] + cs[i] * col[i + 1]
                col[i] = t
            c, s, r = _givens(complex(col[m - 1]), complex(col[m]))
            cs.append(c)
            sn.append(s)
            col[m - 1] = r
            col[m] = 0.0
            H.append(col[:m].copy())
            g.append(-np.conj(s) * g[-1])
            g[-2] = c * g[-2]
            relres = abs(g[-1]) / denom
            report.record(relres, sink)
            if hlast <= cfg.breakdown_tol:
                breakdown = True
                break
            V.append(w / hlast)
            if relres <= cfg.tol:
                break

        y = _solve_upper(H, g)
        for i in range(len(H)):
            x = x + y[i] * V[i]
        relres = abs(g[-1]) / denom
        if relres <= cfg.tol:
            report.converged = True
            return x, report
        if breakdown:
            report.breakdown = "arnoldi"
            report.converged = relres <= cfg.tol
            return x, report
        if report.iterations >= cfg.maxit:
            report.converged = False
            return x, report
        # else: restart cycle


def _solve_upper(H, g):
    """Back substitution on the rotated Hessenberg columns."""
    m = len(H)
    y = np.zeros(m, dtype=np.complex128)
    for i in range(m - 1, -1, -1):
        acc = g[i]
        for j in range(i + 1, m):
            acc = acc - H[j][i] * y[j]
        y[i] = acc / H[i][i]
    return y


def bicgstab(A, Minv, b, ctx, cfg: SolverConfig, sink=None):
    """Right-preconditioned Bi-CGSTAB with true-residual stopping.

    Two A-applications per iteration. rho or omega collapsing below the
    breakdown tolerance flags non-convergence instead of dividing by zero.
    """
    report = ConvergenceReport(method="bicgstab")
    A = _CountedOp(A, report)
    Minv = Minv if Minv is not None else _identity

    x = np.zeros_like(b)
    bnorm = ctx.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.final_relres = 0.0
        return x, report
    r = b.copy()
    if ctx.norm(r) / bnorm <= cfg.tol:
        report.converged = True
        report.final_relres = ctx.norm(r) / bnorm
        return x, report

    r_shadow = r.copy()
    rho = alpha = omega = 1.0 + 0.0j
    v = np.zeros_like(b)
    p = np.zeros_like(b)

    while report.iterations < cfg.maxit:
        rho_new = ctx.dot(r_shadow, r)
        if abs(rho_new) < cfg.breakdown_tol:
            report.breakdown = "rho"
            break
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = Minv(p)
        v = A(p_hat)
        denom = ctx.dot(r_shadow, v)
        if abs(denom) < cfg.breakdown_tol:
            report.breakdown = "rho"
            break
        alpha = rho_new / denom
        s = r - alpha * v
        snorm = ctx.norm(s)
        if snorm / bnorm <= cfg.tol:
            x = x + alpha * p_hat
            r = s
            report.record(snorm / bnorm, sink)
            report.converged = True
            return x, report
        s_hat = Minv(s)
        t = A(s_hat)
        tt = ctx.dot(t, t)
        if abs(tt) < cfg.breakdown_tol:
            report.breakdown = "omega"
            break
        omega = ctx.dot(t, s) / tt
        if abs(omega) < cfg.breakdown_tol:
            report.breakdown = "omega"
            break
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        relres = ctx.norm(r) / bnorm
        report.record(relres, sink)
        if relres <= cfg.tol:
            report.converged = True
            return x, report

    report.converged = False
    return x, report


def _shadow_space(ctx, rng, s, like):
    """s orthonormal random complex shadow vectors (global MGS)."""
    P = []
    for _ in range(s):
        q = ctx.random_owned(rng).astype(np.complex128)
        for pi in P:
            q = q - ctx.dot(pi, q) * pi
        nrm = ctx.norm(q)
        q = q / nrm
        P.append(q.reshape(like.shape))
    return P


def idr_s(A, Minv, b, ctx, cfg: SolverConfig, sink=None):
    """IDR(s), biorthogonal variant, with right preconditioning.

    The shadow space is built from cfg.rng_seed so runs are reproducible;
    the seed is echoed in the report. Each cycle costs s+1 A-applications.
    """
    report = ConvergenceReport(method="idrs", rng_seed=cfg.rng_seed)
    A = _CountedOp(A, report)
    Minv = Minv if Minv is not None else _identity
    s = cfg.s
    if s < 1:
        raise KrylovError("IDR requires s >= 1")

    x = np.zeros_like(b)
    bnorm = ctx.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.final_relres = 0.0
        return x, report
    r = b.copy()
    relres = ctx.norm(r) / bnorm
    if relres <= cfg.tol:
        report.converged = True
        report.final_relres = relres
        return x, report

    rng = np.random.default_rng(cfg.rng_seed)
    P = _shadow_space(ctx, rng, s, b)

    G = [np.zeros_like(b) for _ in range(s)]
    U = [np.zeros_like(b) for _ in range(s)]
    Mmat = np.eye(s, dtype=np.complex128)
    om = 1.0 + 0.0j
    kappa = 0.7

    while report.iterations < cfg.maxit:
        f = np.array([ctx.dot(P[i], r) for i in range(s)], dtype=np.complex128)
        for k in range(s):
            # solve the lower-right projection block
            try:
                c = np.linalg.solve(Mmat[k:, k:], f[k:])
            except np.linalg.LinAlgError:
                report.breakdown = "projection"
                report.converged = False
                return x, report
            v = r.copy()
            for i in range(k, s):
                v = v - c[i - k] * G[i]
            v_hat = Minv(v)
            u = om * v_hat
            for i in range(k, s):
                u = u + c[i - k] * U[i]
            g = A(u)
            for i in range(k):      # bi-orthogonalize against earlier shadows
                alpha = ctx.dot(P[i], g) / Mmat[i, i]
                g = g - alpha * G[i]
                u = u - alpha * U[i]
            G[k] = g
            U[k] = u
            for i in range(k, s):
                Mmat[i, k] = ctx.dot(P[i], g)
            if abs(Mmat[k, k]) < cfg.breakdown_tol:
                report.breakdown = "projection"
                report.converged = False
                return x, report
            beta = f[k] / Mmat[k, k]
            r = r - beta * G[k]
            x = x + beta * U[k]
            relres = ctx.norm(r) / bnorm
            report.record(relres, sink)
            if relres <= cfg.tol or report.iterations >= cfg.maxit:
                break
            if k + 1 < s:
                f[k + 1:] = f[k + 1:] - beta * Mmat[k + 1:, k]
        if relres <= cfg.tol:
            report.converged = True
            return x, report
        if report.iterations >= cfg.maxit:
            break
        # dimension-reduction step
        v_hat = Minv(r)
        t = A(v_hat)
        tt = ctx.dot(t, t)
        if abs(tt) < cfg.breakdown_tol:
            report.breakdown = "omega"
            break
        om = ctx.dot(t, r) / tt
        angle = abs(ctx.dot(t, r)) / (np.sqrt(abs(tt)) * ctx.norm(r))
        if angle < kappa:
            om = om * (kappa / angle)
        if abs(om) < cfg.breakdown_tol:
            report.breakdown = "omega"
            break
        x = x + om * v_hat
        r = r - om * t
        relres = ctx.norm(r) / bnorm
        report.record(relres, sink)
        if relres <= cfg.tol:
            report.converged = True
            return x, report

    report.converged = relres <= cfg.tol
    return x, report


_SOLVERS = {"gmres": gmres, "bicgstab": bicgstab, "idrs": idr_s}


def run_solver(A, Minv, b, ctx, cfg: SolverConfig, sink=None):
    """Dispatch on cfg.method."""
    try:
        fn = _SOLVERS[cfg.method]
    except KeyError:
        raise KrylovError(f"unknown method {cfg.method!r}; "
                          f"choose from {sorted(_SOLVERS)}") from None
    return fn(A, Minv, b, ctx, cfg, sink=sink)
