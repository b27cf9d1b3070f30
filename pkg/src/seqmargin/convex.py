"""Small dense solvers for ``min ||w - w0||^2  s.t.  A w >= 1``.

The main solver is a dual active-set (Goldfarb-Idnani) method specialised to
an identity Hessian: it starts from the unconstrained minimiser ``w0`` and adds
violated constraints one at a time while keeping the multipliers nonnegative,
so it returns exact working sets and detects infeasibility without a
phase-one problem.  ``active_set_oracle`` is a brute-force enumeration used
to test it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

DEFAULT_TOL = 1e-10
TIGHT_TOL = 1e-9


class InfeasibleError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Polyhedron:
    """The set ``{w : A[i] @ w >= 1 for every row i}``."""

    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim == 1:
            A = A[None, :]
        if A.ndim != 2 or A.shape[1] == 0:
            raise ValueError("constraint matrix must be 2-D with at least one column")
        if not np.all(np.isfinite(A)):
            raise ValueError("constraint matrix has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


@dataclass
class QPSolution:
    w: np.ndarray
    alpha: np.ndarray                 # one multiplier per constraint
    active: tuple[int, ...]           # constraints tight at w
    working: tuple[int, ...] = ()     # constraints carrying the multipliers
    residuals: dict = field(default_factory=dict)
    iterations: int = 0


def kkt_residuals(P: Polyhedron, w0, w, alpha) -> dict:
    s = P.A @ w - 1.0
    return {
        "stationarity": float(np.linalg.norm(w - w0 - P.A.T @ alpha)),
        "feasibility": float(max(0.0, -s.min())) if P.n else 0.0,
        "complementarity": float(np.max(np.abs(alpha * s))) if P.n else 0.0,
        "dual": float(max(0.0, -alpha.min())) if P.n else 0.0,
    }


def _tight(P: Polyhedron, w, tol=TIGHT_TOL) -> tuple[int, ...]:
    if P.n == 0:
        return ()
    scale = max(1.0, float(np.abs(P.A @ w).max()))
    return tuple(int(i) for i in np.flatnonzero(np.abs(P.A @ w - 1.0) <= tol * scale))


def project_onto_polyhedron(P: Polyhedron, w0, tol: float = DEFAULT_TOL,
                            max_iter: int | None = None) -> QPSolution:
    A = P.A
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (P.d,):
        raise ValueError(f"w0 has shape {w0.shape}, expected ({P.d},)")
    n = P.n
    max_iter = 50 * max(n, 1) if max_iter is None else max_iter
    w = w0.copy()
    work: list[int] = []
    u = np.zeros(0)
    scale = max(1.0, float(np.abs(A).max()))
    it = 0
    while True:
        s = A @ w - 1.0
        p = int(np.argmin(s))
        if s[p] >= -tol * scale:
            break
        up = 0.0
        while True:
            it += 1
            if it > max_iter:
                alpha = np.zeros(n)
                alpha[work] = u
                raise NonConvergenceError("active-set iteration cap exceeded",
                                          kkt_residuals(P, w0, w, alpha))
            ap = A[p]
            if work:
                Nw = A[work].T
                r, *_ = np.linalg.lstsq(Nw, ap, rcond=None)
                z = ap - Nw @ r
            else:
                r = np.zeros(0)
                z = ap
            zz = float(z @ z)
            t2 = (1.0 - float(ap @ w)) / zz if zz > 1e-14 * max(1.0, float(ap @ ap)) else np.inf
            pos = r > 1e-14
            if np.any(pos):
                ratios = np.full(r.shape, np.inf)
                ratios[pos] = u[pos] / r[pos]
                j = int(np.argmin(ratios))
                t1 = float(ratios[j])
            else:
                j, t1 = -1, np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleError(f"constraint {p} cannot be satisfied together with {sorted(work)}")
            if np.isfinite(t2):
                w = w + t * z
            u = u - t * r
            up += t
            if t2 <= t1:
                work.append(p)
                u = np.append(u, up)
                break
            del work[j]
            u = np.delete(u, j)
    alpha = np.zeros(n)
    alpha[work] = np.maximum(u, 0.0)
    res = kkt_residuals(P, w0, w, alpha)
    if res["feasibility"] > 1e-8 * scale:
        raise InfeasibleError(f"residual violation {res['feasibility']:.3e} at termination")
    return QPSolution(w, alpha, _tight(P, w), tuple(sorted(work)), res, it)


def min_norm_in_polyhedron(P: Polyhedron, tol: float = DEFAULT_TOL) -> QPSolution:
    """Minimum-norm point of P, i.e. the hard-margin max-margin weight."""
    if P.n == 0:
        raise ValueError("polyhedron has no constraints; min-norm problem is unbounded below at 0")
    return project_onto_polyhedron(P, np.zeros(P.d), tol)


def active_set_oracle(P: Polyhedron, w0=None, max_constraints: int = 12,
                      tol: float = 1e-9) -> QPSolution:
    """Brute-force projection of ``w0`` (default: origin) onto P.

    Enumerates every subset of at most ``d`` linearly independent constraints,
    solves the equality-constrained problem, and keeps the feasible candidate
    with nonnegative multipliers and smallest objective.
    """
    if P.n > max_constraints:
        raise BudgetError(f"{P.n} constraints exceeds enumeration budget {max_constraints}")
    w0 = np.zeros(P.d) if w0 is None else np.asarray(w0, dtype=float)
    A = P.A
    best = None
    for size in range(0, min(P.d, P.n) + 1):
        for sub in combinations(range(P.n), size):
            sub = list(sub)
            if size:
                As = A[sub]
                G = As @ As.T
                if np.linalg.matrix_rank(G) < size:
                    continue
                lam = np.linalg.solve(G, 1.0 - As @ w0)
                if np.any(lam < -tol):
                    continue
                w = w0 + As.T @ lam
            else:
                lam = np.zeros(0)
                w = w0.copy()
            if P.n and np.min(A @ w - 1.0) < -tol * max(1.0, float(np.abs(A @ w).max())):
                continue
            obj = float(np.sum((w - w0) ** 2))
            if best is None or obj < best[0] - 1e-12:
                best = (obj, w, sub, lam)
    if best is None:
        raise InfeasibleError("no feasible KKT point among enumerated active sets")
    _, w, sub, lam = best
    alpha = np.zeros(P.n)
    alpha[sub] = np.maximum(lam, 0.0)
    return QPSolution(w, alpha, _tight(P, w), tuple(sub), kkt_residuals(P, w0, w, alpha))
