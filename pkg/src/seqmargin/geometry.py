"""Max-margin certificates and the dataset constants that appear in the bounds."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .convex import InfeasibleError, Polyhedron, min_norm_in_polyhedron
from .datamodel import JointDataset
from .losses import (LOGISTIC, LossSpec, joint_gradient, joint_hessian, joint_loss,
                     loss_second_derivative, smoothness_constants, task_gradient)

SUPPORT_TOL = 1e-8


class NotSeparableError(ValueError):
    pass


class CertificateError(ValueError):
    pass


@dataclass
class MarginCertificate:
    w_hat: np.ndarray
    phi: float
    theta: float | None          # None when every point is a support vector
    support: tuple[int, ...]
    task_support: tuple[tuple[int, ...], ...]
    alpha: np.ndarray
    sigma_max: float
    separable: bool = True
    non_degenerate: bool = False   # unique, strictly positive duals
    positive_duals: bool = False   # some strictly positive dual exists
    sv_span_full: bool = False
    margins: np.ndarray = field(default=None, repr=False)

    @property
    def direction(self) -> np.ndarray:
        return self.w_hat / np.linalg.norm(self.w_hat)

    def as_dict(self) -> dict:
        return {
            "w_hat": self.w_hat.tolist(),
            "direction": self.direction.tolist(),
            "phi": self.phi,
            "theta": self.theta,
            "support": list(self.support),
            "task_support": [list(s) for s in self.task_support],
            "alpha": self.alpha.tolist(),
            "sigma_max": self.sigma_max,
            "separable": self.separable,
            "non_degenerate": self.non_degenerate,
            "positive_duals": self.positive_duals,
            "sv_span_full": self.sv_span_full,
        }


def separability_check(ds: JointDataset):
    """Return ``(True, w_hat)`` if the absorbed data are separable, else ``(False, None)``."""
    try:
        sol = min_norm_in_polyhedron(Polyhedron(ds.X))
    except InfeasibleError:
        return False, None
    return True, sol.w


def _max_min_dual(XS: np.ndarray, w_hat: np.ndarray) -> float:
    """Largest s such that some alpha >= s (componentwise) writes w_hat = XS^T alpha."""
    k = XS.shape[0]
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.hstack([XS.T, np.zeros((XS.shape[1], 1))])
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=w_hat,
                  bounds=[(0, None)] * k + [(None, 1.0)], method="highs")
    return float(res.x[-1]) if res.status == 0 else -np.inf


def max_margin_certificate(ds: JointDataset) -> MarginCertificate:
    try:
        sol = min_norm_in_polyhedron(Polyhedron(ds.X))
    except InfeasibleError as exc:
        raise NotSeparableError("dataset is not linearly separable") from exc
    w = sol.w
    margins = ds.X @ w
    support = tuple(int(i) for i in np.flatnonzero(np.abs(margins - 1.0) <= SUPPORT_TOL))
    others = np.setdiff1d(np.arange(ds.N), support)
    theta = float(margins[others].min()) if others.size else None
    norm = float(np.linalg.norm(w))
    phi = float(margins.min() / norm)
    task_support = tuple(tuple(int(i) for i in np.intersect1d(idx, support))
                         for idx in ds.partition.index_sets)
    XS = ds.X[list(support)]
    rank_S = np.linalg.matrix_rank(XS)
    positive = _max_min_dual(XS, w) > 1e-9
    # least-squares dual on S; equals the unique dual when the support rows are independent
    alpha = np.zeros(ds.N)
    if rank_S == len(support):
        a_S, *_ = np.linalg.lstsq(XS.T, w, rcond=None)
        alpha[list(support)] = a_S
    else:
        alpha = sol.alpha.copy()
    non_degenerate = bool(rank_S == len(support) and positive)
    return MarginCertificate(
        w_hat=w, phi=phi, theta=theta, support=support, task_support=task_support,
        alpha=alpha, sigma_max=float(np.linalg.norm(ds.X, 2)),
        non_degenerate=non_degenerate, positive_duals=bool(positive),
        sv_span_full=bool(rank_S == np.linalg.matrix_rank(ds.X)), margins=margins)


def task_max_margin(ds: JointDataset, m: int) -> MarginCertificate:
    return max_margin_certificate(ds.subset(m))


# -- non-separability coefficient -------------------------------------------------

def _b_objective(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """sum_i max(0, -x_i . v) for each row v of V."""
    return np.maximum(0.0, -(V @ X.T)).sum(axis=1)


def _unit_grid(d: int, resolution: int) -> tuple[np.ndarray, float]:
    """Unit directions and the angular spacing of the grid."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if d == 2:
        a = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
        return np.column_stack([np.cos(a), np.sin(a)]), 2 * np.pi / resolution
    if d == 3:
        n_lat = max(2, resolution // 2)
        th = (np.arange(n_lat) + 0.5) * np.pi / n_lat
        ph = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
        T, P = np.meshgrid(th, ph, indexing="ij")
        V = np.column_stack([(np.sin(T) * np.cos(P)).ravel(), (np.sin(T) * np.sin(P)).ravel(),
                             np.cos(T).ravel()])
        V = np.vstack([V, [[0, 0, 1.0], [0, 0, -1.0]]])
        return V, max(np.pi / n_lat, 2 * np.pi / resolution)
    raise ValueError(f"grid search supports d <= 3, got d={d}")


def arrangement_vertices(X: np.ndarray) -> np.ndarray:
    """Unit directions orthogonal to d-1 independent data points (both signs).

    The coefficient objective is linear on each cell of the hyperplane
    arrangement ``{v : x_i . v = 0}`` and has no interior minima on the sphere,
    so its minimum over unit vectors is attained at one of these directions.
    """
    N, d = X.shape
    if d == 1:
        return np.array([[1.0], [-1.0]])
    out = []
    for sub in itertools.combinations(range(N), d - 1):
        Xs = X[list(sub)]
        _, s, vt = np.linalg.svd(Xs)
        if np.sum(s > 1e-12 * max(1.0, s.max())) < d - 1:
            continue
        v = vt[-1]
        out.append(v)
        out.append(-v)
    if not out:
        return _unit_grid(d, 360)[0]
    return np.array(out)


def nonseparability_coefficient_b(ds: JointDataset, resolution: int = 3600,
                                  refine: bool = True) -> float:
    """min over unit v of sum_i [x_i . v]^-  by angular grid plus local refinement.

    Refinement snaps the best grid directions to nearby arrangement vertices,
    where the piecewise-linear objective attains its minimum.
    """
    X = ds.X
    V, spacing = _unit_grid(ds.d, resolution)
    vals = _b_objective(X, V)
    best = float(vals.min())
    if refine and ds.d > 1:
        norms = np.linalg.norm(X, axis=1)
        cand = arrangement_vertices(X[norms > 0]) if np.any(norms > 0) else V
        top = V[np.argsort(vals)[: min(32, len(V))]]
        near = np.max(cand @ top.T, axis=1) >= math.cos(min(np.pi, 4 * spacing))
        if np.any(near):
            best = min(best, float(_b_objective(X, cand[near]).min()))
    return max(best, 0.0)


def b_lower_bound(ds: JointDataset, resolution: int = 3600) -> float:
    """Certified lower bound: grid minimum minus its Lipschitz slack."""
    V, spacing = _unit_grid(ds.d, resolution)
    # chord length between a direction and its nearest grid point
    slack = float(np.linalg.norm(ds.X, axis=1).sum()) * 2 * math.sin(spacing / 2)
    return max(0.0, float(_b_objective(ds.X, V).min()) - slack)


def exact_b(ds: JointDataset) -> float:
    """Exact coefficient via arrangement-vertex enumeration (small N only)."""
    return max(0.0, float(_b_objective(ds.X, arrangement_vertices(ds.X)).min()))


# -- strictly non-separable case -------------------------------------------------------

@dataclass
class NonSepCertificate:
    b: float
    B: float
    beta_m: np.ndarray
    V_star: float
    w_star: np.ndarray
    mu: float
    radius_sq: float
    eta: float
    K: int
    loss_star: float
    grad_norm: float

    def as_dict(self) -> dict:
        return {"b": self.b, "B": self.B, "beta_m": self.beta_m.tolist(), "V_star": self.V_star,
                "w_star": self.w_star.tolist(), "mu": self.mu, "radius_sq": self.radius_sq,
                "eta": self.eta, "K": self.K, "loss_star": self.loss_star,
                "grad_norm": self.grad_norm}


def joint_minimizer(ds: JointDataset, spec: LossSpec = LOGISTIC, gtol: float = 1e-12,
                    max_iter: int = 200) -> np.ndarray:
    """Damped Newton with halving backtracking on the joint loss."""
    w = np.zeros(ds.d)
    f = joint_loss(spec, ds, w)
    for _ in range(max_iter):
        g = joint_gradient(spec, ds, w)
        if np.linalg.norm(g) < gtol:
            return w
        H = joint_hessian(spec, ds, w)
        step = np.linalg.solve(H, -g)
        t = 1.0
        while True:
            w_new = w + t * step
            f_new = joint_loss(spec, ds, w_new)
            if f_new <= f + 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            # at machine precision the Armijo test can stall; accept a full step if it helps
            w_new = w + step
            if np.linalg.norm(joint_gradient(spec, ds, w_new)) >= np.linalg.norm(g):
                break
        w, f = w_new, joint_loss(spec, ds, w_new)
    g = joint_gradient(spec, ds, w)
    if np.linalg.norm(g) < gtol:
        return w
    raise CertificateError(f"Newton did not reach gradient norm {gtol:g} (got {np.linalg.norm(g):.3e})")


def iterate_ball_radius_sq(b, G, loss_star, w_star_norm, eta, K, B, V_star) -> float:
    """Squared radius of the ball around w* holding every end-of-cycle iterate."""
    inner = (loss_star + math.sqrt(2) * eta * K * B * V_star) / (G * b) + w_star_norm
    return inner ** 2 + 2 * math.sqrt(2) * eta ** 2 * K ** 2 * B * V_star


def strong_convexity_on_ball(ds: JointDataset, spec: LossSpec, w_star, radius: float) -> float:
    """min over points and over the ball of loss'' times lambda_min(X^T X).

    For the logistic loss the curvature is even and decreasing in |u|, so the
    minimum over the ball is attained at |x.w*| + radius * ||x||.
    """
    if spec.kind != "logistic":
        raise ValueError("closed-form curvature minimum implemented for the logistic loss")
    u = np.abs(ds.X @ w_star) + radius * np.linalg.norm(ds.X, axis=1)
    lam_min = float(np.linalg.eigvalsh(ds.X.T @ ds.X)[0])
    return float(loss_second_derivative(spec, u).min()) * lam_min


def sampled_strong_convexity(ds: JointDataset, spec: LossSpec, w_star, radius: float,
                             n: int = 10_000, seed: int = 0) -> float:
    """Same quantity estimated over a random cover of the ball (an upper estimate)."""
    rng = np.random.default_rng(seed)
    d = ds.d
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = w_star + dirs * (radius * rng.uniform(size=(n, 1)) ** (1 / d))
    pts = np.vstack([pts, w_star + radius * dirs])
    curv = loss_second_derivative(spec, pts @ ds.X.T).min()
    return float(curv) * float(np.linalg.eigvalsh(ds.X.T @ ds.X)[0])


def nonsep_certificate(ds: JointDataset, spec: LossSpec = LOGISTIC, eta: float | None = None,
                       K: int = 1, b: float | None = None) -> NonSepCertificate:
    """Constants for the strictly non-separable analysis.

    ``eta`` defaults to the largest step for which the iterate ball is valid,
    ``1 / (2 sqrt(2) K B)``.
    """
    if np.linalg.matrix_rank(ds.X) < ds.d:
        raise CertificateError("data matrix is rank deficient")
    b = nonseparability_coefficient_b(ds) if b is None else b
    if not b > 0:
        raise CertificateError("dataset is not strictly non-separable (b = 0)")
    _, beta_m, B = smoothness_constants(spec, ds)
    if eta is None:
        eta = 1.0 / (2 * math.sqrt(2) * K * B)
    w_star = joint_minimizer(ds, spec)
    V_star = float(sum(np.sum(task_gradient(spec, ds, m, w_star) ** 2) / beta_m[m]
                       for m in range(ds.M)))
    loss_star = joint_loss(spec, ds, w_star)
    r2 = iterate_ball_radius_sq(b, spec.G, loss_star, float(np.linalg.norm(w_star)), eta, K, B, V_star)
    mu = strong_convexity_on_ball(ds, spec, w_star, math.sqrt(r2))
    return NonSepCertificate(b=b, B=B, beta_m=beta_m, V_star=V_star, w_star=w_star, mu=mu,
                             radius_sq=r2, eta=eta, K=K, loss_star=loss_star,
                             grad_norm=float(np.linalg.norm(joint_gradient(spec, ds, w_star))))


# -- residual target -------------------------------------------------------------------

def residual_target_w_tilde(ds: JointDataset, cert: MarginCertificate, eta: float, w0=None,
                            tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Vector w~ with eta * exp(-x_i . w~) = alpha_i on the support set.

    The component of ``w~ - w0`` orthogonal to the support span is zero.  When
    the duals are not unique, the alpha that makes the system consistent is the
    one selected: w~ minimises ``eta * sum_S exp(-x_i . w) + w_hat . w`` over the
    support span, whose stationarity condition is exactly ``w_hat = sum alpha_i x_i``
    with ``alpha_i = eta * exp(-x_i . w)``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not cert.positive_duals:
        raise CertificateError("no strictly positive dual coefficients exist on the support set")
    w0 = np.zeros(ds.d) if w0 is None else np.asarray(w0, dtype=float)
    XS = ds.X[list(cert.support)]
    # orthonormal basis of span(S)
    U, s, _ = np.linalg.svd(XS.T, full_matrices=False)
    Q = U[:, s > 1e-10 * s.max()]
    P = Q @ Q.T
    Z = XS @ Q                       # support rows in span coordinates
    c = Q.T @ cert.w_hat
    z = np.zeros(Q.shape[1])
    # fix the offset so x_i . w uses the copied orthogonal component of w0
    off = XS @ (w0 - P @ w0)

    def F(z):
        return eta * np.sum(np.exp(-(Z @ z + off))) + c @ z

    for _ in range(max_iter):
        e = eta * np.exp(-(Z @ z + off))
        g = c - Z.T @ e
        if np.linalg.norm(g) < tol * max(1.0, np.linalg.norm(c)):
            break
        H = (Z * e[:, None]).T @ Z
        step = np.linalg.solve(H, -g)
        t, f0 = 1.0, F(z)
        while F(z + t * step) > f0 + 1e-4 * t * (g @ step) and t > 1e-12:
            t *= 0.5
        z = z + t * step
    else:
        raise CertificateError("residual-target solve did not converge")
    return Q @ z + (w0 - P @ w0)
