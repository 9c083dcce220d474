"""l2,1 minimization by ADMM with block soft-thresholding.

All three programs share one splitting, ``X = Z``:

* the X-step is a projection (or proximal least-squares step) that only needs
  the eigendecomposition of the ``N x N`` Gram matrix ``L L^*``, cached on the
  operator;
* the Z-step is the proximal map of ``||.||_{2,1}`` (column shrinkage);
* the scaled dual ``U`` accumulates ``X - Z``.

For the constrained programs the X-step is the exact projection onto the
feasible set, so the returned ``X`` is feasible to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import MeasurementOperator


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    tol_abs: float = 1e-10
    tol_rel: float = 1e-8
    max_iter: int = 20000
    over_relaxation: float = 1.0
    adaptive_rho: bool = True
    # residual-balancing parameters (used when adaptive_rho is on)
    rho_ratio: float = 10.0
    rho_factor: float = 2.0
    rho_bounds: tuple[float, float] = (1e-4, 1e4)
    adapt_every: int = 10

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.tol_abs <= 0 or self.tol_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1.0, 1.8]")


@dataclass
class SolveResult:
    X_hat: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    feasibility_gap: float
    mode: str = "noiseless"
    eta: float = 0.0
    lam: float | None = None
    rho: float = 1.0
    history: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        """Flat key-value view used for text serialization."""
        out = {
            "mode": self.mode,
            "objective": self.objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "feasibility_gap": self.feasibility_gap,
            "final_rho": self.rho,
        }
        if self.mode == "noisy":
            out["eta"] = self.eta
        if self.mode == "regularized":
            out["lambda"] = self.lam
        return out


def l21_norm(X) -> float:
    """Sum of the column l2 norms."""
    return float(np.linalg.norm(np.asarray(X), axis=0).sum())


def block_soft_threshold(X, tau: float) -> np.ndarray:
    """Proximal map of ``tau * ||.||_{2,1}``: shrink each column's norm by ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    X = np.asarray(X)
    norms = np.linalg.norm(X, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return X * scale


def entrywise_soft_threshold(X, tau: float) -> np.ndarray:
    """Proximal map of ``tau * sum |X_ij|`` (complex soft-thresholding)."""
    X = np.asarray(X)
    mag = np.abs(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > tau, 1.0 - tau / mag, 0.0)
    return X * scale


class _BallProjector:
    """Projection onto ``{X : ||L(X) - y|| <= eta}`` in the eigenbasis of ``L L^*``.

    For a point ``V`` with residual ``s = L(V) - y`` outside the ball, the
    projection is ``V - L^*(U t c / (1 + t w))`` with ``c = U^H s`` and ``t > 0``
    the root of ``||c / (1 + t w)|| = eta``.  ``eta = 0`` is the affine
    projection (``t -> inf``).
    """

    def __init__(self, op: MeasurementOperator, y: np.ndarray, eta: float):
        g = op.gram()
        self.op, self.y, self.eta = op, y, float(eta)
        self.w, self.U = g.eigvals, g.eigvecs
        self.pos = self.w > 0
        self.t = 1.0
        if self.eta == 0.0:
            c = self.U.conj().T @ y
            unreachable = np.linalg.norm(c[~self.pos])
            if unreachable > 1e-9 * max(np.linalg.norm(y), 1.0):
                raise ValueError("y is not in the range of L; the equality constraint is infeasible")

    def __call__(self, V: np.ndarray) -> np.ndarray:
        s = self.op.forward(V) - self.y
        if self.eta > 0.0 and np.linalg.norm(s) <= self.eta:
            return V
        c = self.U.conj().T @ s
        coef = np.zeros_like(c)
        if self.eta == 0.0:
            coef[self.pos] = c[self.pos] / self.w[self.pos]
        else:
            t = self._root(np.abs(c) ** 2)
            coef = t * c / (1.0 + t * self.w)
        return V - self.op.adjoint(self.U @ coef)

    def _root(self, c2: np.ndarray) -> float:
        """Solve ``sum c2 / (1 + t w)^2 = eta^2`` for ``t > 0``.

        Newton on ``1/||r(t)|| - 1/eta`` (nearly linear in ``t``), bracketed.
        """
        w, eta = self.w, self.eta
        floor = c2[~self.pos].sum()
        if floor >= eta**2:
            raise ValueError("the noise ball does not intersect the range of L")

        def rnorm(t):
            d = 1.0 + t * w
            r2 = np.sum(c2 / d**2)
            dr2 = -2.0 * np.sum(c2 * w / d**3)
            return np.sqrt(r2), dr2

        lo, hi = 0.0, np.inf
        t = self.t
        for _ in range(200):
            r, dr2 = rnorm(t)
            f = 1.0 / r - 1.0 / eta
            if abs(f) * eta <= 1e-15:
                break
            if f < 0:
                lo = t
            else:
                hi = t
            # d/dt (1/r) = -(1/2) r^-3 d(r^2)/dt
            df = -0.5 * dr2 / r**3
            t_new = t - f / df if df > 0 else np.inf
            if not lo < t_new < hi:
                t_new = 0.5 * (lo + hi) if np.isfinite(hi) else max(2.0 * t, 1.0)
            if abs(t_new - t) <= 1e-15 * t:
                t = t_new
                break
            t = t_new
        self.t = t
        return t


def _admm(
    x_step: Callable[[np.ndarray, float], np.ndarray],
    prox: Callable[[np.ndarray, float], np.ndarray],
    shape: tuple[int, int],
    cfg: SolverConfig,
):
    """Scaled-form ADMM for ``min f(X) + g(Z) s.t. X = Z``.

    ``x_step(V, rho)`` minimizes ``f(X) + rho/2 ||X - V||^2``; ``prox(V, s)`` is
    the proximal map of ``s * g``.
    """
    K, M = shape
    X = np.zeros(shape, dtype=complex)
    Z = np.zeros_like(X)
    U = np.zeros_like(X)
    rho = cfg.rho
    alpha = cfg.over_relaxation
    root_n = np.sqrt(K * M)
    history = []
    r = s = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        X = x_step(Z - U, rho)
        Xr = alpha * X + (1.0 - alpha) * Z if alpha != 1.0 else X
        Z_old = Z
        Z = prox(Xr + U, 1.0 / rho)
        U = U + Xr - Z
        r = float(np.linalg.norm(X - Z))
        s = float(rho * np.linalg.norm(Z - Z_old))
        history.append((r, s))
        eps_pri = root_n * cfg.tol_abs + cfg.tol_rel * max(np.linalg.norm(X), np.linalg.norm(Z))
        eps_dual = root_n * cfg.tol_abs + cfg.tol_rel * rho * np.linalg.norm(U)
        if r <= eps_pri and s <= eps_dual:
            converged = True
            break
        if cfg.adaptive_rho and it % cfg.adapt_every == 0:
            lo, hi = cfg.rho_bounds
            if r > cfg.rho_ratio * s and rho * cfg.rho_factor <= hi:
                rho *= cfg.rho_factor
                U /= cfg.rho_factor
            elif s > cfg.rho_ratio * r and rho / cfg.rho_factor >= lo:
                rho /= cfg.rho_factor
                U *= cfg.rho_factor
    return X, Z, r, s, it, converged, rho, history


def _zero_result(op: MeasurementOperator, y, mode: str, eta=0.0, lam=None) -> SolveResult:
    X = np.zeros((op.K, op.M), dtype=complex)
    gap = float(np.linalg.norm(y))
    if mode == "noisy":
        gap = max(0.0, gap - eta)
    elif mode == "regularized":
        gap = 0.0
    return SolveResult(X, 0.0, 0.0, 0.0, 0, True, gap, mode, eta, lam)


def solve_noiseless(y, op: MeasurementOperator, cfg: SolverConfig | None = None) -> SolveResult:
    """``min ||X||_{2,1}  s.t.  L(X) = y``."""
    return solve_noisy(y, op, 0.0, cfg)


def solve_noisy(y, op: MeasurementOperator, eta: float, cfg: SolverConfig | None = None,
                penalty: str = "l21") -> SolveResult:
    """``min ||X||_{2,1}  s.t.  ||y - L(X)||_2 <= eta``.

    ``eta = 0`` is the equality-constrained program.  ``penalty="l1"`` swaps in
    the entrywise l1 norm (used for the shared-calibration baseline).
    """
    cfg = cfg or SolverConfig()
    y = np.asarray(y, dtype=complex)
    if y.shape != (op.N,):
        raise ValueError(f"y has shape {y.shape}, operator expects ({op.N},)")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    mode = "noiseless" if eta == 0 else "noisy"
    if np.linalg.norm(y) <= eta or not np.any(y):
        return _zero_result(op, y, mode, eta)
    project = _BallProjector(op, y, eta)
    prox, norm = _penalty(penalty)
    X, Z, r, s, it, converged, rho, hist = _admm(
        lambda V, rho: project(V), prox, (op.K, op.M), cfg
    )
    resid = float(np.linalg.norm(op.forward(X) - y))
    gap = resid if eta == 0 else max(0.0, resid - eta)
    return SolveResult(X, norm(X), r, s, it, converged, gap, mode, float(eta), None, rho, hist)


def solve_regularized(y, op: MeasurementOperator, lam: float,
                      cfg: SolverConfig | None = None) -> SolveResult:
    """``min 1/2 ||L(X) - y||^2 + lam ||X||_{2,1}``.

    The X-step ``(L^*L + rho I)^{-1}(L^*y + rho V)`` uses the matrix inversion
    lemma with the cached Gram eigendecomposition.  Returns the sparse iterate.
    """
    cfg = cfg or SolverConfig()
    y = np.asarray(y, dtype=complex)
    if y.shape != (op.N,):
        raise ValueError(f"y has shape {y.shape}, operator expects ({op.N},)")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not np.any(y):
        return _zero_result(op, y, "regularized", lam=lam)
    g = op.gram()
    w, Ug = g.eigvals, g.eigvecs
    Lty = op.adjoint(y)

    def x_step(V, rho):
        q = Lty + rho * V
        # (rho I + L^*L)^{-1} q = (q - L^*(rho I + LL^*)^{-1} L q) / rho
        c = Ug.conj().T @ op.forward(q)
        return (q - op.adjoint(Ug @ (c / (rho + w)))) / rho

    X, Z, r, s, it, converged, rho, hist = _admm(
        x_step, lambda V, t: block_soft_threshold(V, lam * t), (op.K, op.M), cfg
    )
    obj = 0.5 * np.linalg.norm(op.forward(Z) - y) ** 2 + lam * l21_norm(Z)
    res = SolveResult(Z, float(obj), r, s, it, converged, 0.0, "regularized", 0.0, lam, rho, hist)
    res.feasibility_gap = stationarity_residual(Z, y, op, lam)
    return res


def stationarity_residual(X, y, op: MeasurementOperator, lam: float) -> float:
    """Distance of ``0`` from ``L^*(L(X) - y) + lam * d||X||_{2,1}``.

    On-support columns need ``grad_j + lam x_j/||x_j|| = 0``; a zero column is
    fine as long as ``||grad_j|| <= lam``.  Returns the Frobenius norm of the
    smallest subgradient residual.
    """
    X = np.asarray(X)
    grad = op.adjoint(op.forward(X) - y)
    norms = np.linalg.norm(X, axis=0)
    on = norms > 0
    R = np.zeros_like(grad)
    R[:, on] = grad[:, on] + lam * X[:, on] / norms[on]
    gn = np.linalg.norm(grad[:, ~on], axis=0)
    excess = np.maximum(gn - lam, 0.0)
    return float(np.sqrt(np.linalg.norm(R) ** 2 + np.sum(excess**2)))


def _penalty(name: str):
    if name == "l21":
        return (lambda V, t: block_soft_threshold(V, t)), l21_norm
    if name == "l1":
        return entrywise_soft_threshold, lambda X: float(np.abs(X).sum())
    raise ValueError(f"unknown penalty {name!r}")
