"""Sufficient conditions for exact and stable recovery.

The quantities checked here are:

* ``delta``: isometry of the restricted sensing matrix, ``||Phi_T^H Phi_T - I||``;
* ``gamma``: a bound on ``||L||`` (analytic high-probability bound or estimate);
* a dual certificate ``Y = L^*(p)`` that nearly equals ``sign(X0)`` on ``T``
  (``cert_residual``) and is small off ``T`` (``theta``);
* ``beta``: the worst cross-correlation between ``Phi_T`` and an off-support block;
* ``rho``, ``tau`` and the noisy error constants ``C1``, ``C2``.

Two certificate constructions are provided: the least-squares certificate,
which hits ``sign(X0,T)`` exactly whenever ``Phi_T`` has full column rank, and
the golfing scheme, which uses disjoint batches of measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import (
    MeasurementOperator,
    SupportSet,
    assemble_phi,
    compact_phi,
    operator_norm_estimate,
)


def column_sign(X) -> np.ndarray:
    """Columnwise ``x / ||x||_2`` (zero columns stay zero)."""
    X = np.asarray(X)
    norms = np.linalg.norm(X, axis=0)
    out = np.zeros_like(X, dtype=complex)
    nz = norms > 0
    out[:, nz] = X[:, nz] / norms[nz]
    return out


def _support(T, M) -> SupportSet:
    return T if isinstance(T, SupportSet) else SupportSet.of(T, M)


# -- operator-norm bounds ------------------------------------------------------

def gamma_gaussian(N: int, M: int, alpha: float = 1.0) -> float:
    """High-probability bound ``sqrt(M log(MN/2) + alpha log N)`` on ``||L||``."""
    return math.sqrt(M * math.log(M * N / 2) + alpha * math.log(N))


def gamma_fourier(K: int, M: int) -> float:
    """High-probability bound ``sqrt(2M log(2KM) + 2M + 1)`` on ``||L||``."""
    return math.sqrt(2 * M * math.log(2 * K * M) + 2 * M + 1)


def gamma_bound(ensemble: str, N: int, M: int, K: int, alpha: float = 1.0) -> float:
    if ensemble == "gaussian":
        return gamma_gaussian(N, M, alpha)
    if ensemble == "fourier":
        return gamma_fourier(K, M)
    raise ValueError(f"no analytic operator-norm bound for ensemble {ensemble!r}")


def golfing_rounds(J: int, gamma: float) -> int:
    """Smallest integer ``P >= log(4 sqrt(2J) gamma) / log 2``."""
    if J < 1:
        return 1
    return max(1, math.ceil(math.log2(4 * math.sqrt(2 * J) * gamma)))


# -- isometry and cross-correlation -------------------------------------------

def isometry_constant(phi_T_compact) -> float:
    """``||Phi_T^H Phi_T - I||`` via a Hermitian eigendecomposition."""
    P = np.asarray(phi_T_compact)
    if P.shape[1] == 0:
        return 0.0
    G = P.conj().T @ P
    G = 0.5 * (G + G.conj().T) - np.eye(G.shape[0])
    return float(np.max(np.abs(np.linalg.eigvalsh(G))))


def beta_crosscorrelation(phi, T, K: int) -> float:
    """Max over ``i`` off ``T`` of ``||Phi_T^H [Phi_{K i} ... Phi_{K i + K - 1}]||``.

    ``phi`` is the dense ``N x KM`` sensing matrix (or an operator).
    """
    if isinstance(phi, MeasurementOperator):
        phi = assemble_phi(phi)
    phi = np.asarray(phi)
    M = phi.shape[1] // K
    T = _support(T, M)
    off = T.complement
    if len(T) == 0 or off.size == 0:
        return 0.0
    blocks = phi.reshape(phi.shape[0], M, K)  # [n, j, i] since column = i + K j
    phi_T = blocks[:, T.array, :].reshape(phi.shape[0], -1)
    cross = np.einsum("nc,nji->jci", phi_T.conj(), blocks[:, off, :])
    return float(np.linalg.norm(cross, ord=2, axis=(1, 2)).max())


# -- least-squares certificate ------------------------------------------------

def ls_certificate(op: MeasurementOperator, T, sign_X0T) -> tuple[np.ndarray, np.ndarray]:
    """``p = Phi_T (Phi_T^H Phi_T)^{-1} vec(sign)`` and ``Y = L^*(p)``.

    ``sign_X0T`` is ``K x J`` (columns in support order) or ``K x M``.  Raises
    ``np.linalg.LinAlgError`` when the restricted Gram matrix is not positive
    definite.
    """
    T = _support(T, op.M)
    S = np.asarray(sign_X0T, dtype=complex)
    if S.shape == (op.K, op.M):
        S = S[:, T.array]
    if S.shape != (op.K, len(T)):
        raise ValueError(f"sign matrix has shape {S.shape}, expected {(op.K, len(T))}")
    if len(T) == 0:
        return np.zeros((op.K, op.M), dtype=complex), np.zeros(op.N, dtype=complex)
    P = compact_phi(op, T)
    G = P.conj().T @ P
    G = 0.5 * (G + G.conj().T)
    w = np.linalg.eigvalsh(G)
    if w[0] <= G.shape[0] * np.finfo(float).eps * w[-1]:
        raise np.linalg.LinAlgError(
            f"restricted Gram matrix is singular (delta = {isometry_constant(P):.3g})"
        )
    C = np.linalg.cholesky(G)
    s = S.reshape(-1, order="F")
    z = np.linalg.solve(C.conj().T, np.linalg.solve(C, s))
    p = P @ z
    return op.adjoint(p), p


# -- golfing scheme -----------------------------------------------------------

@dataclass(frozen=True)
class GolfingPartition:
    subsets: tuple[np.ndarray, ...]
    deviation: float  # max_p ||B_p - (Q/N) I||
    attempts: int

    @property
    def P(self) -> int:
        return len(self.subsets)

    @property
    def Q(self) -> int:
        return len(self.subsets[0])


def partition_deviation(subsets, B) -> float:
    B = np.asarray(B)
    N, K = B.shape
    dev = 0.0
    for g in subsets:
        Bp = B[g].conj().T @ B[g]
        dev = max(dev, np.linalg.norm(Bp - (len(g) / N) * np.eye(K), 2))
    return float(dev)


def golfing_partition(N: int, P: int, B, seed=None, max_attempts: int = 50,
                      scheme: str = "stratified") -> GolfingPartition:
    """Random partition of ``0..N-1`` into ``P`` sets of size ``Q = N/P``.

    Resampled until ``max_p ||B_p - (Q/N) I|| < Q/(4N)`` with
    ``B_p = sum_{l in Gamma_p} b'_l b'_l^H``.  ``scheme="stratified"`` deals one
    index from every run of ``P`` consecutive rows to each subset, which keeps
    each subset spread across the band; ``"uniform"`` is a plain random split.
    """
    if P < 1 or N % P:
        raise ValueError(f"P={P} must divide N={N}")
    B = B.entries if hasattr(B, "entries") else np.asarray(B)
    Q = N // P
    rng = np.random.default_rng(seed)
    limit = Q / (4 * N)
    best = np.inf
    for attempt in range(1, max_attempts + 1):
        if scheme == "stratified":
            lab = np.concatenate([rng.permutation(P) for _ in range(Q)])
            subsets = tuple(np.flatnonzero(lab == p) for p in range(P))
        elif scheme == "uniform":
            perm = rng.permutation(N)
            subsets = tuple(np.sort(perm[p * Q:(p + 1) * Q]) for p in range(P))
        else:
            raise ValueError(f"unknown partition scheme {scheme!r}")
        dev = partition_deviation(subsets, B)
        best = min(best, dev)
        if dev < limit or P == 1:
            return GolfingPartition(subsets, dev, attempt)
    raise RuntimeError(
        f"no admissible partition in {max_attempts} attempts "
        f"(best deviation {best:.3g}, need < {limit:.3g})"
    )


@dataclass
class GolfingState:
    partition: GolfingPartition
    Y: np.ndarray  # final certificate Y_P
    p: np.ndarray  # Y = L^*(p)
    W_norms: list[float]  # ||W_0||_F, ..., ||W_P||_F
    iterates: list[np.ndarray] = field(default_factory=list, repr=False)  # Y_0..Y_P
    W: list[np.ndarray] = field(default_factory=list, repr=False)  # W_0..W_P (K x M)

    def halving_fraction(self) -> float:
        """Fraction of steps with ``||W_p|| <= ||W_{p-1}|| / 2``."""
        w = np.asarray(self.W_norms)
        if w.size < 2:
            return 1.0
        steps = w[1:] <= 0.5 * w[:-1] * (1 + 1e-12)
        return float(np.mean(steps))


def golfing_certificate(op: MeasurementOperator, T, sign_X0T, P: int | None = None,
                        seed=None, gamma: float | None = None,
                        partition: GolfingPartition | None = None,
                        max_attempts: int = 50) -> GolfingState:
    """Golfing iteration ``Y_p = Y_{p-1} - (N/Q) L_p^* L_p (Y_{p-1,T} - sign)``.

    ``W_p = Y_{p,T} - sign`` is tracked alongside.  ``P`` defaults to
    :func:`golfing_rounds` (which needs ``gamma``; the Fourier bound is used
    if none is given) rounded up to a divisor of ``N``.
    """
    T = _support(T, op.M)
    S = np.asarray(sign_X0T, dtype=complex)
    if S.shape == (op.K, len(T)) and S.shape != (op.K, op.M):
        full = np.zeros((op.K, op.M), dtype=complex)
        full[:, T.array] = S
        S = full
    if S.shape != (op.K, op.M):
        raise ValueError(f"sign matrix has shape {S.shape}")
    mask = T.mask()
    S = S * mask
    if partition is None:
        if P is None:
            g = gamma if gamma is not None else gamma_fourier(op.K, op.M)
            P = next_divisor(op.N, golfing_rounds(len(T), g))
        partition = golfing_partition(op.N, P, op.B, seed, max_attempts)
    N = op.N
    Y = np.zeros((op.K, op.M), dtype=complex)
    p = np.zeros(N, dtype=complex)
    W = -S
    Ys, Ws, norms = [Y], [W], [float(np.linalg.norm(W))]
    for g in partition.subsets:
        r = np.zeros(N, dtype=complex)
        r[g] = op.forward(W)[g]
        step = -(N / len(g)) * r
        p = p + step
        Y = Y + op.adjoint(step)
        W = Y * mask - S
        Ys.append(Y)
        Ws.append(W)
        norms.append(float(np.linalg.norm(W)))
    return GolfingState(partition, Y, p, norms, Ys, Ws)


def golfing_w_recursion(op: MeasurementOperator, T, W_prev, subset) -> np.ndarray:
    """``W_p = (N/Q)(Q/N - P_T L_p^* L_p P_T)(W_{p-1})`` evaluated directly."""
    T = _support(T, op.M)
    mask = T.mask()
    N, Q = op.N, len(subset)
    W_T = np.asarray(W_prev) * mask
    r = np.zeros(N, dtype=complex)
    r[subset] = op.forward(W_T)[subset]
    return (N / Q) * ((Q / N) * W_T - op.adjoint(r) * mask)


def next_divisor(N: int, P: int) -> int:
    """Smallest divisor of ``N`` that is ``>= P`` (``N`` itself if none smaller)."""
    for d in range(max(P, 1), N + 1):
        if N % d == 0:
            return d
    return N


# -- report -------------------------------------------------------------------

@dataclass(frozen=True)
class CertificateReport:
    delta: float
    gamma: float
    theta: float
    cert_residual: float
    beta: float
    tau: float
    rho: float
    J: int
    op_norm: float | None = None

    @property
    def residual_limit(self) -> float:
        return 1.0 / (4.0 * math.sqrt(2.0) * self.gamma)

    @property
    def flags(self) -> dict[str, bool]:
        f = {
            "cert_residual_ok": self.cert_residual <= self.residual_limit,
            "theta_ok": self.theta <= 0.5,
            "delta_ok": self.delta <= 0.5,
        }
        if self.op_norm is not None:
            f["gamma_ok"] = self.op_norm <= self.gamma
        f["exact_conditions"] = all(f.values())
        f["rho_ok"] = self.delta < 1.0 and self.rho < 1.0
        f["stable_conditions"] = f["cert_residual_ok"] and f["rho_ok"]
        return f

    @property
    def passed(self) -> bool:
        return self.flags["exact_conditions"]

    def as_dict(self) -> dict:
        d = {
            "J": self.J,
            "delta": self.delta,
            "gamma": self.gamma,
            "theta": self.theta,
            "cert_residual": self.cert_residual,
            "cert_residual_limit": self.residual_limit,
            "beta": self.beta,
            "tau": self.tau,
            "rho": self.rho,
        }
        if self.op_norm is not None:
            d["op_norm"] = self.op_norm
        d.update(self.flags)
        return d


def verify_certificate(Y, p, X0, T, gamma: float, delta: float, beta: float,
                       op_norm: float | None = None) -> CertificateReport:
    """Evaluate the certificate conditions; never raises on a failed condition."""
    Y = np.asarray(Y)
    X0 = np.asarray(X0)
    T = _support(T, X0.shape[1])
    S = column_sign(X0)[:, T.array]
    J = len(T)
    cert_residual = float(np.linalg.norm(Y[:, T.array] - S))
    off = T.complement
    theta = float(np.linalg.norm(Y[:, off], axis=0).max()) if off.size else 0.0
    tau = float(np.linalg.norm(p) / math.sqrt(J)) if J else 0.0
    rho = theta + beta / (4 * math.sqrt(2) * gamma * (1 - delta)) if delta < 1 else math.inf
    return CertificateReport(float(delta), float(gamma), theta, cert_residual, float(beta),
                             tau, float(rho), J, None if op_norm is None else float(op_norm))


def noisy_error_constants(delta: float, theta: float, beta: float, gamma: float,
                          tau: float) -> tuple[float, float]:
    """Constants with ``||X_hat - X0||_F <= (C1 + C2 sqrt(J)) eta``."""
    if delta >= 1:
        raise ValueError(f"delta = {delta} must be < 1")
    rho = theta + beta / (4 * math.sqrt(2) * gamma * (1 - delta))
    if rho >= 1:
        raise ValueError(f"rho = {rho:.4g} must be < 1")
    mu = math.sqrt(1 + delta) / (1 - delta)
    k = 2 * math.sqrt(2) * gamma
    C1 = 2 * mu + mu / (k * (1 - rho)) + beta * mu / (k * (1 - delta) * (1 - rho))
    C2 = 2 * tau / (1 - rho) + 2 * beta * tau / ((1 - delta) * (1 - rho))
    return C1, C2


def certify(op: MeasurementOperator, X0, method: str = "ls", gamma: float | None = None,
            P: int | None = None, seed=None, estimate_norm: bool = False,
            max_attempts: int = 50) -> tuple[CertificateReport, object]:
    """Build a certificate for ``X0`` and evaluate every condition.

    Returns the report and the raw construction (``(Y, p)`` for ``"ls"``, the
    :class:`GolfingState` for ``"golfing"``).
    """
    X0 = np.asarray(X0)
    T = SupportSet.of(np.flatnonzero(np.linalg.norm(X0, axis=0) > 0), op.M)
    if gamma is None:
        gamma = gamma_bound(op.dictionary.ensemble_tag, op.N, op.M, op.K)
    S = column_sign(X0)
    P_T = compact_phi(op, T)
    delta = isometry_constant(P_T)
    beta = beta_crosscorrelation(assemble_phi(op), T, op.K)
    if method == "ls":
        Y, p = ls_certificate(op, T, S)
        raw = (Y, p)
    elif method == "golfing":
        raw = golfing_certificate(op, T, S, P=P, seed=seed, gamma=gamma, max_attempts=max_attempts)
        Y, p = raw.Y, raw.p
    else:
        raise ValueError(f"unknown certificate method {method!r}")
    op_norm = None
    if estimate_norm:
        op_norm = operator_norm_estimate(op).value
    return verify_certificate(Y, p, X0, T, gamma, delta, beta, op_norm), raw
