"""The lifted measurement operator and its matrix form.

A measurement of the lifted matrix ``X`` (``K x M``) is

    y[n] = sum_{i,j} B[n, i] * X[i, j] * A[n, j]

i.e. the bilinear form ``b'_n^H X a'_n`` where ``b'_n`` is the n-th column of
``B^H`` and ``a'_n`` the n-th column of ``A^T``.  Everything here is
matrix-free except :func:`assemble_phi`, which materialises the ``N x KM``
sensing matrix with the waveform index running fastest.

Indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal

import numpy as np

# Dense Phi is refused above this many bytes.
PHI_MEMORY_BUDGET = 2 * 1024**3

EnsembleTag = Literal["gaussian", "fourier", "explicit"]


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Known modulation subspace: ``N x K`` with orthonormal columns."""

    entries: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        B = np.array(self.entries, dtype=complex)
        if B.ndim != 2:
            raise ValueError(f"basis must be 2-D, got shape {B.shape}")
        N, K = B.shape
        if K == 0 or K > N:
            raise ValueError(f"basis must satisfy 0 < K <= N, got N={N}, K={K}")
        resid = np.linalg.norm(B.conj().T @ B - np.eye(K), 2)
        if resid > self.tol:
            raise ValueError(f"basis columns are not orthonormal (||B^H B - I|| = {resid:.3e})")
        B.setflags(write=False)
        object.__setattr__(self, "entries", B)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @cached_property
    def mu_max(self) -> float:
        N = self.entries.shape[0]
        return float(np.sqrt(N) * np.abs(self.entries).max())


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Known atom matrix ``A`` (``N x M``)."""

    entries: np.ndarray
    ensemble_tag: EnsembleTag = "explicit"

    def __post_init__(self):
        A = np.array(self.entries)
        if A.ndim != 2:
            raise ValueError(f"dictionary must be 2-D, got shape {A.shape}")
        if not np.iscomplexobj(A):
            A = A.astype(float)
        if self.ensemble_tag not in ("gaussian", "fourier", "explicit"):
            raise ValueError(f"unknown ensemble tag {self.ensemble_tag!r}")
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class SupportSet:
    """Sorted, duplicate-free column indices of a ``K x M`` matrix."""

    indices: tuple[int, ...]
    M: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"support has duplicate indices: {idx}")
        bad = [i for i in idx if not 0 <= i < self.M]
        if bad:
            raise ValueError(f"support indices out of range [0, {self.M}): {bad}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def of(cls, indices: Iterable[int], M: int) -> "SupportSet":
        return cls(tuple(indices), M)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j) -> bool:
        return j in self.indices

    @property
    def array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int)

    @property
    def complement(self) -> np.ndarray:
        mask = np.ones(self.M, dtype=bool)
        mask[list(self.indices)] = False
        return np.flatnonzero(mask)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.M, dtype=bool)
        m[list(self.indices)] = True
        return m


def _as_support(T, M: int) -> SupportSet:
    return T if isinstance(T, SupportSet) else SupportSet.of(T, M)


@dataclass(frozen=True, eq=False)
class Gram:
    """Eigendecomposition of the ``N x N`` Gram matrix ``L L^*``."""

    eigvals: np.ndarray
    eigvecs: np.ndarray
    # eigenvalues at or below this are treated as zero
    cutoff: float


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    """``L : C^{K x M} -> C^N`` built from a dictionary and a subspace basis."""

    dictionary: Dictionary
    basis: SubspaceBasis
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.dictionary, Dictionary):
            object.__setattr__(self, "dictionary", Dictionary(self.dictionary))
        if not isinstance(self.basis, SubspaceBasis):
            object.__setattr__(self, "basis", SubspaceBasis(self.basis))
        if self.dictionary.shape[0] != self.basis.shape[0]:
            raise ValueError(
                f"dictionary has {self.dictionary.shape[0]} rows but basis has {self.basis.shape[0]}"
            )

    @property
    def A(self) -> np.ndarray:
        return self.dictionary.entries

    @property
    def B(self) -> np.ndarray:
        return self.basis.entries

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.A.shape[1]

    @property
    def K(self) -> int:
        return self.B.shape[1]

    @property
    def b_rows(self) -> np.ndarray:
        """``b'_n`` stacked as columns (``K x N``), i.e. ``B^H``."""
        return self.B.conj().T

    @property
    def a_rows(self) -> np.ndarray:
        """``a'_n`` stacked as columns (``M x N``), i.e. ``A^T``."""
        return self.A.T

    def forward(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.shape != (self.K, self.M):
            raise ValueError(f"X has shape {X.shape}, operator expects {(self.K, self.M)}")
        # y[n] = sum_i B[n, i] (A X^T)[n, i]
        return np.einsum("nk,nk->n", self.B, self.A @ X.T)

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (self.N,):
            raise ValueError(f"y has shape {y.shape}, operator expects ({self.N},)")
        # sum_n y_n b'_n a'_n^H  ==  B^H diag(y) conj(A)
        return self.b_rows @ (y[:, None] * self.A.conj())

    def restrict(self, T) -> "MeasurementOperator":
        """Operator built from ``A_T`` (columns off ``T`` zeroed)."""
        T = _as_support(T, self.M)
        A_T = np.zeros_like(self.A)
        A_T[:, T.array] = self.A[:, T.array]
        return MeasurementOperator(Dictionary(A_T, self.dictionary.ensemble_tag), self.basis)

    def gram(self) -> Gram:
        """Cached eigendecomposition of ``L L^* = (B B^H) o (A A^H)``."""
        if "gram" not in self._cache:
            G = (self.B @ self.B.conj().T) * (self.A @ self.A.conj().T)
            G = 0.5 * (G + G.conj().T)
            w, U = np.linalg.eigh(G)
            cutoff = max(w.max(initial=0.0), 0.0) * self.N * np.finfo(float).eps
            w = np.where(w > cutoff, w, 0.0)
            self._cache["gram"] = Gram(w, U, cutoff)
        return self._cache["gram"]


def forward(X, op: MeasurementOperator) -> np.ndarray:
    return op.forward(X)


def adjoint(y, op: MeasurementOperator) -> np.ndarray:
    return op.adjoint(y)


def vec(X) -> np.ndarray:
    """Column-major stacking, matching the column order of :func:`assemble_phi`."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, K: int, M: int) -> np.ndarray:
    return np.asarray(x).reshape(K, M, order="F")


def assemble_phi(op: MeasurementOperator, memory_budget: int = PHI_MEMORY_BUDGET) -> np.ndarray:
    """Dense ``N x KM`` matrix with column ``i + K*j`` equal to ``diag(b_i) a_j``."""
    N, K, M = op.N, op.K, op.M
    nbytes = N * K * M * 16
    if nbytes > memory_budget:
        raise MemoryError(f"Phi would need {nbytes} bytes (> budget {memory_budget})")
    return (op.B[:, :, None] * op.A[:, None, :]).reshape(N, K * M, order="F")


def block_columns(T, K: int, M: int | None = None) -> np.ndarray:
    """Column indices of Phi belonging to the atoms in ``T`` (block order kept)."""
    idx = T.array if isinstance(T, SupportSet) else np.asarray(list(T), dtype=int)
    return (K * idx[:, None] + np.arange(K)[None, :]).reshape(-1)


def restrict_support(op_or_phi, T, K: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Phi_T, Phi_T_compact)``.

    ``Phi_T`` keeps all ``KM`` columns with those outside ``T``'s blocks zeroed;
    the compact form drops them (``N x KJ``).  A dense ``Phi`` may be passed
    instead of an operator, in which case ``K`` is required.
    """
    if isinstance(op_or_phi, MeasurementOperator):
        phi = assemble_phi(op_or_phi)
        K = op_or_phi.K
    else:
        phi = np.asarray(op_or_phi)
        if K is None:
            raise ValueError("K is required when passing a dense Phi")
    M = phi.shape[1] // K
    T = _as_support(T, M)
    cols = block_columns(T, K)
    phi_T = np.zeros_like(phi)
    phi_T[:, cols] = phi[:, cols]
    return phi_T, phi[:, cols]


def compact_phi(op: MeasurementOperator, T) -> np.ndarray:
    """``N x KJ`` restricted sensing matrix without assembling the full Phi."""
    T = _as_support(T, op.M)
    A_T = op.A[:, T.array]
    return (op.B[:, :, None] * A_T[:, None, :]).reshape(op.N, op.K * len(T), order="F")


def lift_to_G(X, A) -> np.ndarray:
    """``G = X conj(A)^H = X A^T`` (``K x N``)."""
    A = A.entries if isinstance(A, Dictionary) else np.asarray(A)
    X = np.asarray(X)
    if X.shape[1] != A.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns but A has {A.shape[1]}")
    return X @ A.T


def measure_G(G, B) -> np.ndarray:
    """Measurements ``<G, b'_n e_n^H>`` of a lifted ``K x N`` matrix."""
    B = B.entries if isinstance(B, SubspaceBasis) else np.asarray(B)
    # <G, b'_n e_n^H> = b'_n^H G e_n = sum_i B[n, i] G[i, n]
    return np.einsum("ni,in->n", B, np.asarray(G))


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def operator_norm_estimate(
    op: MeasurementOperator, tol: float = 1e-8, max_iter: int = 10000, seed: int = 0
) -> NormEstimate:
    """Largest singular value of ``L`` by power iteration on ``L^* L``.

    Stops once the eigen-residual ``||L^*L v - lam v||`` falls below
    ``tol * lam``.  An unconverged run still returns the best estimate.
    """
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((op.K, op.M)) + 1j * rng.standard_normal((op.K, op.M))
    V /= np.linalg.norm(V)
    lam = 0.0
    for it in range(1, max_iter + 1):
        W = op.adjoint(op.forward(V))
        lam = float(np.real(np.vdot(V, W)))
        resid = np.linalg.norm(W - lam * V)
        nW = np.linalg.norm(W)
        if nW == 0.0:
            return NormEstimate(0.0, it, True)
        if resid <= tol * lam:
            return NormEstimate(float(np.sqrt(lam)), it, True)
        V = W / nW
    return NormEstimate(float(np.sqrt(max(lam, 0.0))), max_iter, False)
