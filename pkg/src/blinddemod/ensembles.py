"""Random dictionaries, subspaces, ground truth and noise.

Seeds: anything :func:`numpy.random.default_rng` accepts (int, SeedSequence,
Generator).  :func:`instance_seeds` splits one seed into independent streams
for the dictionary, the ground truth and the noise, and :func:`trial_seed`
derives per-trial seeds from a master seed by mixing the trial key into the
``SeedSequence`` spawn key, so a trial is reproducible on its own no matter
which worker ran it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .operators import Dictionary, MeasurementOperator, SubspaceBasis, SupportSet

ENSEMBLE_CODES = {"gaussian": 0, "fourier": 1, "explicit": 2}


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def trial_seed(master_seed: int, key: Sequence[int]) -> np.random.SeedSequence:
    """Seed for one trial: ``SeedSequence(master_seed, spawn_key=key)``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))


def instance_seeds(seed) -> tuple[np.random.SeedSequence, ...]:
    """Split a seed into (dictionary, ground truth, noise) streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return tuple(ss.spawn(3))


def gaussian_dictionary(N: int, M: int, seed=None) -> Dictionary:
    """Real ``N x M`` dictionary with i.i.d. standard normal entries."""
    if N >= M:
        raise ValueError(f"dictionary must be overcomplete (N < M), got N={N}, M={M}")
    return Dictionary(_rng(seed).standard_normal((N, M)), "gaussian")


def dft_matrix(M: int) -> np.ndarray:
    """Unnormalized DFT matrix ``F[r, m] = exp(-2 pi i r m / M)`` with ``F^H F = M I``."""
    r = np.arange(M)
    return np.exp(-2j * np.pi * np.outer(r, r) / M)


def fourier_dictionary(N: int, M: int, seed=None) -> Dictionary:
    """``N`` rows of the unnormalized ``M x M`` DFT drawn uniformly with replacement."""
    if N >= M:
        raise ValueError(f"dictionary must be overcomplete (N < M), got N={N}, M={M}")
    rows = _rng(seed).integers(0, M, size=N)
    return Dictionary(np.exp(-2j * np.pi * np.outer(rows, np.arange(M)) / M), "fourier")


def make_dictionary(ensemble: str, N: int, M: int, seed=None) -> Dictionary:
    if ensemble == "gaussian":
        return gaussian_dictionary(N, M, seed)
    if ensemble == "fourier":
        return fourier_dictionary(N, M, seed)
    raise ValueError(f"unknown ensemble {ensemble!r} (expected 'gaussian' or 'fourier')")


def dft_subspace(N: int, K: int) -> SubspaceBasis:
    """First ``K`` columns of the normalized ``N x N`` DFT matrix."""
    if not 0 < K < N:
        raise ValueError(f"need 0 < K < N, got N={N}, K={K}")
    n = np.arange(N)
    return SubspaceBasis(np.exp(-2j * np.pi * np.outer(n, np.arange(K)) / N) / np.sqrt(N))


def coherence(B) -> float:
    """``mu_max = max_ij sqrt(N) |B_ij|``."""
    B = B.entries if isinstance(B, SubspaceBasis) else np.asarray(B)
    return float(np.sqrt(B.shape[0]) * np.abs(B).max())


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Sparse lifted unknown ``X0`` together with its factors."""

    support: SupportSet
    amplitudes: np.ndarray  # (J,), positive
    waveforms: np.ndarray  # (K, J), unit-norm columns
    K: int
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.amplitudes, dtype=float)
        H = np.asarray(self.waveforms, dtype=complex).reshape(self.K, len(self.support))
        if c.shape != (len(self.support),):
            raise ValueError("one amplitude per support index is required")
        if np.any(c <= 0):
            raise ValueError("amplitudes must be positive")
        if H.size and np.max(np.abs(np.linalg.norm(H, axis=0) - 1)) > 1e-12:
            raise ValueError("waveform columns must have unit norm")
        object.__setattr__(self, "amplitudes", c)
        object.__setattr__(self, "waveforms", H)

    @property
    def M(self) -> int:
        return self.support.M

    @property
    def J(self) -> int:
        return len(self.support)

    @property
    def X0(self) -> np.ndarray:
        X = np.zeros((self.K, self.M), dtype=complex)
        X[:, self.support.array] = self.waveforms * self.amplitudes
        return X

    @classmethod
    def from_matrix(cls, X0, seed=None, tol: float = 0.0) -> "GroundTruth":
        """Factor a column-sparse matrix as ``x_j = c_j h_j``."""
        X0 = np.asarray(X0, dtype=complex)
        norms = np.linalg.norm(X0, axis=0)
        T = np.flatnonzero(norms > tol)
        H = X0[:, T] / norms[T]
        return cls(SupportSet.of(T, X0.shape[1]), norms[T], H, X0.shape[0], seed)


def random_ground_truth(M: int, K: int, J: int, seed=None) -> GroundTruth:
    """Uniform random support of size ``J``; complex normal waveforms; folded-normal amplitudes."""
    if not 0 <= J <= M:
        raise ValueError(f"need 0 <= J <= M, got J={J}, M={M}")
    rng = _rng(seed)
    T = rng.choice(M, size=J, replace=False)
    H = rng.standard_normal((K, J)) + 1j * rng.standard_normal((K, J))
    H /= np.linalg.norm(H, axis=0)
    c = np.abs(rng.standard_normal(J))
    # sort columns with the support so that waveforms line up with SupportSet order
    order = np.argsort(T)
    return GroundTruth(SupportSet.of(T, M), c[order], H[:, order], K,
                       seed if isinstance(seed, (int, np.integer)) else None)


def synthesize_measurements(gt: GroundTruth, A, B) -> np.ndarray:
    """``y = sum_j c_j diag(B h_j) a_j`` evaluated atom by atom."""
    A = A.entries if isinstance(A, Dictionary) else np.asarray(A)
    B = B.entries if isinstance(B, SubspaceBasis) else np.asarray(B)
    if A.shape[0] != B.shape[0] or A.shape[1] != gt.M or B.shape[1] != gt.K:
        raise ValueError(
            f"inconsistent dimensions: A {A.shape}, B {B.shape}, ground truth K={gt.K} M={gt.M}"
        )
    y = np.zeros(A.shape[0], dtype=complex)
    for c, h, j in zip(gt.amplitudes, gt.waveforms.T, gt.support):
        y += c * (B @ h) * A[:, j]
    return y


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level given either as an l2 budget or as a noise-to-signal ratio in dB."""

    eta: float | None = None
    target_nsr_db: float | None = None

    def __post_init__(self):
        if (self.eta is None) == (self.target_nsr_db is None):
            raise ValueError("exactly one of eta and target_nsr_db must be given")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be nonnegative")

    def norm_for(self, reference_norm: float | None) -> float:
        if self.eta is not None:
            return float(self.eta)
        if reference_norm is None:
            raise ValueError("an NSR target needs the reference signal norm ||X0||_F")
        return float(reference_norm) * 10.0 ** (self.target_nsr_db / 20.0)


def add_noise(y, spec: NoiseSpec, seed=None, reference_norm: float | None = None):
    """Add complex Gaussian noise rescaled to an exact l2 norm.

    Real and imaginary parts are i.i.d. standard normal before rescaling.  With
    an NSR target the norm is ``reference_norm * 10**(nsr_db / 20)``, where the
    reference is the Frobenius norm of ``X0``.  Returns ``(y_noisy, eta)``.
    """
    y = np.asarray(y, dtype=complex)
    target = spec.norm_for(reference_norm)
    if target == 0.0:
        return y.copy(), 0.0
    rng = _rng(seed)
    n = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    n *= target / np.linalg.norm(n)
    return y + n, float(np.linalg.norm(n))


@dataclass(frozen=True, eq=False)
class Instance:
    """Everything one trial needs: operator, ground truth, clean and noisy data."""

    op: MeasurementOperator
    truth: GroundTruth
    y_clean: np.ndarray
    y: np.ndarray
    eta: float


def make_instance(ensemble: str, N: int, M: int, K: int, J: int, seed=None,
                  noise: NoiseSpec | None = None, basis: SubspaceBasis | None = None) -> Instance:
    """Sample a full problem instance; noise is relative to ``||X0||_F`` for NSR specs."""
    s_dict, s_truth, s_noise = instance_seeds(seed)
    A = make_dictionary(ensemble, N, M, s_dict)
    B = basis if basis is not None else dft_subspace(N, K)
    op = MeasurementOperator(A, B)
    gt = random_ground_truth(M, K, J, s_truth)
    y0 = synthesize_measurements(gt, A, B)
    if noise is None:
        return Instance(op, gt, y0, y0.copy(), 0.0)
    y, eta = add_noise(y0, noise, s_noise, reference_norm=np.linalg.norm(gt.X0))
    return Instance(op, gt, y0, y, eta)
