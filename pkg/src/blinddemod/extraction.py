"""Read amplitudes, waveforms and modulations off a recovered lifted matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import SubspaceBasis, SupportSet
from .textio import _fmt


def extract_support(X_hat, threshold: float = 1e-3) -> SupportSet:
    """Columns whose norm exceeds ``threshold`` times the largest column norm."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    X_hat = np.asarray(X_hat)
    norms = np.linalg.norm(X_hat, axis=0)
    top = norms.max(initial=0.0)
    if top == 0.0:
        return SupportSet((), X_hat.shape[1])
    return SupportSet.of(np.flatnonzero(norms > threshold * top), X_hat.shape[1])


@dataclass(frozen=True, eq=False)
class RecoveredModel:
    support: SupportSet
    amplitudes: np.ndarray  # (J,)
    waveforms: np.ndarray  # (K, J), unit columns
    modulations: np.ndarray  # (N, J), column j is diag(D_j) = B h_j

    def __len__(self) -> int:
        return len(self.support)

    def to_table(self) -> str:
        """``index c h_1 ... h_K`` per line, ``h`` entries as ``re,im`` pairs."""
        K = self.waveforms.shape[0]
        head = "# index c " + " ".join(f"h{i}" for i in range(K))
        lines = [head.rstrip()]
        for j, c, h in zip(self.support, self.amplitudes, self.waveforms.T):
            lines.append(" ".join([str(j), _fmt(c)] + [f"{_fmt(v.real)},{_fmt(v.imag)}" for v in h]))
        return "\n".join(lines) + "\n"


def canonical_phase(h) -> np.ndarray:
    """Rotate ``h`` so its largest-magnitude entry is real and positive."""
    h = np.asarray(h)
    k = np.argmax(np.abs(h))
    if h[k] == 0:
        return h
    return h * (np.abs(h[k]) / h[k])


def extract_parameters(X_hat, B, threshold: float = 1e-3,
                       canonicalize: bool = False) -> RecoveredModel:
    """``c_j = ||x_j||``, ``h_j = x_j / c_j`` and ``D_j = diag(B h_j)`` on the support."""
    X_hat = np.asarray(X_hat)
    B = B.entries if isinstance(B, SubspaceBasis) else np.asarray(B)
    if B.shape[1] != X_hat.shape[0]:
        raise ValueError(f"B has {B.shape[1]} columns but X_hat has {X_hat.shape[0]} rows")
    T = extract_support(X_hat, threshold)
    cols = X_hat[:, T.array]
    c = np.linalg.norm(cols, axis=0)
    H = cols / c if len(T) else cols.astype(complex)
    if canonicalize:
        H = np.column_stack([canonical_phase(h) for h in H.T]) if len(T) else H
    return RecoveredModel(T, c, H, B @ H)
