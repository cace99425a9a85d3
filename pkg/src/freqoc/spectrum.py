"""DFT machinery: band constraints on sampled signals and the ideal filter.

A "banned bin" set selects DFT coefficients of a real signal that must
vanish.  Splitting the corresponding rows of the DFT matrix into real and
imaginary parts (one representative per conjugate pair) yields an affine
equality map

    F(v_0, ..., v_{K-1}) = offset + sum_t G_t v_t

that is zero exactly when every banned coefficient is zero.  The same bin
sets drive :func:`ideal_filter`, the solve-then-filter baseline that zeroes
banned bins after the fact.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "BannedBinSet",
    "FrequencyConstraint",
    "dft_matrix",
    "component_spectrum",
    "build_band_constraint",
    "ideal_filter",
    "constraint_residual",
    "write_spectrum_csv",
]


def dft_matrix(N: int) -> np.ndarray:
    """Return the N x N DFT matrix with entries exp(-2*pi*i*j*k/N), zero-based."""
    if N < 1:
        raise ValueError(f"signal length must be >= 1, got {N}")
    jk = np.outer(np.arange(N), np.arange(N))
    return np.exp(-2j * np.pi * jk / N)


def component_spectrum(signal: np.ndarray, k: int) -> np.ndarray:
    """DFT of the k-th component sequence of a (K, dim) signal.

    ``k`` is a 1-based component index, matching the convention used for
    banned-bin bookkeeping.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    dim = signal.shape[1]
    if not 1 <= k <= dim:
        raise ValueError(f"component index {k} outside 1..{dim}")
    return np.fft.fft(signal[:, k - 1])


@dataclass(frozen=True)
class BannedBinSet:
    """Zero-based DFT bins to suppress, keyed by 1-based signal component.

    Components absent from the mapping have no banned bins.  For a real
    signal the set must be conjugate-symmetric: bin j banned iff bin
    ``(N - j) % N`` banned.  Symmetry is validated against a concrete
    signal length by :meth:`validate`.
    """

    bins_by_component: Mapping[int, frozenset] = field(default_factory=dict)

    @classmethod
    def uniform(cls, bins: Iterable[int], dim: int) -> "BannedBinSet":
        """Ban the same bins on every one of ``dim`` components."""
        b = frozenset(int(j) for j in bins)
        return cls({k: b for k in range(1, dim + 1)})

    def component_bins(self, k: int) -> frozenset:
        return self.bins_by_component.get(k, frozenset())

    def is_empty(self) -> bool:
        return all(len(b) == 0 for b in self.bins_by_component.values())

    def validate(self, N: int, dim: int) -> None:
        for k, bins in self.bins_by_component.items():
            if not 1 <= k <= dim:
                raise ValueError(f"banned-bin component {k} outside 1..{dim}")
            for j in bins:
                if not 0 <= j < N:
                    raise ValueError(f"banned bin {j} outside 0..{N - 1}")
                if (N - j) % N not in bins:
                    raise ValueError(
                        f"banned bins not conjugate-symmetric: bin {j} lacks partner {(N - j) % N}"
                    )


@dataclass(frozen=True)
class FrequencyConstraint:
    """Affine equality map ``v -> offset + sum_t stage_maps[t] @ v_t``.

    ``stage_maps`` holds one (rows, dim) matrix per sample; the map takes a
    (signal_len, dim) signal to an R^rows residual.  Construction through
    :func:`build_band_constraint` guarantees full row rank.
    """

    stage_maps: tuple
    offset: np.ndarray

    def __post_init__(self):
        if not self.stage_maps:
            raise ValueError("frequency constraint needs at least one stage map")
        rows = self.stage_maps[0].shape[0]
        for t, G in enumerate(self.stage_maps):
            if G.ndim != 2 or G.shape[0] != rows:
                raise ValueError(f"stage map {t} has shape {G.shape}, expected ({rows}, dim)")
        if self.offset.shape != (rows,):
            raise ValueError(f"offset shape {self.offset.shape} != ({rows},)")

    @property
    def rows(self) -> int:
        return self.stage_maps[0].shape[0]

    @property
    def dim(self) -> int:
        return self.stage_maps[0].shape[1]

    @property
    def signal_len(self) -> int:
        return len(self.stage_maps)

    def residual(self, signal: np.ndarray) -> np.ndarray:
        signal = np.atleast_2d(np.asarray(signal, dtype=float))
        if signal.shape != (self.signal_len, self.dim):
            raise ValueError(
                f"signal shape {signal.shape} != ({self.signal_len}, {self.dim})"
            )
        out = self.offset.copy()
        for t, G in enumerate(self.stage_maps):
            out += G @ signal[t]
        return out

    def stacked_matrix(self) -> np.ndarray:
        """Dense (rows, signal_len*dim) Jacobian, stage blocks side by side."""
        return np.hstack(self.stage_maps)


def _pair_representatives(bins: frozenset, N: int):
    """One representative per conjugate pair, ascending; flags self-conjugacy."""
    reps = sorted({min(j, (N - j) % N) for j in bins})
    return [(j, j == (N - j) % N) for j in reps]


def build_band_constraint(N: int, dim: int, banned: BannedBinSet) -> FrequencyConstraint:
    """Turn banned DFT bins into a full-row-rank affine equality constraint.

    For each banned conjugate pair, the representative bin contributes its
    real DFT row and, unless self-conjugate (bin 0, or N/2 for even N), its
    imaginary row.  The offset is zero, so the residual vanishes exactly
    when all banned spectral entries vanish.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    banned.validate(N, dim)
    t = np.arange(N)
    rows = []  # (component, per-stage coefficient vector) pairs
    for k in range(1, dim + 1):
        for j, self_conj in _pair_representatives(banned.component_bins(k), N):
            rows.append((k, np.cos(2.0 * np.pi * j * t / N)))
            if not self_conj:
                rows.append((k, -np.sin(2.0 * np.pi * j * t / N)))
    if not rows:
        raise ValueError("banned bin set is empty; no constraint to build")
    ell = len(rows)
    stage_maps = []
    for s in range(N):
        G = np.zeros((ell, dim))
        for r, (k, coeffs) in enumerate(rows):
            G[r, k - 1] = coeffs[s]
        stage_maps.append(G)
    return FrequencyConstraint(tuple(stage_maps), np.zeros(ell))


def ideal_filter(signal: np.ndarray, banned: BannedBinSet) -> np.ndarray:
    """Zero the banned DFT bins of each component and transform back.

    This is the orthogonal projection onto the subspace of signals with
    vanishing banned coefficients; it is idempotent and leaves unbanned
    bins untouched.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    K, dim = signal.shape
    banned.validate(K, dim)
    out = np.empty_like(signal)
    for k in range(1, dim + 1):
        spec = np.fft.fft(signal[:, k - 1])
        idx = sorted(banned.component_bins(k))
        if idx:
            spec[idx] = 0.0
        out[:, k - 1] = np.fft.ifft(spec).real
    return out


def constraint_residual(fc: FrequencyConstraint, signal: np.ndarray) -> np.ndarray:
    """Evaluate ``offset + sum_t G_t v_t``; the zero vector means satisfied."""
    return fc.residual(signal)


def write_spectrum_csv(path, signal: np.ndarray) -> None:
    """Write per-component spectra as CSV.

    Columns: component, bin, omega_rad_per_sample, re, im, magnitude.
    Floats carry 17 significant digits so a round trip is lossless.
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    K, dim = signal.shape
    with open(path, "w", newline="\n") as fh:
        fh.write("component,bin,omega_rad_per_sample,re,im,magnitude\n")
        for k in range(1, dim + 1):
            spec = np.fft.fft(signal[:, k - 1])
            for j in range(K):
                omega = 2.0 * np.pi * j / K
                fh.write(
                    f"{k},{j},{omega:.17g},{spec[j].real:.17g},"
                    f"{spec[j].imag:.17g},{abs(spec[j]):.17g}\n"
                )
