"""Block Fourier analysis of block-circulant operators.

A block-circulant matrix with b blocks of size k is block-diagonalized by
the sparse Fourier matrix W with entries
``W[l, j] = delta(l % k, j % k) * exp(-2i*pi*(j // k)*l / n)``
(unitary after division by sqrt(b)).  The fast path builds each k x k
diagonal block directly from the matrix band: the block for mode s places
``exp(-2i*pi*s*m/n) * K[l0, (l0 + m) % n]`` at column ``(l0 + m) % k`` of
row ``l0`` for every band offset ``m``; the phase applies to every offset,
not only those crossing block boundaries, which is what matches the dense
transform entrywise.

Two-dimensional problems on an n x n periodic grid with coefficients that
repeat with period c use the tensor-product transform W (x) W.  The mode
set is all pairs (s1, s2) with s_i in 0..n/c-1; s1 attaches to x-offsets
and s2 to y-offsets.  A's symbol at mode s is the c^2 x c^2 matrix with
rows/columns indexed r = y0*c + x0 in-block.  The prolongation's symbol
(c^2 rows, (c/2)^2 columns) carries the conjugate phase
``exp(+2i*pi*(s1*dx + s2*dy)/n)`` because the fine row sits at offset
(dy, dx) *from* the column's coarse position.

The Gauss-Seidel symbol uses the circulant lower part: the stencil's
center, south, south-west, south-east and west connections assembled with
the same phase rule (wrap-around ordering violations are ignored, as is
standard in multigrid Fourier smoothing analysis).  Dense verification
oracles use the same convention so the equivalence is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "FourierModeSet",
    "ModeSymbols",
    "DegenerateModeError",
    "DegenerateInstanceError",
    "build_W_dense",
    "build_W_2d",
    "block_diagonalize_dense",
    "theorem1_blocks",
    "mode_matrix_A",
    "mode_matrix_L",
    "mode_matrix_P",
    "mode_error_symbol",
    "mode_symbols_2d",
    "frobenius_loss",
    "dump_mode_frobenius",
]

LOWER_OFFSETS = ((0, 0), (0, -1), (-1, -1), (-1, 0), (-1, 1))
ALL_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


class DegenerateModeError(ValueError):
    pass


class DegenerateInstanceError(ValueError):
    pass


@dataclass(frozen=True)
class FourierModeSet:
    """All 2D modes (s1, s2) for block side c on an n x n grid, minus the
    excluded set (by default the zeroth mode, whose block is undefined for
    singular periodic operators)."""

    n: int
    c: int = 8
    excluded: frozenset = field(default_factory=lambda: frozenset({(0, 0)}))

    def __post_init__(self):
        if self.c % 2 != 0 or self.c < 3:
            raise ValueError(f"block side must be even and >= 3, got {self.c}")
        if self.n % self.c != 0:
            raise ValueError(f"block side {self.c} must divide grid side {self.n}")

    @property
    def per_axis(self):
        return self.n // self.c

    @property
    def modes(self):
        """Row-major (s1, s2) enumeration of all modes, excluded ones included."""
        r = self.per_axis
        return [(s1, s2) for s1 in range(r) for s2 in range(r)]

    @property
    def active_modes(self):
        return [m for m in self.modes if m not in self.excluded]


@dataclass(frozen=True)
class ModeSymbols:
    """Per-mode symbol blocks of the two-grid components."""

    mode: tuple
    Ahat: np.ndarray
    Lhat: np.ndarray
    Phat: np.ndarray
    Mhat: np.ndarray


def build_W_dense(n, k):
    """The unnormalized block Fourier matrix; (1/sqrt(b)) W is unitary."""
    if n % k != 0:
        raise ValueError(f"block size {k} must divide dimension {n}")
    l = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    s = j // k
    return np.where(l % k == j % k, np.exp(-2j * np.pi * s * l / n), 0.0)


def build_W_2d(n, c):
    """Tensor-product transform for n x n grids in row-major (y, x) order."""
    W = build_W_dense(n, c)
    return np.kron(W, W)


def block_diagonalize_dense(K, k):
    """Block-diagonalize a block-circulant matrix via the dense W transform.

    Checks the block-circulant property K[l, j] = K[(l-k) % n, (j-k) % n],
    computes (1/b) W* K W, asserts the off-diagonal blocks vanish, and
    returns the b diagonal blocks.
    """
    K = np.asarray(K)
    n = K.shape[0]
    if K.shape != (n, n) or n % k != 0:
        raise ValueError("matrix must be square with the block size dividing it")
    shifted = np.roll(np.roll(K, k, axis=0), k, axis=1)
    mismatch = ~np.isclose(K, shifted, rtol=1e-12, atol=1e-12)
    if np.any(mismatch):
        l, j = np.argwhere(mismatch)[0]
        raise ValueError(f"input is not block-circulant: K[{l}, {j}] != K[{(l - k) % n}, {(j - k) % n}]")
    b = n // k
    W = build_W_dense(n, k)
    Khat = W.conj().T @ K @ W / b
    blocks = []
    scale = max(1.0, float(np.max(np.abs(Khat))))
    for s in range(b):
        rows = slice(s * k, (s + 1) * k)
        off = Khat[rows].copy()
        off[:, rows] = 0.0
        if np.max(np.abs(off)) > 1e-10 * scale:
            raise AssertionError(f"off-diagonal block mass {np.max(np.abs(off)):.2e} at mode {s}")
        blocks.append(Khat[rows, rows].copy())
    return blocks


def theorem1_blocks(band, offsets, n, k, _phase_error=0.0):
    """Fast per-mode blocks of a band-limited block-circulant matrix.

    ``band[l0, i]`` is ``K[l0, (l0 + offsets[i]) % n]`` for the first block
    of rows, ``l0 = 0..k-1``.  The band must fit in a block
    (max(offsets) - min(offsets) + 1 <= k).  ``_phase_error`` is a test
    hook that corrupts the phases to exercise negative controls.
    """
    band = np.asarray(band, dtype=complex)
    offsets = np.asarray(offsets, dtype=int)
    if band.shape != (k, len(offsets)):
        raise ValueError(f"band must have shape ({k}, {len(offsets)}), got {band.shape}")
    if offsets.max() - offsets.min() + 1 > k:
        raise ValueError("band is too wide for the block size")
    b = n // k
    blocks = [np.zeros((k, k), dtype=complex) for _ in range(b)]
    l0 = np.arange(k)
    for s in range(b):
        blk = blocks[s]
        for i, m in enumerate(offsets):
            phase = np.exp(-2j * np.pi * s * m / n + 1j * _phase_error)
            blk[l0, (l0 + m) % k] += phase * band[:, i]
    return blocks


def mode_matrix_A(acore, s1, s2, n, offsets=ALL_OFFSETS):
    """Symbol of a block-periodic stencil operator at mode (s1, s2).

    ``acore`` is the (c, c, 3, 3) stencil grid of one coefficient block;
    rows and columns are indexed r = y0*c + x0.
    """
    c = acore.shape[0]
    A = np.zeros((c * c, c * c), dtype=complex)
    y0, x0 = np.divmod(np.arange(c * c), c)
    for dy, dx in offsets:
        vals = acore[y0, x0, dy + 1, dx + 1]
        cols = ((y0 + dy) % c) * c + (x0 + dx) % c
        A[np.arange(c * c), cols] += np.exp(-2j * np.pi * (s1 * dx + s2 * dy) / n) * vals
    return A


def mode_matrix_L(acore, s1, s2, n):
    """Symbol of the circulant lexicographic-lower part (center, s, sw, se, w)."""
    return mode_matrix_A(acore, s1, s2, n, offsets=LOWER_OFFSETS)


def mode_matrix_P(pcore, s1, s2, n):
    """Symbol of a block-periodic prolongation at mode (s1, s2).

    ``pcore`` is the (c/2, c/2, 3, 3) column-stencil grid of one coarse
    block; the result has c^2 rows and (c/2)^2 columns.
    """
    mc = pcore.shape[0]
    c = 2 * mc
    P = np.zeros((c * c, mc * mc), dtype=complex)
    Y0, X0 = np.divmod(np.arange(mc * mc), mc)
    cols = np.arange(mc * mc)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            vals = pcore[Y0, X0, dy + 1, dx + 1]
            rows = ((2 * Y0 + dy) % c) * c + (2 * X0 + dx) % c
            P[rows, cols] += np.exp(2j * np.pi * (s1 * dx + s2 * dy) / n) * vals
    return P


def mode_error_symbol(Ahat, Lhat, Phat, cfg):
    """Two-grid symbol S^{s2} (I - P (P* A P)^{-1} P* A) S^{s1} at one mode."""
    k = Ahat.shape[0]
    eye = np.eye(k, dtype=complex)
    Shat = eye - np.linalg.solve(Lhat, Ahat)
    G = Phat.conj().T @ Ahat @ Phat
    sv = np.linalg.svd(G, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-14 * sv[0]:
        raise np.linalg.LinAlgError("coarse symbol P* A P is singular")
    coarse = np.linalg.solve(G, Phat.conj().T @ Ahat)
    Chat = eye - Phat @ coarse
    return np.linalg.matrix_power(Shat, cfg.s2) @ Chat @ np.linalg.matrix_power(Shat, cfg.s1)


def mode_symbols_2d(acore, pcore, mode, n, cfg):
    """Assemble all symbol blocks for one mode of a block-periodic instance."""
    s1, s2 = mode
    Ahat = mode_matrix_A(acore, s1, s2, n)
    Lhat = mode_matrix_L(acore, s1, s2, n)
    Phat = mode_matrix_P(pcore, s1, s2, n)
    try:
        Mhat = mode_error_symbol(Ahat, Lhat, Phat, cfg)
    except np.linalg.LinAlgError as exc:
        raise DegenerateModeError(f"singular coarse symbol at mode {mode}") from exc
    if not np.all(np.isfinite(Mhat)):
        raise DegenerateModeError(f"non-finite error symbol at mode {mode}")
    return ModeSymbols(mode=mode, Ahat=Ahat, Lhat=Lhat, Phat=Phat, Mhat=Mhat)


def frobenius_loss(acore, pcore, n, cfg, mode_set=None):
    """Squared Frobenius norm of the two-grid error propagation matrix,
    summed over non-excluded modes in row-major (s1, s2) order."""
    if mode_set is None:
        mode_set = FourierModeSet(n=n, c=acore.shape[0])
    total = 0.0
    for mode in mode_set.modes:
        if mode in mode_set.excluded:
            continue
        try:
            sym = mode_symbols_2d(acore, pcore, mode, n, cfg)
        except DegenerateModeError as exc:
            raise DegenerateInstanceError(str(exc)) from exc
        total += float(np.sum(np.abs(sym.Mhat) ** 2))
    return total


def dump_mode_frobenius(acore, pcore, n, cfg, path, mode_set=None):
    """Write per-mode squared Frobenius norms to CSV (columns s1, s2, frob2)."""
    if mode_set is None:
        mode_set = FourierModeSet(n=n, c=acore.shape[0])
    lines = ["s1,s2,frob2"]
    for mode in mode_set.modes:
        if mode in mode_set.excluded:
            continue
        sym = mode_symbols_2d(acore, pcore, mode, n, cfg)
        lines.append(f"{mode[0]},{mode[1]},{float(np.sum(np.abs(sym.Mhat) ** 2))!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
