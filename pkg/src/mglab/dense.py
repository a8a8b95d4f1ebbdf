"""Dense matrix views of stencil operators and prolongation maps.

These are the small-scale reference routines backing the dense error
propagation oracle and the Fourier verification suite.  Unknowns are
ordered row-major over active grid points; ``flatten_grid`` and
``unflatten_grid`` convert between grid arrays and unknown vectors.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "flatten_grid",
    "unflatten_grid",
    "assemble_dense",
    "assemble_sparse",
    "prolongation_dense",
]


def flatten_grid(u, mask=None):
    if mask is None:
        return np.asarray(u).ravel().copy()
    return np.asarray(u)[mask].copy()


def unflatten_grid(vec, side, mask=None):
    if mask is None:
        return np.asarray(vec).reshape(side, side).copy()
    out = np.zeros((side, side), dtype=np.asarray(vec).dtype)
    out[mask] = vec
    return out


def _active_index(op):
    """Map from grid position to unknown index; -1 for inactive points."""
    mask = op.mask
    idx = -np.ones((op.grid_side, op.grid_side), dtype=int)
    idx[mask] = np.arange(np.count_nonzero(mask))
    return idx


def assemble_dense(op):
    """Dense (N, N) matrix of a StencilOperator over its active unknowns."""
    m = op.grid_side
    idx = _active_index(op)
    N = int(idx.max()) + 1
    A = np.zeros((N, N))
    st = op.stencils
    periodic = op.periodic
    for i in range(m):
        for j in range(m):
            row = idx[i, j]
            if row < 0:
                continue
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    v = st[i, j, dy + 1, dx + 1]
                    if v == 0.0:
                        continue
                    ii, jj = i + dy, j + dx
                    if periodic:
                        ii %= m
                        jj %= m
                    elif not (0 <= ii < m and 0 <= jj < m):
                        continue
                    col = idx[ii, jj]
                    if col >= 0:
                        A[row, col] += v
    return A


def assemble_sparse(op):
    """CSR matrix of a StencilOperator over its active unknowns."""
    import scipy.sparse as sp

    m = op.grid_side
    idx = _active_index(op)
    N = int(idx.max()) + 1
    rows, cols, vals = [], [], []
    st = op.stencils
    periodic = op.periodic
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            v = st[:, :, dy + 1, dx + 1]
            if periodic:
                nb = np.roll(np.roll(idx, -dy, axis=0), -dx, axis=1)
                sel = (idx >= 0) & (nb >= 0) & (v != 0.0)
            else:
                nb = -np.ones_like(idx)
                ys = slice(max(0, -dy), m - max(0, dy))
                xs = slice(max(0, -dx), m - max(0, dx))
                yd = slice(max(0, dy), m - max(0, -dy))
                xd = slice(max(0, dx), m - max(0, -dx))
                nb[ys, xs] = idx[yd, xd]
                sel = (idx >= 0) & (nb >= 0) & (v != 0.0)
            rows.append(idx[sel])
            cols.append(nb[sel])
            vals.append(v[sel])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def prolongation_dense(pmap, fine_op=None):
    """Dense (N_fine, N_coarse) matrix of a ProlongationMap.

    For masked operators pass ``fine_op`` so inactive fine rows and coarse
    columns are excluded consistently with ``assemble_dense``.
    """
    m = pmap.fine_side
    mc = pmap.coarse_side
    off = 0 if pmap.periodic else 1
    if fine_op is not None:
        fine_mask = fine_op.mask
    else:
        fine_mask = np.ones((m, m), dtype=bool)
    fine_idx = -np.ones((m, m), dtype=int)
    fine_idx[fine_mask] = np.arange(np.count_nonzero(fine_mask))
    coarse_mask = fine_mask[off::2, off::2][:mc, :mc]
    coarse_idx = -np.ones((mc, mc), dtype=int)
    coarse_idx[coarse_mask] = np.arange(np.count_nonzero(coarse_mask))

    P = np.zeros((int(fine_idx.max()) + 1, int(coarse_idx.max()) + 1))
    w = pmap.col_stencils
    for I in range(mc):
        for J in range(mc):
            col = coarse_idx[I, J]
            if col < 0:
                continue
            fy, fx = 2 * I + off, 2 * J + off
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    v = w[I, J, dy + 1, dx + 1]
                    if v == 0.0:
                        continue
                    ii, jj = fy + dy, fx + dx
                    if pmap.periodic:
                        ii %= m
                        jj %= m
                    elif not (0 <= ii < m and 0 <= jj < m):
                        continue
                    row = fine_idx[ii, jj]
                    if row >= 0:
                        P[row, col] += v
    return P
