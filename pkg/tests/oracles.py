"""Independent brute-force oracles for the test suite.

These deliberately re-derive quantities with naive loops, separate from the
library's own assembly helpers, so each check has two routes.
"""

import numpy as np


def dense_from_stencils(op):
    """Naive dense assembly straight from the stencil definition."""
    m = op.grid_side
    mask = op.mask
    index = {}
    k = 0
    for i in range(m):
        for j in range(m):
            if mask[i, j]:
                index[(i, j)] = k
                k += 1
    A = np.zeros((k, k))
    for (i, j), row in index.items():
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ii, jj = i + dy, j + dx
                if op.periodic:
                    ii, jj = ii % m, jj % m
                if (ii, jj) in index:
                    A[row, index[(ii, jj)]] += op.stencils[i, j, dy + 1, dx + 1]
    return A


def dense_from_pmap(pmap, op=None):
    """Naive dense prolongation matrix."""
    m = pmap.fine_side
    mc = pmap.coarse_side
    off = 0 if pmap.periodic else 1
    if op is not None:
        mask = op.mask
    else:
        mask = np.ones((m, m), dtype=bool)
    fine_index = {}
    k = 0
    for i in range(m):
        for j in range(m):
            if mask[i, j]:
                fine_index[(i, j)] = k
                k += 1
    coarse_index = {}
    k = 0
    for I in range(mc):
        for J in range(mc):
            if mask[2 * I + off, 2 * J + off]:
                coarse_index[(I, J)] = k
                k += 1
    P = np.zeros((len(fine_index), len(coarse_index)))
    for (I, J), col in coarse_index.items():
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ii, jj = 2 * I + off + dy, 2 * J + off + dx
                if pmap.periodic:
                    ii, jj = ii % m, jj % m
                if (ii, jj) in fine_index:
                    P[fine_index[(ii, jj)], col] += pmap.col_stencils[I, J, dy + 1, dx + 1]
    return P


def eq2_stencil(gsw, gse, gnw, gne, sigma=0.0):
    """Hand-assembled 9-point stencil from the four surrounding cell values."""
    st = np.zeros((3, 3))
    st[0, 0] = -gsw / 3
    st[0, 2] = -gse / 3
    st[2, 0] = -gnw / 3
    st[2, 2] = -gne / 3
    st[2, 1] = -(gnw + gne) / 6
    st[0, 1] = -(gse + gsw) / 6
    st[1, 0] = -(gsw + gnw) / 6
    st[1, 2] = -(gne + gse) / 6
    st[1, 1] = 2 * (gsw + gse + gnw + gne) / 3 + sigma
    return st


def gs_error_matrix(A):
    """S = I - L^{-1} A with L the lower triangle including the diagonal."""
    L = np.tril(A)
    return np.eye(A.shape[0]) - np.linalg.solve(L, A)


def two_grid_matrix(A, P, s1=1, s2=1):
    S = gs_error_matrix(A)
    C = np.eye(A.shape[0]) - P @ np.linalg.solve(P.T @ A @ P, P.T @ A)
    return np.linalg.matrix_power(S, s2) @ C @ np.linalg.matrix_power(S, s1)
