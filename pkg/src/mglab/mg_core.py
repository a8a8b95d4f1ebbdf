"""Multigrid machinery: Gauss-Seidel smoothing, Galerkin coarsening,
two-grid/V/W cycles, and dense error-propagation oracles.

The smoother is lexicographic (row-major) Gauss-Seidel; on periodic grids
entries that wrap to lexicographically later unknowns belong to the upper
part, exactly as in the splitting A = L + U with L the lower triangle
including the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dense as _dense
from .problem import BoundarySpec, StencilOperator
from .prolong import ProlongationMap, build_prolongation

__all__ = [
    "CycleConfig",
    "GridHierarchy",
    "CycleRun",
    "SingularSolveError",
    "apply",
    "gauss_seidel",
    "galerkin",
    "build_hierarchy",
    "solve_cycle",
    "dense_error_propagation",
    "spectral_radius",
    "error_propagation_operator",
    "asymptotic_factor",
]

_numba_setting = {"nogil": True, "cache": True}


class SingularSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class CycleConfig:
    """Cycle shape: pre/post sweep counts, recursion kind, coarsest size."""

    s1: int = 1
    s2: int = 1
    cycle_kind: str = "two-grid"
    coarsest_side: int = 4
    max_levels: Optional[int] = None
    dense_cap: int = 4096

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0 or self.s1 + self.s2 < 1:
            raise ValueError("need s1, s2 >= 0 and s1 + s2 >= 1")
        if self.cycle_kind not in ("two-grid", "v", "w"):
            raise ValueError(f"cycle kind must be 'two-grid', 'v' or 'w', got {self.cycle_kind!r}")


@dataclass
class GridHierarchy:
    """Operators and transfer maps from finest to coarsest level.

    ``operators[k]`` and ``prolongations[k]`` describe level k; the last
    level has no prolongation.  Coarsest-level factorizations are cached
    lazily; the hierarchy itself is immutable once built.
    """

    operators: list
    prolongations: list
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def num_levels(self):
        return len(self.operators)

    def solver(self, level):
        if level not in self._solvers:
            A = _dense.assemble_sparse(self.operators[level]).tocsc()
            try:
                lu = spla.splu(A)
            except RuntimeError as exc:
                raise SingularSolveError(f"coarse operator at level {level} is singular") from exc
            # splu can succeed on numerically singular systems; reject those.
            if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) < 1e-12 * np.max(
                np.abs(lu.U.diagonal())
            ):
                raise SingularSolveError(f"coarse operator at level {level} is singular")
            self._solvers[level] = lu
        return self._solvers[level]


@dataclass(frozen=True)
class CycleRun:
    """Per-cycle error reduction factors of a homogeneous-problem run."""

    factors: np.ndarray
    asymptotic: float
    flagged: bool = False
    diverged: bool = False


@nb.njit(**_numba_setting)
def _apply_kernel(st, u, periodic):
    m = u.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for dy in range(-1, 2):
                ii = i + dy
                if periodic:
                    ii %= m
                elif ii < 0 or ii >= m:
                    continue
                for dx in range(-1, 2):
                    jj = j + dx
                    if periodic:
                        jj %= m
                    elif jj < 0 or jj >= m:
                        continue
                    acc += st[i, j, dy + 1, dx + 1] * u[ii, jj]
            out[i, j] = acc
    return out


def apply(op, u):
    """Stencil application Au; periodic wraps, inactive neighbors count 0."""
    m = op.grid_side
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (m, m):
        raise ValueError(f"vector shape {u.shape} does not match grid side {m}")
    return _apply_kernel(op.stencils, u, op.periodic)


@nb.njit(**_numba_setting)
def _gs_sweeps_periodic(st, u, f, sweeps):
    m = u.shape[0]
    for _ in range(sweeps):
        for i in range(m):
            for j in range(m):
                acc = f[i, j]
                for dy in range(-1, 2):
                    ii = (i + dy) % m
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        jj = (j + dx) % m
                        acc -= st[i, j, dy + 1, dx + 1] * u[ii, jj]
                u[i, j] = acc / st[i, j, 1, 1]
    return u


@nb.njit(**_numba_setting)
def _gs_sweeps_dirichlet(st, mask, u, f, sweeps):
    m = u.shape[0]
    for _ in range(sweeps):
        for i in range(m):
            for j in range(m):
                if not mask[i, j]:
                    continue
                acc = f[i, j]
                for dy in range(-1, 2):
                    ii = i + dy
                    if ii < 0 or ii >= m:
                        continue
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        jj = j + dx
                        if jj < 0 or jj >= m:
                            continue
                        acc -= st[i, j, dy + 1, dx + 1] * u[ii, jj]
                u[i, j] = acc / st[i, j, 1, 1]
    return u


def gauss_seidel(op, u, f, sweeps):
    """Lexicographic Gauss-Seidel sweeps on Au = f, returning the update.

    Each vertex update uses the already-updated values of its row-major
    predecessors (in-place sweep semantics); the input array is not
    modified.
    """
    m = op.grid_side
    u = np.array(u, dtype=float)
    f = np.asarray(f, dtype=float)
    if u.shape != (m, m) or f.shape != (m, m):
        raise ValueError(f"vector shapes {u.shape}, {f.shape} do not match grid side {m}")
    if sweeps == 0:
        return u
    if op.periodic:
        return _gs_sweeps_periodic(op.stencils, u, f, sweeps)
    return _gs_sweeps_dirichlet(op.stencils, op.mask, u, f, sweeps)


def _coarse_pad_sample(arr, dy, dx, off, periodic):
    """Sample a fine array at coarse positions shifted by (dy, dx), zero-filled
    (Dirichlet) or wrapped (periodic) outside the grid."""
    m = arr.shape[0]
    mc = m // 2
    idx_y = (2 * np.arange(mc) + off + dy)
    idx_x = (2 * np.arange(mc) + off + dx)
    if periodic:
        return arr[np.ix_(idx_y % m, idx_x % m)]
    pad_width = ((1, 1), (1, 1)) + ((0, 0),) * (arr.ndim - 2)
    padded = np.pad(arr, pad_width)
    return padded[np.ix_(idx_y + 1, idx_x + 1)]


def _coarse_shift(arr, DY, DX, periodic):
    if periodic:
        return np.roll(np.roll(arr, -DY, axis=0), -DX, axis=1)
    mc = arr.shape[0]
    out = np.zeros_like(arr)
    ys = slice(max(0, DY), mc + min(0, DY))
    yd = slice(max(0, -DY), mc + min(0, -DY))
    xs = slice(max(0, DX), mc + min(0, DX))
    xd = slice(max(0, -DX), mc + min(0, -DX))
    out[yd, xd] = arr[ys, xs]
    return out


def galerkin(op, pmap):
    """Coarse operator P^T A P, again as a 3x3 stencil grid.

    The 9-point pattern is closed under the Galerkin product with
    bilinear-pattern prolongations: a coarse coupling at offset (DY, DX)
    collects terms P[p, c] * A[p, q] * P[q, c'] where p, q range over the
    two column supports.
    """
    if pmap.fine_side != op.grid_side:
        raise ValueError("prolongation fine side does not match operator")
    off = 0 if op.periodic else 1
    mc = pmap.coarse_side
    periodic = op.periodic
    w = pmap.col_stencils
    st = op.stencils
    coarse = np.zeros((mc, mc, 3, 3))
    for d1y in (-1, 0, 1):
        for d1x in (-1, 0, 1):
            w1 = w[:, :, d1y + 1, d1x + 1]
            if not np.any(w1):
                continue
            a_sub = _coarse_pad_sample(st, d1y, d1x, off, periodic)
            for d2y in (-1, 0, 1):
                for d2x in (-1, 0, 1):
                    a_val = a_sub[:, :, d2y + 1, d2x + 1]
                    term = w1 * a_val
                    if not np.any(term):
                        continue
                    sy, sx = d1y + d2y, d1x + d2x
                    for DY in (-1, 0, 1):
                        d3y = sy - 2 * DY
                        if d3y < -1 or d3y > 1:
                            continue
                        for DX in (-1, 0, 1):
                            d3x = sx - 2 * DX
                            if d3x < -1 or d3x > 1:
                                continue
                            w3 = _coarse_shift(w[:, :, d3y + 1, d3x + 1], DY, DX, periodic)
                            coarse[:, :, DY + 1, DX + 1] += term * w3
    if op.bc.domain_mask is not None:
        cmask = op.mask[off::2, off::2][:mc, :mc]
        bc = BoundarySpec(kind="dirichlet", domain_mask=cmask, sigma=0.0)
    else:
        bc = BoundarySpec(kind=op.bc.kind, domain_mask=None, sigma=0.0)
    return StencilOperator(stencils=coarse, bc=bc, grid_side=mc)


@nb.njit(**_numba_setting)
def _restrict_kernel(w, r, off, periodic):
    mc = w.shape[0]
    m = r.shape[0]
    out = np.zeros((mc, mc))
    for I in range(mc):
        for J in range(mc):
            fy = 2 * I + off
            fx = 2 * J + off
            acc = 0.0
            for dy in range(-1, 2):
                ii = fy + dy
                if periodic:
                    ii %= m
                elif ii < 0 or ii >= m:
                    continue
                for dx in range(-1, 2):
                    jj = fx + dx
                    if periodic:
                        jj %= m
                    elif jj < 0 or jj >= m:
                        continue
                    acc += w[I, J, dy + 1, dx + 1] * r[ii, jj]
            out[I, J] = acc
    return out


@nb.njit(**_numba_setting)
def _prolong_kernel(w, v, m, off, periodic):
    mc = w.shape[0]
    out = np.zeros((m, m))
    for I in range(mc):
        for J in range(mc):
            val = v[I, J]
            if val == 0.0:
                continue
            fy = 2 * I + off
            fx = 2 * J + off
            for dy in range(-1, 2):
                ii = fy + dy
                if periodic:
                    ii %= m
                elif ii < 0 or ii >= m:
                    continue
                for dx in range(-1, 2):
                    jj = fx + dx
                    if periodic:
                        jj %= m
                    elif jj < 0 or jj >= m:
                        continue
                    out[ii, jj] += w[I, J, dy + 1, dx + 1] * val
    return out


def restrict(pmap, r):
    """P^T r: fine grid residual to coarse grid."""
    off = 0 if pmap.periodic else 1
    r = np.ascontiguousarray(r, dtype=float)
    return _restrict_kernel(pmap.col_stencils, r, off, pmap.periodic)


def prolong(pmap, v):
    """P v: coarse grid correction to fine grid."""
    off = 0 if pmap.periodic else 1
    v = np.ascontiguousarray(v, dtype=float)
    return _prolong_kernel(pmap.col_stencils, v, pmap.fine_side, off, pmap.periodic)


def build_hierarchy(op, builder, cfg):
    """Coarsen with the given prolongation builder until the coarsest side.

    Two-grid configurations produce exactly two levels; V/W recursion
    bottoms out when the coarse side would drop below 3 or the side reaches
    ``cfg.coarsest_side``.
    """
    operators = [op]
    prolongations = []
    if cfg.cycle_kind == "two-grid":
        max_levels = 2
    else:
        max_levels = cfg.max_levels or 10_000
    while len(operators) < max_levels:
        current = operators[-1]
        if current.grid_side // 2 < 1:
            break
        if cfg.cycle_kind != "two-grid" and (
            current.grid_side <= cfg.coarsest_side or current.grid_side // 2 < 3
        ):
            break
        P = build_prolongation(current, builder)
        prolongations.append(P)
        operators.append(galerkin(current, P))
    return GridHierarchy(operators=operators, prolongations=prolongations)


def _coarse_solve(h, level, rhs):
    lu = h.solver(level)
    op = h.operators[level]
    vec = _dense.flatten_grid(rhs, op.mask if op.bc.domain_mask is not None else None)
    if op.bc.domain_mask is not None:
        sol = lu.solve(vec)
        return _dense.unflatten_grid(sol, op.grid_side, op.mask)
    sol = lu.solve(rhs.ravel())
    if not np.all(np.isfinite(sol)):
        raise SingularSolveError(f"singular coarse solve at level {level}")
    return sol.reshape(op.grid_side, op.grid_side)


def _cycle(h, level, f, u, cfg):
    op = h.operators[level]
    u = gauss_seidel(op, u, f, cfg.s1)
    r = f - apply(op, u)
    P = h.prolongations[level]
    rc = restrict(P, r)
    coarse_level = level + 1
    if coarse_level == h.num_levels - 1 or cfg.cycle_kind == "two-grid":
        v = _coarse_solve(h, coarse_level, rc)
    else:
        v = np.zeros_like(rc)
        calls = 2 if cfg.cycle_kind == "w" else 1
        for _ in range(calls):
            v = _cycle(h, coarse_level, rc, v, cfg)
    u = u + prolong(P, v)
    return gauss_seidel(op, u, f, cfg.s2)


def solve_cycle(h, f, u0, cfg):
    """One multigrid cycle (two-grid, V, or W) starting from u0."""
    if h.num_levels < 2:
        raise ValueError("hierarchy needs at least two levels for a cycle")
    m = h.operators[0].grid_side
    f = np.zeros((m, m)) if np.isscalar(f) and f == 0 else np.asarray(f, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if f.shape != (m, m) or u0.shape != (m, m):
        raise ValueError("right-hand side / initial guess shape mismatch")
    return _cycle(h, 0, f, u0, cfg)


def dense_error_propagation(op, pmap, cfg):
    """Explicit two-grid error propagation matrix M = S^{s2} C S^{s1}.

    S = I - L^{-1} A with L the lexicographic lower triangle including the
    diagonal; C = I - P (P^T A P)^{-1} P^T A with a dense coarse inverse.
    ``pmap`` may be a ProlongationMap or an explicit dense matrix (the
    latter supports full-rank square prolongations in tests).
    """
    A = _dense.assemble_dense(op)
    N = A.shape[0]
    if N > cfg.dense_cap:
        raise ValueError(f"{N} unknowns exceed the dense cap {cfg.dense_cap}")
    if isinstance(pmap, ProlongationMap):
        P = _dense.prolongation_dense(pmap, op)
    else:
        P = np.asarray(pmap, dtype=float)
    L = np.tril(A)
    S = np.eye(N) - scipy.linalg.solve_triangular(L, A, lower=True)
    Ac = P.T @ A @ P
    sv = np.linalg.svd(Ac, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise SingularSolveError("coarse operator P^T A P is singular")
    Cmat = np.eye(N) - P @ np.linalg.solve(Ac, P.T @ A)
    return np.linalg.matrix_power(S, cfg.s2) @ Cmat @ np.linalg.matrix_power(S, cfg.s1)


def _power_iteration(M, tol, maxiter, seed=0):
    rng = np.random.default_rng(seed)
    n = M.shape[0]
    best = 0.0
    converged = False
    for _ in range(3):  # deflation-free restarts for defective cases
        x = rng.standard_normal(n)
        nx = np.linalg.norm(x)
        est_prev = None
        for _ in range(maxiter):
            y = M @ x
            ny = np.linalg.norm(y)
            if ny < 1e-300:
                est = 0.0
                converged = True
                break
            est = ny / nx
            x, nx = y / ny, 1.0
            if est_prev is not None and abs(est - est_prev) <= tol * max(est, 1.0):
                converged = True
                break
            est_prev = est
        best = max(best, est)
        if converged and best > 0.0:
            break
    return best, converged


def spectral_radius(M, method="auto", tol=1e-8, maxiter=10_000, return_info=False):
    """Largest eigenvalue magnitude of a dense matrix.

    ``method`` is "dense" (eigensolve), "power" (power iteration with
    restarts; falls back to a dense solve on stagnation), or "auto".
    """
    M = np.asarray(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    if method not in ("auto", "dense", "power"):
        raise ValueError(f"unknown method {method!r}")
    info = {"converged": True, "method": method}
    if method in ("auto", "dense"):
        rho = float(np.max(np.abs(np.linalg.eigvals(M))))
    else:
        rho, converged = _power_iteration(M, tol, maxiter)
        if not converged:
            # Report the best dense estimate when affordable, else flag.
            if M.shape[0] <= 4096:
                rho = float(np.max(np.abs(np.linalg.eigvals(M))))
            else:
                info["converged"] = False
    if return_info:
        return rho, info
    return rho


def error_propagation_operator(h, cfg):
    """M as a matrix-free scipy LinearOperator over the active unknowns.

    One cycle on the homogeneous problem maps an error vector e to M e,
    which lets ARPACK estimate the spectral radius without forming M.
    """
    op = h.operators[0]
    mask = op.mask if op.bc.domain_mask is not None else None

    def matvec(x):
        u = _dense.unflatten_grid(x, op.grid_side, mask)
        out = solve_cycle(h, 0, u, cfg)
        return _dense.flatten_grid(out, mask)

    n = op.num_unknowns
    return spla.LinearOperator((n, n), matvec=matvec, dtype=float)


def spectral_radius_of_cycle(h, cfg, k=6, tol=1e-9, seed=0):
    """Spectral radius of the cycle's error propagation via Arnoldi iteration."""
    linop = error_propagation_operator(h, cfg)
    n = linop.shape[0]
    if n <= 400:
        M = linop @ np.eye(n)
        return spectral_radius(M)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    vals = spla.eigs(linop, k=min(k, n - 2), which="LM", tol=tol, v0=v0,
                     return_eigenvectors=False)
    return float(np.max(np.abs(vals)))


def asymptotic_factor(h, cfg, u0_seed, cycles=40):
    """Error norm reduction factors of a homogeneous run Au = 0.

    Starts from a normal-random initial guess and tracks
    ||e^{k+1}|| / ||e^k|| per cycle; the asymptotic value is the factor of
    the final cycle.
    """
    op = h.operators[0]
    rng = np.random.default_rng(u0_seed)
    u = rng.standard_normal((op.grid_side, op.grid_side))
    if op.bc.domain_mask is not None:
        u *= op.mask
    norm = np.linalg.norm(u)
    if norm == 0.0:
        raise ValueError("zero initial error has no reduction factors")
    factors = []
    flagged = False
    for _ in range(cycles):
        u = solve_cycle(h, 0, u, cfg)
        new_norm = np.linalg.norm(u)
        if not np.isfinite(new_norm) or new_norm < 1e-300:
            flagged = True
            break
        factors.append(new_norm / norm)
        norm = new_norm
    factors = np.asarray(factors)
    diverged = len(factors) >= 5 and bool(np.all(factors[-5:] > 1.0))
    asymptotic = float(factors[-1]) if len(factors) else float("nan")
    return CycleRun(factors=factors, asymptotic=asymptotic,
                    flagged=flagged or len(factors) < cycles, diverged=diverged)
