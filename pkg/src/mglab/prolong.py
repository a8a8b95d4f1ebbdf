"""Prolongation operators with the bilinear sparsity pattern.

Every builder follows the same pipeline per coarse point: obtain four raw
edge weights (toward the north/south/west/east fine neighbors), normalize
each edge fine row to sum 1, then fill the four diagonal entries so the
operator equation is satisfied exactly at the odd-odd fine points
(prolonged grid functions obey Au = 0 there).

Coarse points sit at fine vertices with both mesh indices even.  In array
coordinates that is ``(2I + off, 2J + off)`` with ``off = 0`` for periodic
grids and ``off = 1`` for Dirichlet interiors.  Rows truncated by the
boundary or domain mask fall back to raw Black-Box weights; their column
entries are not row-normalized (the constraint is infeasible there).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProlongationMap",
    "LocalStencilPatch",
    "DegenerateStencilError",
    "BoundaryPatchError",
    "RowNormalizationError",
    "extract_patch",
    "extract_patches",
    "blackbox_weights",
    "normalize_rows",
    "complete_corners",
    "build_prolongation",
]

# Neighbor order of the 45-entry patch and of weight 4-vectors.
PATCH_NEIGHBORS = ("center", "north", "south", "west", "east")
WEIGHT_DIRECTIONS = ("north", "south", "west", "east")
_DIR_OFFSETS = {"north": (1, 0), "south": (-1, 0), "west": (0, -1), "east": (0, 1)}

_TINY_SUM = 1e-12
_TINY_PIVOT = 1e-14


class DegenerateStencilError(ValueError):
    pass


class BoundaryPatchError(ValueError):
    pass


class RowNormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class ProlongationMap:
    """Per-coarse-point 3x3 column stencils.

    ``col_stencils[I, J, dy + 1, dx + 1]`` is the weight of coarse point
    (I, J) toward the fine vertex at offset (dy, dx) from its fine
    position; the center weight of every active column is 1.
    """

    fine_side: int
    coarse_side: int
    col_stencils: np.ndarray
    periodic: bool
    normalized: bool = False

    def __post_init__(self):
        w = np.asarray(self.col_stencils, dtype=float)
        mc = self.coarse_side
        if w.shape != (mc, mc, 3, 3):
            raise ValueError(f"col_stencils must have shape ({mc}, {mc}, 3, 3), got {w.shape}")
        object.__setattr__(self, "col_stencils", w)

    def to_json(self):
        return {
            "fineSide": self.fine_side,
            "coarseSide": self.coarse_side,
            "colStencils": self.col_stencils.ravel().tolist(),
        }


@dataclass(frozen=True)
class LocalStencilPatch:
    """The 45 network inputs for one coarse point: the 3x3 stencils of the
    coinciding fine point and of its four immediate neighbors, in the order
    (center, north, south, west, east), each flattened row-major with the
    south row first (matching the package stencil layout)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (45,):
            raise ValueError(f"patch must have exactly 45 entries, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def stencil(self, neighbor):
        k = PATCH_NEIGHBORS.index(neighbor)
        return self.values[9 * k:9 * (k + 1)].reshape(3, 3)


def _coarse_geometry(op):
    off = 0 if op.periodic else 1
    mc = op.grid_side // 2
    return off, mc


def _coarse_sample(arr, dy, dx, off, periodic):
    """Sample a fine grid array at the coarse lattice shifted by (dy, dx).

    Returns (values, valid): entries outside a Dirichlet grid are zero
    with valid=False; periodic grids wrap and are always valid.
    """
    m = arr.shape[0]
    mc = m // 2
    py = 2 * np.arange(mc) + off + dy
    px = 2 * np.arange(mc) + off + dx
    if periodic:
        out = arr[np.ix_(py % m, px % m)]
        return out.copy(), np.ones((mc, mc), dtype=bool)
    vy = (py >= 0) & (py < m)
    vx = (px >= 0) & (px < m)
    out = arr[np.ix_(py.clip(0, m - 1), px.clip(0, m - 1))].copy()
    valid = np.outer(vy, vx)
    if arr.ndim > 2:
        out[~valid] = 0.0
    else:
        out = np.where(valid, out, 0.0)
    return out, valid


def _sample_stencils(op, dy, dx):
    """Stencils and activity at coarse-lattice positions shifted by (dy, dx)."""
    off, _ = _coarse_geometry(op)
    st, valid = _coarse_sample(op.stencils, dy, dx, off, op.periodic)
    act, _ = _coarse_sample(op.mask.astype(float), dy, dx, off, op.periodic)
    return st, valid & (act > 0.5)


def extract_patches(op):
    """Patch matrix (mc*mc, 45) for all coarse points plus a validity mask.

    A patch is valid when the coinciding fine point and all four immediate
    neighbors are active grid points.
    """
    parts = []
    ok = None
    for name in PATCH_NEIGHBORS:
        dy, dx = _DIR_OFFSETS.get(name, (0, 0))
        st, active = _sample_stencils(op, dy, dx)
        parts.append(st.reshape(st.shape[0], st.shape[1], 9))
        ok = active if ok is None else (ok & active)
    patches = np.concatenate(parts, axis=2)
    mc = patches.shape[0]
    return patches.reshape(mc * mc, 45), ok.ravel()


def extract_patch(op, coarse_point):
    """45-entry local patch for one coarse point (see LocalStencilPatch)."""
    I, J = coarse_point
    off, mc = _coarse_geometry(op)
    if not (0 <= I < mc and 0 <= J < mc):
        raise ValueError(f"coarse point {coarse_point} outside {mc}x{mc} coarse grid")
    patches, ok = extract_patches(op)
    k = I * mc + J
    if not ok[k]:
        raise BoundaryPatchError(
            f"coarse point {coarse_point} has missing neighbor rows; use boundary fallback"
        )
    return LocalStencilPatch(values=patches[k])


def blackbox_weights(patch):
    """Operator-dependent edge weights via stencil collapse.

    A horizontal-edge fine point's stencil is collapsed by summing each
    column over its rows; the flanking coarse point's weight is the negated
    collapsed side entry over the collapsed center.  Vertical-edge points
    collapse rows instead.  Returns (w_n, w_s, w_w, w_e).
    """
    if isinstance(patch, LocalStencilPatch):
        values = patch.values
    else:
        values = np.asarray(patch, dtype=float).reshape(45)
    out = np.empty(4)
    for k, name in enumerate(WEIGHT_DIRECTIONS):
        st = values[9 * (1 + k):9 * (2 + k)].reshape(3, 3)
        if name in ("north", "south"):
            collapsed = st.sum(axis=1)  # (south row, center row, north row)
            near = collapsed[0] if name == "north" else collapsed[2]
        else:
            collapsed = st.sum(axis=0)  # (west col, center col, east col)
            near = collapsed[2] if name == "west" else collapsed[0]
        if abs(collapsed[1]) < _TINY_PIVOT:
            raise DegenerateStencilError(f"collapsed center vanishes for {name} neighbor")
        out[k] = -near / collapsed[1]
    return out


def _blackbox_raw(op):
    """Vectorized raw Black-Box weights (mc, mc, 4) with per-direction existence."""
    off, mc = _coarse_geometry(op)
    w = np.zeros((mc, mc, 4))
    exists = np.zeros((mc, mc, 4), dtype=bool)
    for k, name in enumerate(WEIGHT_DIRECTIONS):
        dy, dx = _DIR_OFFSETS[name]
        st, active = _sample_stencils(op, dy, dx)
        if name in ("north", "south"):
            collapsed = st.sum(axis=3)
            near = collapsed[:, :, 0] if name == "north" else collapsed[:, :, 2]
        else:
            collapsed = st.sum(axis=2)
            near = collapsed[:, :, 2] if name == "west" else collapsed[:, :, 0]
        center = collapsed[:, :, 1]
        bad = active & (np.abs(center) < _TINY_PIVOT)
        if np.any(bad):
            I, J = np.argwhere(bad)[0]
            raise DegenerateStencilError(
                f"collapsed center vanishes at coarse point ({I}, {J}), direction {name}"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(active, -near / np.where(center == 0.0, 1.0, center), 0.0)
        w[:, :, k] = val
        exists[:, :, k] = active
    return w, exists


def _builder_raw(op, builder):
    """Raw edge weights per coarse point for a builder.

    ``builder`` is "bilinear", "blackbox", or a callable mapping a patch
    matrix (K, 45) to weights (K, 4).  Learned weights apply only where the
    local patch is complete; elsewhere Black-Box weights stand in.
    """
    off, mc = _coarse_geometry(op)
    bb, exists = _blackbox_raw(op)
    if builder == "blackbox":
        return bb, exists
    if builder == "bilinear":
        return np.full((mc, mc, 4), 0.5), exists
    if not callable(builder):
        raise ValueError(f"unknown prolongation builder {builder!r}")
    patches, ok = extract_patches(op)
    centers = patches[:, 4]  # center entry of the coinciding stencil
    usable = ok & (np.abs(centers) > _TINY_PIVOT)
    w = bb.copy()
    if np.any(usable):
        x = patches[usable] / centers[usable, None]
        out = np.asarray(builder(x), dtype=float)
        if out.shape != (int(usable.sum()), 4):
            raise ValueError(f"builder returned shape {out.shape}, expected (K, 4)")
        w.reshape(mc * mc, 4)[usable] = out
    return w, exists


def _resolve_edges(op, raw, exists, bb):
    """Normalize edge fine rows; truncated rows take raw Black-Box weights.

    Returns the resolved column entries (N, S, W, E), each (mc, mc).
    """
    off, mc = _coarse_geometry(op)
    periodic = op.periodic
    _, cmask = _sample_stencils(op, 0, 0)

    def neighbor(arr, daxis, step):
        # Value at the coarse neighbor one step along an axis; zero-fill at
        # Dirichlet boundaries.
        if periodic:
            return np.roll(arr, -step, axis=daxis)
        out = np.zeros_like(arr)
        if daxis == 0:
            if step == 1:
                out[:-1] = arr[1:]
            else:
                out[1:] = arr[:-1]
        else:
            if step == 1:
                out[:, :-1] = arr[:, 1:]
            else:
                out[:, 1:] = arr[:, :-1]
        return out

    resolved = {}
    # (own direction index, opposite index, axis, step toward the partner)
    plan = {
        "north": (0, 1, 0, 1),
        "south": (1, 0, 0, -1),
        "west": (2, 3, 1, -1),
        "east": (3, 2, 1, 1),
    }
    for name, (k_own, k_opp, axis, step) in plan.items():
        dy, dx = _DIR_OFFSETS[name]
        _, row_active = _sample_stencils(op, dy, dx)
        own = np.where(cmask, raw[:, :, k_own], 0.0)
        own_bb = np.where(cmask, bb[:, :, k_own], 0.0)
        partner_mask = neighbor(cmask.astype(float), axis, step) > 0.5
        partner = np.where(partner_mask, neighbor(np.where(cmask, raw[:, :, k_opp], 0.0), axis, step), 0.0)
        partner_bb = np.where(partner_mask, neighbor(np.where(cmask, bb[:, :, k_opp], 0.0), axis, step), 0.0)

        both = cmask & partner_mask & row_active
        only_own = cmask & ~partner_mask & row_active
        s = own + partner
        s_bb = own_bb + partner_bb
        good = both & (np.abs(s) > _TINY_SUM)
        fallback = both & ~good
        bad_bb = fallback & (np.abs(s_bb) <= _TINY_SUM)
        if np.any(bad_bb):
            I, J = np.argwhere(bad_bb)[0]
            raise DegenerateStencilError(
                f"edge row of coarse point ({I}, {J}) toward {name} has no usable weights"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(good, own / np.where(s == 0.0, 1.0, s), 0.0)
            val = np.where(fallback, own_bb / np.where(s_bb == 0.0, 1.0, s_bb), val)
        # Truncated row: single contributor keeps its raw Black-Box weight.
        val = np.where(only_own, own_bb, val)
        resolved[name] = val
    return resolved


def _corner_values(op, edge_vals):
    """Diagonal column entries from the Au = 0 condition at odd-odd points."""
    off, mc = _coarse_geometry(op)
    _, cmask = _sample_stencils(op, 0, 0)
    corners = {}
    for dy in (-1, 1):
        for dx in (-1, 1):
            st_p, active = _sample_stencils(op, dy, dx)
            a_cc = st_p[:, :, 1, 1]
            bad = active & cmask & (np.abs(a_cc) < _TINY_PIVOT)
            if np.any(bad):
                I, J = np.argwhere(bad)[0]
                raise DegenerateStencilError(
                    f"zero central coefficient at corner point of coarse ({I}, {J})"
                )
            a_to_coarse = st_p[:, :, 1 - dy, 1 - dx]
            a_to_horiz = st_p[:, :, 1 - dy, 1]   # toward the east/west edge point
            a_to_vert = st_p[:, :, 1, 1 - dx]    # toward the north/south edge point
            hval = edge_vals["east"] if dx == 1 else edge_vals["west"]
            vval = edge_vals["north"] if dy == 1 else edge_vals["south"]
            num = a_to_coarse + a_to_horiz * hval + a_to_vert * vval
            with np.errstate(divide="ignore", invalid="ignore"):
                val = -num / np.where(a_cc == 0.0, 1.0, a_cc)
            corners[(dy, dx)] = np.where(active & cmask, val, 0.0)
    return corners


def _assemble_map(op, edge_vals, corners):
    off, mc = _coarse_geometry(op)
    _, cmask = _sample_stencils(op, 0, 0)
    w = np.zeros((mc, mc, 3, 3))
    w[:, :, 1, 1] = cmask.astype(float)
    for name, (dy, dx) in _DIR_OFFSETS.items():
        _, row_active = _sample_stencils(op, dy, dx)
        w[:, :, dy + 1, dx + 1] = np.where(cmask & row_active, edge_vals[name], 0.0)
    for (dy, dx), val in corners.items():
        w[:, :, dy + 1, dx + 1] = val
    return ProlongationMap(
        fine_side=op.grid_side,
        coarse_side=mc,
        col_stencils=w,
        periodic=op.periodic,
        normalized=True,
    )


def normalize_rows(pmap):
    """Divide each edge fine row's weights by their sum.

    Rows with a single contributor normalize to 1; a near-zero sum raises
    RowNormalizationError so the caller can substitute fallback weights.
    Coincident rows already sum to 1 and corner rows are completed after
    normalization, so neither is touched.
    """
    w = pmap.col_stencils.copy()
    mc = pmap.coarse_side
    plan = {
        "north": (2, 1, 0, 1, 0, 1),   # (sy, sx) own slot, axis, step, partner slot (sy, sx)
        "west": (1, 0, 1, -1, 1, 2),
    }
    for name, (sy, sx, axis, step, py, px) in plan.items():
        own = w[:, :, sy, sx]
        if pmap.periodic:
            partner = np.roll(w[:, :, py, px], -step, axis=axis)
        else:
            partner = np.zeros((mc, mc))
            if axis == 0:
                partner[:-1] = w[1:, :, py, px]
            else:
                partner[:, 1:] = w[:, :-1, py, px]
        has_row = (own != 0.0) | (partner != 0.0)
        s = own + partner
        bad = has_row & (np.abs(s) <= _TINY_SUM)
        if np.any(bad):
            I, J = np.argwhere(bad)[0]
            raise RowNormalizationError(
                f"near-zero row sum at edge row {name} of coarse point ({I}, {J})"
            )
        safe = np.where(s == 0.0, 1.0, s)
        w[:, :, sy, sx] = np.where(has_row, own / safe, 0.0)
        back = partner / safe
        if pmap.periodic:
            w[:, :, py, px] = np.where(has_row, np.roll(back, step, axis=axis), w[:, :, py, px])
        else:
            if axis == 0:
                w[1:, :, py, px] = np.where(has_row[:-1], back[:-1], w[1:, :, py, px])
            else:
                w[:, :-1, py, px] = np.where(has_row[:, 1:], back[:, 1:], w[:, :-1, py, px])
    return ProlongationMap(
        fine_side=pmap.fine_side,
        coarse_side=pmap.coarse_side,
        col_stencils=w,
        periodic=pmap.periodic,
        normalized=True,
    )


def complete_corners(op, pmap):
    """Fill the diagonal column entries so A(P e_j) = 0 at odd-odd points."""
    edge_vals = {
        name: pmap.col_stencils[:, :, dy + 1, dx + 1]
        for name, (dy, dx) in _DIR_OFFSETS.items()
    }
    corners = _corner_values(op, edge_vals)
    w = pmap.col_stencils.copy()
    for (dy, dx), val in corners.items():
        w[:, :, dy + 1, dx + 1] = val
    return ProlongationMap(
        fine_side=pmap.fine_side,
        coarse_side=pmap.coarse_side,
        col_stencils=w,
        periodic=pmap.periodic,
        normalized=pmap.normalized,
    )


def build_prolongation(op, builder):
    """Construct the full prolongation map for a stencil operator.

    ``builder`` selects the edge-weight rule: "bilinear" (constant 1/2),
    "blackbox" (stencil collapse), or a callable (K, 45) -> (K, 4) such as
    a trained model.  Edge rows are normalized to sum 1 where feasible;
    rows truncated by the boundary or mask keep raw Black-Box weights; the
    diagonal entries always come from the Au = 0 completion.
    """
    raw, exists = _builder_raw(op, builder)
    bb, _ = _blackbox_raw(op)
    edge_vals = _resolve_edges(op, raw, exists, bb)
    corners = _corner_values(op, edge_vals)
    return _assemble_map(op, edge_vals, corners)
