"""Diffusion problem generation and 9-point finite element discretization.

Geometry conventions used throughout the package:

* Grid arrays are indexed ``[iy, ix]`` with north = increasing ``iy`` and
  east = increasing ``ix``.
* Diffusion coefficients ``g`` live at cell centers of an ``n x n`` cell
  grid; unknowns live at vertices.
* A 3x3 stencil array ``st`` holds the coupling of a vertex to its eight
  neighbors as ``st[dy + 1, dx + 1]`` for offsets ``dy, dx in {-1, 0, 1}``
  (so ``st[1, 1]`` is the diagonal entry, ``st[2, 1]`` the north one).
* Periodic operators keep all ``n x n`` vertices as unknowns, with index
  arithmetic mod ``n``.  Dirichlet operators eliminate the boundary: array
  index ``(i, j)`` is vertex ``(i + 1, j + 1)``, giving an
  ``(n - 1) x (n - 1)`` interior grid.

Stencils are assembled scaled by h^2 (entries like -g/3, no 1/h^2 factor);
the two-grid error propagation matrix is invariant to a global scaling of
the operator, and this makes the diagonal shift ``sigma`` directly the
dimensionless quantity eps*h^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ProblemDistribution",
    "DiffusionField",
    "BoundarySpec",
    "StencilOperator",
    "sample_field",
    "tile_block_periodic",
    "discretize",
    "mask_disk",
]


class ProblemDistribution:
    """Distribution of cell-center diffusion coefficients.

    ``lognormal`` draws g = exp(z) with z ~ N(mean, sigma^2); the default
    mean=0, sigma=1 is recorded in experiment metadata since results depend
    on it.  ``uniform01`` draws g ~ U(0, 1).
    """

    def __init__(self, kind, mean=0.0, sigma=1.0):
        if kind not in ("lognormal", "uniform01"):
            raise ValueError(f"unknown distribution kind {kind!r}")
        if kind == "lognormal" and sigma <= 0:
            raise ValueError("lognormal sigma must be > 0")
        self.kind = kind
        self.mean = float(mean)
        self.sigma = float(sigma)

    @classmethod
    def lognormal(cls, mean=0.0, sigma=1.0):
        return cls("lognormal", mean, sigma)

    @classmethod
    def uniform01(cls):
        return cls("uniform01")

    def draw(self, rng, shape):
        if self.kind == "lognormal":
            return np.exp(rng.normal(self.mean, self.sigma, size=shape))
        # Uniform draws can produce exact zeros in principle; nudge away so
        # the strict-positivity invariant of DiffusionField holds.
        g = rng.uniform(0.0, 1.0, size=shape)
        return np.maximum(g, 1e-300)

    def to_meta(self):
        meta = {"kind": self.kind}
        if self.kind == "lognormal":
            meta["mean"] = self.mean
            meta["sigma"] = self.sigma
        return meta

    def __repr__(self):
        if self.kind == "lognormal":
            return f"ProblemDistribution(lognormal, mean={self.mean}, sigma={self.sigma})"
        return "ProblemDistribution(uniform01)"


@dataclass(frozen=True)
class DiffusionField:
    """Cell-centered diffusion coefficients on an n x n cell grid."""

    n: int
    g: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ValueError(f"cell count n must be even and >= 2, got {self.n}")
        g = np.asarray(self.g, dtype=float)
        if g.shape != (self.n, self.n):
            raise ValueError(f"g must have shape ({self.n}, {self.n}), got {g.shape}")
        if not np.all(g > 0):
            raise ValueError("all diffusion coefficients must be strictly positive")
        object.__setattr__(self, "g", g)

    def to_json(self):
        return {"n": self.n, "seed": self.seed, "g": self.g.ravel().tolist()}

    @classmethod
    def from_json(cls, obj):
        n = int(obj["n"])
        g = np.asarray(obj["g"], dtype=float).reshape(n, n)
        return cls(n=n, g=g, seed=int(obj.get("seed", 0)))


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary conditions: periodic or Dirichlet, optional domain mask,
    and the dimensionless diagonal shift sigma = eps*h^2."""

    kind: str = "periodic"
    domain_mask: Optional[np.ndarray] = None
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("periodic", "dirichlet"):
            raise ValueError(f"bc kind must be 'periodic' or 'dirichlet', got {self.kind!r}")
        if self.domain_mask is not None:
            if self.kind != "dirichlet":
                raise ValueError("domain masks require Dirichlet boundary conditions")
            object.__setattr__(self, "domain_mask", np.asarray(self.domain_mask, dtype=bool))
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class StencilOperator:
    """The discretized operator as a grid of 3x3 stencils.

    ``stencils`` has shape ``(m, m, 3, 3)`` where ``m = grid_side`` is the
    number of vertex rows.  Inactive vertices (eliminated boundary or
    outside the domain mask) have all-zero rows, and no active row couples
    to an inactive vertex.
    """

    stencils: np.ndarray
    bc: BoundarySpec
    grid_side: int

    def __post_init__(self):
        st = np.asarray(self.stencils, dtype=float)
        m = self.grid_side
        if st.shape != (m, m, 3, 3):
            raise ValueError(f"stencils must have shape ({m}, {m}, 3, 3), got {st.shape}")
        object.__setattr__(self, "stencils", st)

    @property
    def periodic(self):
        return self.bc.kind == "periodic"

    @property
    def mask(self):
        """Boolean (m, m) array of active vertices."""
        if self.bc.domain_mask is not None:
            return self.bc.domain_mask
        return np.ones((self.grid_side, self.grid_side), dtype=bool)

    @property
    def num_unknowns(self):
        return int(np.count_nonzero(self.mask))


def sample_field(dist, n, seed):
    """Draw an n x n diffusion-coefficient field; deterministic per seed."""
    if n < 2 or n % 2 != 0:
        raise ValueError(f"cell count n must be even and >= 2, got {n}")
    rng = np.random.default_rng(seed)
    return DiffusionField(n=n, g=dist.draw(rng, (n, n)), seed=seed)


def tile_block_periodic(core, n):
    """Tile a c x c core field to an n x n field, g[i, j] = core[i % c, j % c]."""
    c = core.n
    if n % c != 0:
        raise ValueError(f"core side {c} must divide grid side {n}")
    reps = n // c
    return DiffusionField(n=n, g=np.tile(core.g, (reps, reps)), seed=core.seed)


def _stencil_from_corner_coeffs(gsw, gse, gnw, gne, sigma):
    """Assemble 3x3 stencils from the four cell coefficients around each vertex.

    Entries (scaled by h^2): corner neighbors -g/3, edge neighbors
    -(g + g')/6, center +2/3 * sum(g) + sigma.
    """
    m = gsw.shape[0]
    st = np.zeros((m, m, 3, 3))
    st[:, :, 0, 0] = -gsw / 3.0
    st[:, :, 0, 2] = -gse / 3.0
    st[:, :, 2, 0] = -gnw / 3.0
    st[:, :, 2, 2] = -gne / 3.0
    st[:, :, 2, 1] = -(gnw + gne) / 6.0  # north
    st[:, :, 0, 1] = -(gse + gsw) / 6.0  # south
    st[:, :, 1, 0] = -(gsw + gnw) / 6.0  # west
    st[:, :, 1, 2] = -(gne + gse) / 6.0  # east
    st[:, :, 1, 1] = 2.0 * (gsw + gse + gnw + gne) / 3.0 + sigma
    return st


def discretize(field, bc):
    """Assemble the 9-point stencil operator for a diffusion field.

    Periodic: every vertex is an unknown and indices wrap.  Dirichlet:
    boundary vertices are eliminated, leaving the (n-1) x (n-1) interior;
    stencil entries referencing eliminated vertices are dropped (their
    action belongs to the right-hand side, which the operator does not
    store).  A domain mask further restricts the active set.
    """
    g = field.g
    n = field.n
    if bc.kind == "periodic":
        gne = g
        gnw = np.roll(g, 1, axis=1)
        gse = np.roll(g, 1, axis=0)
        gsw = np.roll(g, 1, axis=(0, 1))
        st = _stencil_from_corner_coeffs(gsw, gse, gnw, gne, bc.sigma)
        return StencilOperator(stencils=st, bc=bc, grid_side=n)

    # Dirichlet: array (i, j) is vertex (i+1, j+1), i, j in 0..n-2.
    gsw = g[:-1, :-1]
    gse = g[:-1, 1:]
    gnw = g[1:, :-1]
    gne = g[1:, 1:]
    st = _stencil_from_corner_coeffs(gsw, gse, gnw, gne, bc.sigma)
    m = n - 1
    if bc.domain_mask is not None:
        mask = bc.domain_mask
        if mask.shape != (m, m):
            raise ValueError(f"domain mask must have shape ({m}, {m}), got {mask.shape}")
    else:
        mask = np.ones((m, m), dtype=bool)

    # Drop couplings to eliminated vertices: grid boundary and mask exterior.
    ext = np.zeros((m + 2, m + 2), dtype=bool)
    ext[1:-1, 1:-1] = mask
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbor_active = ext[1 + dy:m + 1 + dy, 1 + dx:m + 1 + dx]
            st[:, :, dy + 1, dx + 1] *= neighbor_active
    st *= mask[:, :, None, None]
    return StencilOperator(stencils=st, bc=bc, grid_side=m)


def mask_disk(field, diameter_vertices):
    """Dirichlet boundary spec whose mask is the lattice disk of the given
    diameter (in vertex spacings), centered on the grid.

    A vertex is active iff it lies strictly inside the circle; everything
    else is eliminated zero-Dirichlet boundary.
    """
    n = field.n
    m = n - 1
    if diameter_vertices > m:
        raise ValueError(f"disk diameter {diameter_vertices} exceeds grid side {m}")
    center = n / 2.0
    # Array (i, j) is vertex (i+1, j+1) in mesh units.
    coords = np.arange(1, n)
    dy = coords[:, None] - center
    dx = coords[None, :] - center
    mask = dy * dy + dx * dx < (diameter_vertices / 2.0) ** 2
    return BoundarySpec(kind="dirichlet", domain_mask=mask, sigma=0.0)
