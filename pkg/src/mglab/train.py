"""Training of the prolongation network.

The model is a residual fully-connected network: 45 inputs (the local
stencil patch, scaled by the center stencil's center entry), 4 outputs,
and hidden residual blocks of two layers each.  Outputs parameterize raw
edge weights as w = 1/2 + net(x), so a zero network reproduces bilinear
weights exactly.

Gradients are computed by hand-written reverse mode through the fixed
graph: network -> edge-row normalization -> corner completion (Au = 0)
-> per-mode Fourier symbols -> small complex inverses (via
d(X^-1) = -X^-1 dX X^-1) -> squared Frobenius norm summed over modes.
Complex adjoints follow the convention dL = Re tr(adj^H dZ).

Training instances are block-periodic stencil cores; near-zero edge-row
sums or singular coarse symbols mark an instance degenerate and drop it
from the batch (build_prolongation would fall back to Black-Box weights
instead, so healthy instances are required for exact forward agreement).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .fourier import DegenerateInstanceError, FourierModeSet
from .mg_core import CycleConfig, galerkin
from .problem import BoundarySpec, ProblemDistribution, StencilOperator, discretize, sample_field
from .prolong import ProlongationMap, build_prolongation, extract_patches

__all__ = [
    "MlpModel",
    "TrainConfig",
    "AdamState",
    "mlp_forward",
    "init_model",
    "zero_model",
    "loss_and_grad",
    "adam_step",
    "run_curriculum",
    "build_pcore",
    "write_training_log",
]

_TINY_SUM = 1e-12

MODEL_VERSION = 1


class MlpModel:
    """Residual fully-connected network mapping 45 stencil inputs to 4 raw
    edge weights (north, south, west, east)."""

    def __init__(self, w_in, b_in, blocks, w_out, b_out, metadata=None):
        self.w_in = np.asarray(w_in, dtype=float)
        self.b_in = np.asarray(b_in, dtype=float)
        self.blocks = [tuple(np.asarray(a, dtype=float) for a in blk) for blk in blocks]
        self.w_out = np.asarray(w_out, dtype=float)
        self.b_out = np.asarray(b_out, dtype=float)
        self.metadata = dict(metadata or {})

    @property
    def width(self):
        return self.w_in.shape[1]

    @property
    def depth(self):
        return 2 + 2 * len(self.blocks)

    def parameters(self):
        params = [self.w_in, self.b_in]
        for w1, b1, w2, b2 in self.blocks:
            params.extend([w1, b1, w2, b2])
        params.extend([self.w_out, self.b_out])
        return params

    def replace_parameters(self, params):
        it = iter(params)
        w_in, b_in = next(it), next(it)
        blocks = []
        for _ in self.blocks:
            blocks.append((next(it), next(it), next(it), next(it)))
        w_out, b_out = next(it), next(it)
        return MlpModel(w_in, b_in, blocks, w_out, b_out, metadata=self.metadata)

    def forward(self, x):
        """Raw edge weights 1/2 + net(x) for inputs of shape (N, 45)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        single = x.ndim == 1
        if single:
            x = x[None, :]
        a = np.maximum(x @ self.w_in + self.b_in, 0.0)
        for w1, b1, w2, b2 in self.blocks:
            a = a + np.maximum(a @ w1 + b1, 0.0) @ w2 + b2
        out = 0.5 + a @ self.w_out + self.b_out
        return out[0] if single else out

    __call__ = forward

    def _forward_cached(self, x):
        h_in = x @ self.w_in + self.b_in
        a = np.maximum(h_in, 0.0)
        cache = {"x": x, "h_in": h_in, "block_in": [], "block_pre": []}
        for w1, b1, w2, b2 in self.blocks:
            cache["block_in"].append(a)
            u = a @ w1 + b1
            cache["block_pre"].append(u)
            a = a + np.maximum(u, 0.0) @ w2 + b2
        cache["a_final"] = a
        return 0.5 + a @ self.w_out + self.b_out, cache

    def _backward(self, cache, d_out):
        grads = [None] * len(self.parameters())
        a_final = cache["a_final"]
        grads[-2] = a_final.T @ d_out
        grads[-1] = d_out.sum(axis=0)
        da = d_out @ self.w_out.T
        for k in range(len(self.blocks) - 1, -1, -1):
            w1, b1, w2, b2 = self.blocks[k]
            a_in = cache["block_in"][k]
            u = cache["block_pre"][k]
            r = np.maximum(u, 0.0)
            base = 2 + 4 * k
            grads[base + 2] = r.T @ da
            grads[base + 3] = da.sum(axis=0)
            du = (da @ w2.T) * (u > 0.0)
            grads[base] = a_in.T @ du
            grads[base + 1] = du.sum(axis=0)
            da = da + du @ w1.T
        dh = da * (cache["h_in"] > 0.0)
        grads[0] = cache["x"].T @ dh
        grads[1] = dh.sum(axis=0)
        return grads

    def to_json(self):
        layers = [{"w": self.w_in.tolist(), "b": self.b_in.tolist()}]
        for w1, b1, w2, b2 in self.blocks:
            layers.append({"w": w1.tolist(), "b": b1.tolist()})
            layers.append({"w": w2.tolist(), "b": b2.tolist()})
        layers.append({"w": self.w_out.tolist(), "b": self.b_out.tolist()})
        return {
            "version": MODEL_VERSION,
            "depth": self.depth,
            "width": self.width,
            "activation": "relu",
            "layers": layers,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        layers = obj["layers"]
        n_blocks = (len(layers) - 2) // 2
        w_in = np.array(layers[0]["w"])
        b_in = np.array(layers[0]["b"])
        blocks = []
        for k in range(n_blocks):
            l1, l2 = layers[1 + 2 * k], layers[2 + 2 * k]
            blocks.append((np.array(l1["w"]), np.array(l1["b"]), np.array(l2["w"]), np.array(l2["b"])))
        w_out = np.array(layers[-1]["w"])
        b_out = np.array(layers[-1]["b"])
        return cls(w_in, b_in, blocks, w_out, b_out, metadata=obj.get("metadata", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def mlp_forward(model, x):
    """Raw edge weights (w_n, w_s, w_w, w_e) for a single 45-entry input."""
    return model.forward(np.asarray(x, dtype=float).reshape(45))


def init_model(depth=8, width=64, seed=0, metadata=None):
    """Variance-scaled entry layers with zeroed residual-branch outputs and a
    zeroed output layer, so the initial network maps everything to bilinear
    weights."""
    if depth < 4 or depth % 2 != 0:
        raise ValueError("depth must be an even count of linear layers, >= 4")
    n_blocks = (depth - 2) // 2
    rng = np.random.default_rng(seed)
    w_in = rng.standard_normal((45, width)) * np.sqrt(2.0 / 45)
    blocks = []
    for _ in range(n_blocks):
        w1 = rng.standard_normal((width, width)) * np.sqrt(2.0 / width)
        blocks.append((w1, np.zeros(width), np.zeros((width, width)), np.zeros(width)))
    return MlpModel(w_in, np.zeros(width), blocks, np.zeros((width, 4)), np.zeros(4),
                    metadata=metadata)


def zero_model(depth=4, width=8):
    n_blocks = (depth - 2) // 2
    blocks = [(np.zeros((width, width)), np.zeros(width), np.zeros((width, width)), np.zeros(width))
              for _ in range(n_blocks)]
    return MlpModel(np.zeros((45, width)), np.zeros(width), blocks,
                    np.zeros((width, 4)), np.zeros(4))


# ---------------------------------------------------------------------------
# Differentiable prolongation construction on a block-periodic core.

def _core_operator(acore):
    c = acore.shape[0]
    return StencilOperator(stencils=acore, bc=BoundarySpec(kind="periodic"), grid_side=c)


def _corner_tables(acore):
    """Constant stencil samples entering the corner completion."""
    c = acore.shape[0]
    mc = c // 2
    iy = (2 * np.arange(mc))[:, None]
    ix = (2 * np.arange(mc))[None, :]
    tables = {}
    for dy in (-1, 1):
        for dx in (-1, 1):
            st = acore[(iy + dy) % c, (ix + dx) % c]
            tables[(dy, dx)] = {
                "cc": st[:, :, 1, 1],
                "coarse": st[:, :, 1 - dy, 1 - dx],
                "h": st[:, :, 1 - dy, 1],
                "v": st[:, :, 1, 1 - dx],
            }
    return tables


def _pcore_forward(acore, model):
    """Column stencils of the learned prolongation on one periodic core,
    with every intermediate needed for the backward pass."""
    op = _core_operator(acore)
    patches, ok = extract_patches(op)
    centers = patches[:, 4]
    if np.any(np.abs(centers) < 1e-14):
        raise DegenerateInstanceError("vanishing center stencil entry in patch")
    x = patches / centers[:, None]
    rawf, mlp_cache = model._forward_cached(x)
    c = acore.shape[0]
    mc = c // 2
    wn = rawf[:, 0].reshape(mc, mc)
    ws = rawf[:, 1].reshape(mc, mc)
    ww = rawf[:, 2].reshape(mc, mc)
    we = rawf[:, 3].reshape(mc, mc)

    sum_n = wn + np.roll(ws, -1, axis=0)
    sum_s = ws + np.roll(wn, 1, axis=0)
    sum_w = ww + np.roll(we, 1, axis=1)
    sum_e = we + np.roll(ww, -1, axis=1)
    for s in (sum_n, sum_s, sum_w, sum_e):
        if np.any(np.abs(s) <= _TINY_SUM):
            raise DegenerateInstanceError("near-zero edge row sum")
    n_col = wn / sum_n
    s_col = ws / sum_s
    w_col = ww / sum_w
    e_col = we / sum_e

    tables = _corner_tables(acore)
    pcore = np.zeros((mc, mc, 3, 3))
    pcore[:, :, 1, 1] = 1.0
    pcore[:, :, 2, 1] = n_col
    pcore[:, :, 0, 1] = s_col
    pcore[:, :, 1, 0] = w_col
    pcore[:, :, 1, 2] = e_col
    for (dy, dx), tab in tables.items():
        if np.any(np.abs(tab["cc"]) < 1e-14):
            raise DegenerateInstanceError("zero central coefficient at corner point")
        hval = e_col if dx == 1 else w_col
        vval = n_col if dy == 1 else s_col
        pcore[:, :, dy + 1, dx + 1] = -(tab["coarse"] + tab["h"] * hval + tab["v"] * vval) / tab["cc"]
    cache = {
        "mlp": mlp_cache,
        "raw": (wn, ws, ww, we),
        "sums": (sum_n, sum_s, sum_w, sum_e),
        "cols": (n_col, s_col, w_col, e_col),
        "tables": tables,
        "mc": mc,
    }
    return pcore, cache


def _pcore_backward(model, cache, d_pcore):
    """Parameter gradients from an adjoint of the column stencils."""
    mc = cache["mc"]
    n_col, s_col, w_col, e_col = cache["cols"]
    d_n = d_pcore[:, :, 2, 1].copy()
    d_s = d_pcore[:, :, 0, 1].copy()
    d_w = d_pcore[:, :, 1, 0].copy()
    d_e = d_pcore[:, :, 1, 2].copy()
    for (dy, dx), tab in cache["tables"].items():
        g = d_pcore[:, :, dy + 1, dx + 1]
        gh = g * (-tab["h"] / tab["cc"])
        gv = g * (-tab["v"] / tab["cc"])
        if dx == 1:
            d_e += gh
        else:
            d_w += gh
        if dy == 1:
            d_n += gv
        else:
            d_s += gv

    wn, ws, ww, we = cache["raw"]
    sum_n, sum_s, sum_w, sum_e = cache["sums"]
    # x_col = own / (own + partner): d own = partner / sum^2, d partner = -own / sum^2
    d_wn = d_n * (sum_n - wn) / sum_n**2
    d_ws_from_n = np.roll(d_n * (-wn / sum_n**2), 1, axis=0)
    d_ws = d_s * (sum_s - ws) / sum_s**2 + d_ws_from_n
    d_wn += np.roll(d_s * (-ws / sum_s**2), -1, axis=0)
    d_ww = d_w * (sum_w - ww) / sum_w**2
    d_we_from_w = np.roll(d_w * (-ww / sum_w**2), -1, axis=1)
    d_we = d_e * (sum_e - we) / sum_e**2 + d_we_from_w
    d_ww += np.roll(d_e * (-we / sum_e**2), 1, axis=1)

    d_raw = np.stack(
        [d_wn.ravel(), d_ws.ravel(), d_ww.ravel(), d_we.ravel()], axis=1
    )
    return model._backward(cache["mlp"], d_raw)


def build_pcore(acore, model):
    """Learned column stencils for one block-periodic core (forward only)."""
    pcore, _ = _pcore_forward(acore, model)
    return pcore


# ---------------------------------------------------------------------------
# Mode-stacked Fourier loss with reverse-mode gradients.

def _phase_tables(c, n, modes):
    """Per-mode phase factors and index maps for the A, L and P symbols."""
    mc = c // 2
    s = np.asarray(modes, dtype=float)  # (nm, 2) rows (s1, s2)
    y0, x0 = np.divmod(np.arange(c * c), c)
    a_entries = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cols = ((y0 + dy) % c) * c + (x0 + dx) % c
            phases = np.exp(-2j * np.pi * (s[:, 0] * dx + s[:, 1] * dy) / n)
            a_entries.append((dy, dx, cols, phases))
    Y0, X0 = np.divmod(np.arange(mc * mc), mc)
    p_entries = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            rows = ((2 * Y0 + dy) % c) * c + (2 * X0 + dx) % c
            phases = np.exp(2j * np.pi * (s[:, 0] * dx + s[:, 1] * dy) / n)
            p_entries.append((dy, dx, rows, phases))
    return a_entries, p_entries


_LOWER = {(0, 0), (0, -1), (-1, -1), (-1, 0), (-1, 1)}


def _stacked_symbols(acore, modes, n, a_entries):
    c = acore.shape[0]
    nm = len(modes)
    y0, x0 = np.divmod(np.arange(c * c), c)
    A = np.zeros((nm, c * c, c * c), dtype=complex)
    L = np.zeros((nm, c * c, c * c), dtype=complex)
    rows = np.arange(c * c)
    for dy, dx, cols, phases in a_entries:
        vals = acore[y0, x0, dy + 1, dx + 1]
        contrib = phases[:, None] * vals[None, :]
        A[:, rows, cols] += contrib
        if (dy, dx) in _LOWER:
            L[:, rows, cols] += contrib
    return A, L


def _stacked_P(pcore, modes, p_entries):
    mc = pcore.shape[0]
    c = 2 * mc
    nm = len(modes)
    Y0, X0 = np.divmod(np.arange(mc * mc), mc)
    P = np.zeros((nm, c * c, mc * mc), dtype=complex)
    cols = np.arange(mc * mc)
    for dy, dx, rows, phases in p_entries:
        vals = pcore[Y0, X0, dy + 1, dx + 1]
        P[:, rows, cols] += phases[:, None] * vals[None, :]
    return P


def _instance_loss_grad(acore, model, n, cfg, mode_set, want_grad=True):
    """Loss (and parameter gradients) of one block-periodic instance."""
    c = acore.shape[0]
    modes = mode_set.active_modes
    a_entries, p_entries = _phase_tables(c, n, modes)
    A, L = _stacked_symbols(acore, modes, n, a_entries)
    pcore, cache = _pcore_forward(acore, model)
    P = _stacked_P(pcore, modes, p_entries)

    eye = np.eye(c * c, dtype=complex)
    try:
        S = eye[None] - np.linalg.solve(L, A)
        Ph = P.conj().transpose(0, 2, 1)
        R = Ph @ A
        G = Ph @ A @ P
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInstanceError(f"singular symbol: {exc}") from exc
    coarse = Ginv @ R
    T = P @ coarse
    C = eye[None] - T

    def spow(k):
        if k == 0:
            return eye[None].repeat(len(modes), axis=0)
        out = S
        for _ in range(k - 1):
            out = out @ S
        return out

    S1 = spow(cfg.s1)
    S2 = spow(cfg.s2)
    M = S2 @ C @ S1
    if not np.all(np.isfinite(M)):
        raise DegenerateInstanceError("non-finite error symbol")
    loss = float(np.sum(np.abs(M) ** 2))
    if not want_grad:
        return loss, None

    # Reverse pass; adjoint convention dL = Re tr(adj^H dZ).
    S1h = S1.conj().transpose(0, 2, 1)
    S2h = S2.conj().transpose(0, 2, 1)
    adj_M = 2.0 * M
    adj_C = S2h @ adj_M @ S1h
    adj_T = -adj_C
    coarse_h = coarse.conj().transpose(0, 2, 1)
    adj_P = adj_T @ coarse_h
    adj_coarse = Ph @ adj_T
    Rh = R.conj().transpose(0, 2, 1)
    Ginv_h = Ginv.conj().transpose(0, 2, 1)
    adj_Ginv = adj_coarse @ Rh
    adj_R = Ginv_h @ adj_coarse
    adj_G = -Ginv_h @ adj_Ginv @ Ginv_h
    # R = P^H A  ->  adj(P) += A adj_R^H ; G = P^H (A P) -> two P appearances.
    AP = A @ P
    adj_P += A.conj().transpose(0, 2, 1) @ adj_R.conj().transpose(0, 2, 1)
    adj_P += AP @ adj_G.conj().transpose(0, 2, 1)
    adj_P += A.conj().transpose(0, 2, 1) @ P @ adj_G

    mc = c // 2
    Y0, X0 = np.divmod(np.arange(mc * mc), mc)
    cols = np.arange(mc * mc)
    d_pcore = np.zeros((mc, mc, 3, 3))
    for dy, dx, rows, phases in p_entries:
        adj_entries = adj_P[:, rows, cols]  # (nm, K)
        contrib = np.sum((adj_entries.conj() * phases[:, None]).real, axis=0)
        d_pcore[Y0, X0, dy + 1, dx + 1] += contrib
    grads = _pcore_backward(model, cache, d_pcore)
    return loss, grads


def loss_and_grad(model, batch, cfg=None, mode_set=None, want_grad=True, loss_cap=None):
    """Mean Fourier loss and parameter gradients over a batch.

    ``batch`` holds (acore, n) pairs of block-periodic stencil cores.
    Degenerate instances are dropped and counted: singular symbols, and,
    when ``loss_cap`` is set, losses beyond the cap (Galerkin-coarsened
    cores occasionally have a near-singular circulant lower part, which
    sends the smoother symbol through the roof).
    Returns (loss, grads, degenerate_count).
    """
    cfg = cfg or CycleConfig()
    total = 0.0
    grads = None
    kept = 0
    degenerate = 0
    for acore, n in batch:
        ms = mode_set if mode_set is not None and mode_set.n == n else FourierModeSet(n=n, c=acore.shape[0])
        try:
            loss, g = _instance_loss_grad(acore, model, n, cfg, ms, want_grad=want_grad)
            if loss_cap is not None and loss > loss_cap:
                raise DegenerateInstanceError(f"loss {loss:.3e} beyond cap {loss_cap:.3e}")
        except DegenerateInstanceError:
            degenerate += 1
            continue
        total += loss
        kept += 1
        if want_grad:
            if grads is None:
                grads = [x.copy() for x in g]
            else:
                for acc, x in zip(grads, g):
                    acc += x
    if kept == 0:
        raise DegenerateInstanceError("all instances in the batch are degenerate")
    if want_grad:
        grads = [g / kept for g in grads]
    return total / kept, grads, degenerate


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = 0

    @classmethod
    def for_model(cls, model, beta1=0.9, beta2=0.999, eps=1e-8):
        params = model.parameters()
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(model, grads, state, lr):
    """One Adam update; non-finite gradients skip the step and are flagged."""
    if any(not np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return model, state
    state.t += 1
    params = model.parameters()
    new_params = []
    b1, b2 = state.beta1, state.beta2
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mhat = state.m[k] / (1 - b1**state.t)
        vhat = state.v[k] / (1 - b2**state.t)
        new_params.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
    return model.replace_parameters(new_params), state


@dataclass
class TrainConfig:
    """Three-stage curriculum configuration (desk-scale defaults)."""

    stage_sizes: tuple = (2048, 2048, 2048)
    epochs_per_stage: int = 2
    c: int = 8
    stage_grids: tuple = (16, 16, 32)
    batch_size: int = 32
    lr_exponent_range: tuple = (4.0, 6.0)
    fixed_lr: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sigma_shift: float = 0.0
    depth: int = 8
    width: int = 64
    loss_cap: float = 1e4
    distribution: ProblemDistribution = dc_field(default_factory=ProblemDistribution.lognormal)
    s1: int = 1
    s2: int = 1

    def __post_init__(self):
        for grid in self.stage_grids:
            if grid % self.c != 0:
                raise ValueError(f"stage grid {grid} not divisible by block side {self.c}")

    def cycle_config(self):
        return CycleConfig(s1=self.s1, s2=self.s2, cycle_kind="two-grid")

    def to_meta(self):
        return {
            "stage_sizes": list(self.stage_sizes),
            "epochs_per_stage": self.epochs_per_stage,
            "c": self.c,
            "stage_grids": list(self.stage_grids),
            "batch_size": self.batch_size,
            "lr_exponent_range": list(self.lr_exponent_range),
            "fixed_lr": self.fixed_lr,
            "seed": self.seed,
            "sigma_shift": self.sigma_shift,
            "depth": self.depth,
            "width": self.width,
            "loss_cap": self.loss_cap,
            "distribution": self.distribution.to_meta(),
        }


def _stage1_cores(cfg, count, rng):
    cores = []
    bc = BoundarySpec(kind="periodic", sigma=cfg.sigma_shift)
    seeds = rng.integers(0, 2**63 - 1, size=count)
    for s in seeds:
        field = sample_field(cfg.distribution, cfg.c, int(s))
        cores.append(discretize(field, bc).stencils)
    return cores


def _stage2_cores(cfg, count, rng, model):
    """Galerkin-coarsened operators of general periodic problems, used as
    block-periodic cores for the later stages."""
    cores = []
    bc = BoundarySpec(kind="periodic", sigma=cfg.sigma_shift)
    n = cfg.stage_grids[1]
    seeds = rng.integers(0, 2**63 - 1, size=count)
    for s in seeds:
        field = sample_field(cfg.distribution, n, int(s))
        op = discretize(field, bc)
        P = build_prolongation(op, model)
        coarse = galerkin(op, P)
        cores.append(coarse.stencils)
    return cores


def _train_stage(model, state, cores, n, cfg, lr, stage, log, loss_cfg):
    rng = np.random.default_rng((cfg.seed, stage, 7))
    mode_set = FourierModeSet(n=n, c=cfg.c)
    for epoch in range(cfg.epochs_per_stage):
        order = rng.permutation(len(cores))
        step = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [(cores[k], n) for k in order[lo:lo + cfg.batch_size]]
            try:
                loss, grads, degenerate = loss_and_grad(model, batch, loss_cfg, mode_set,
                                                        loss_cap=cfg.loss_cap)
            except DegenerateInstanceError:
                log.append({"stage": stage, "epoch": epoch, "step": step,
                            "loss": float("nan"), "lr": lr, "degenerateCount": len(batch)})
                step += 1
                continue
            model, state = adam_step(model, grads, state, lr)
            log.append({"stage": stage, "epoch": epoch, "step": step,
                        "loss": loss, "lr": lr, "degenerateCount": degenerate})
            step += 1
    return model, state


def run_curriculum(cfg):
    """Three-stage training: block-periodic cores, Galerkin-coarsened cores
    on the same grid, then the same cores composed into larger grids.
    Returns the trained model and the per-step training log."""
    master = np.random.default_rng(cfg.seed)
    data_rng = np.random.default_rng(master.integers(2**63))
    init_seed = int(master.integers(2**63))
    lr_rng = np.random.default_rng(master.integers(2**63))
    if cfg.fixed_lr is not None:
        lr = float(cfg.fixed_lr)
    else:
        lo, hi = cfg.lr_exponent_range
        lr = float(10.0 ** (-lr_rng.uniform(lo, hi)))
    model = init_model(cfg.depth, cfg.width, seed=init_seed)
    state = AdamState.for_model(model, cfg.beta1, cfg.beta2, cfg.adam_eps)
    loss_cfg = cfg.cycle_config()
    log = []

    stage1 = _stage1_cores(cfg, cfg.stage_sizes[0], data_rng)
    model, state = _train_stage(model, state, stage1, cfg.stage_grids[0], cfg, lr, 1, log, loss_cfg)

    stage2 = _stage2_cores(cfg, cfg.stage_sizes[1], data_rng, model)
    model, state = _train_stage(model, state, stage1 + stage2, cfg.stage_grids[1], cfg, lr, 2, log, loss_cfg)

    model, state = _train_stage(model, state, stage2, cfg.stage_grids[2], cfg, lr, 3, log, loss_cfg)

    model.metadata.update({
        "trained": True,
        "config": cfg.to_meta(),
        "learning_rate": lr,
        "adam_steps": state.t,
        "skipped_steps": state.skipped,
    })
    return model, log


def write_training_log(log, path):
    lines = ["stage,epoch,step,loss,lr,degenerateCount"]
    for row in log:
        lines.append(f"{row['stage']},{row['epoch']},{row['step']},{row['loss']!r},{row['lr']!r},{row['degenerateCount']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
