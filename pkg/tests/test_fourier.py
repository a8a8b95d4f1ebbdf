import numpy as np
import pytest

from mglab.problem import (
    BoundarySpec,
    ProblemDistribution,
    discretize,
    sample_field,
    tile_block_periodic,
)
from mglab.prolong import build_prolongation
from mglab.mg_core import CycleConfig
from mglab import fourier
from mglab.fourier import (
    DegenerateModeError,
    FourierModeSet,
    block_diagonalize_dense,
    build_W_dense,
    build_W_2d,
    frobenius_loss,
    mode_error_symbol,
    mode_matrix_A,
    mode_matrix_P,
    mode_symbols_2d,
    theorem1_blocks,
)

CFG = CycleConfig(s1=1, s2=1)


def block_periodic_op(n, c, seed):
    core = sample_field(ProblemDistribution.lognormal(), c, seed)
    return discretize(tile_block_periodic(core, n), BoundarySpec(kind="periodic"))


def dense_mode_rows(n, c, s1, s2):
    return np.array([(y0 + s2 * c) * n + (x0 + s1 * c) for y0 in range(c) for x0 in range(c)])


def dense_coarse_cols(n, c, s1, s2):
    mc, half = c // 2, n // 2
    return np.array([(Y0 + s2 * mc) * half + (X0 + s1 * mc) for Y0 in range(mc) for X0 in range(mc)])


# --- the W transform ------------------------------------------------------

def test_w_matches_appendix_example():
    W = build_W_dense(12, 3)
    assert W[0, 0] == pytest.approx(1.0)
    assert W[1, 4] == pytest.approx(np.exp(-1j * 2 * np.pi / 12))
    assert W[2, 11] == pytest.approx(np.exp(-1j * 12 * np.pi / 12))
    assert W[11, 11] == pytest.approx(np.exp(-1j * 66 * np.pi / 12))
    assert W[4, 4] == pytest.approx(np.exp(-1j * 8 * np.pi / 12))
    assert W[3, 0] == pytest.approx(1.0)
    assert W[0, 1] == 0.0


def test_w_identity_when_single_block():
    assert np.array_equal(build_W_dense(5, 5), np.eye(5).astype(complex))


@pytest.mark.parametrize("n,k", [(12, 3), (16, 4)])
def test_w_unitary(n, k):
    W = build_W_dense(n, k)
    b = n // k
    assert np.abs(W.conj().T @ W / b - np.eye(n)).max() < 1e-12


# --- dense block diagonalization -----------------------------------------

def test_block_diagonalize_scalar_circulant_is_dft():
    # With k=1 the s-th block is exactly the s-th DFT coefficient of the
    # first row (classical circulant diagonalization).
    rng = np.random.default_rng(0)
    first_row = rng.standard_normal(6)
    K = np.array([np.roll(first_row, i) for i in range(6)])
    blocks = block_diagonalize_dense(K, 1)
    eigs = np.array([b[0, 0] for b in blocks])
    assert np.abs(eigs - np.fft.fft(first_row)).max() < 1e-10


def test_block_diagonalize_identity():
    blocks = block_diagonalize_dense(np.eye(12), 3)
    for b in blocks:
        assert np.abs(b - np.eye(3)).max() < 1e-12


def test_block_diagonalize_rejects_non_circulant():
    K = np.arange(36.0).reshape(6, 6)
    with pytest.raises(ValueError):
        block_diagonalize_dense(K, 2)


@pytest.mark.parametrize("n,k", [(8, 4), (12, 3), (16, 4)])
def test_theorem1_matches_dense(n, k):
    rng = np.random.default_rng(n + k)
    offsets = list(range(-(k - 1) // 2 - 1, (k - 1) // 2))[:k] or [0]
    offsets = [-1, 0, 1]
    band = rng.standard_normal((k, len(offsets)))
    K = np.zeros((n, n))
    for l in range(n):
        for i, m in enumerate(offsets):
            K[l, (l + m) % n] += band[l % k, i]
    dense_blocks = block_diagonalize_dense(K, k)
    fast_blocks = theorem1_blocks(band, offsets, n, k)
    for d, f in zip(dense_blocks, fast_blocks):
        assert np.abs(d - f).max() < 1e-10


def test_theorem1_zero_mode_is_plain_band():
    band = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    blocks = theorem1_blocks(band, [-1, 0, 1], 12, 3)
    expected = np.zeros((3, 3), dtype=complex)
    for l0 in range(3):
        for i, m in enumerate((-1, 0, 1)):
            expected[l0, (l0 + m) % 3] += band[l0, i]
    assert np.abs(blocks[0] - expected).max() == 0.0


def test_theorem1_tridiagonal_laplacian_phases():
    # 1D circulant Laplacian: diagonal 2, off-diagonals -1.  The block at
    # mode s carries a phase exp(-+ 2 pi s / 12) on the off-diagonals.
    band = np.array([[-1.0, 2.0, -1.0]] * 3)
    blocks = theorem1_blocks(band, [-1, 0, 1], 12, 3)
    K = np.zeros((12, 12))
    for l in range(12):
        K[l, l] = 2.0
        K[l, (l - 1) % 12] = -1.0
        K[l, (l + 1) % 12] = -1.0
    dense_blocks = block_diagonalize_dense(K, 3)
    for s, (blk, ref) in enumerate(zip(blocks, dense_blocks)):
        assert np.abs(blk - ref).max() < 1e-12
        assert blk[0, 0] == pytest.approx(2.0)
        assert blk[0, 1] == pytest.approx(-np.exp(-2j * np.pi * s / 12))
        assert blk[1, 0] == pytest.approx(-np.exp(+2j * np.pi * s / 12))
    # eigenvalues of all blocks = full spectrum of K
    all_eigs = np.concatenate([np.linalg.eigvals(b) for b in blocks])
    ref = np.linalg.eigvals(K)
    assert np.abs(np.sort(all_eigs.real) - np.sort(ref.real)).max() < 1e-10


def test_theorem1_rejects_wide_band():
    band = np.ones((3, 5))
    with pytest.raises(ValueError):
        theorem1_blocks(band, [-2, -1, 0, 1, 2], 12, 3)


# --- 2D symbols -----------------------------------------------------------

@pytest.mark.parametrize("n,c", [(8, 4), (16, 4)])
def test_mode_matrix_A_matches_dense_2d(n, c):
    op = block_periodic_op(n, c, seed=n)
    acore = op.stencils[:c, :c]
    from oracles import dense_from_stencils

    A = dense_from_stencils(op)
    W2 = build_W_2d(n, c)
    b = (n // c) ** 2
    Ahat = W2.conj().T @ A @ W2 / b
    for s1 in range(n // c):
        for s2 in range(n // c):
            ridx = dense_mode_rows(n, c, s1, s2)
            other = np.setdiff1d(np.arange(n * n), ridx)
            assert np.abs(Ahat[np.ix_(ridx, other)]).max() < 1e-10
            fast = mode_matrix_A(acore, s1, s2, n)
            assert np.abs(Ahat[np.ix_(ridx, ridx)] - fast).max() < 1e-10


def test_mode_matrix_P_matches_dense_2d():
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=5)
    P = build_prolongation(op, "blackbox")
    pcore = P.col_stencils[:c // 2, :c // 2]
    from oracles import dense_from_pmap

    Pd = dense_from_pmap(P)
    Wf = build_W_2d(n, c)
    Wc = build_W_2d(n // 2, c // 2)
    b = (n // c) ** 2
    Phat = Wf.conj().T @ Pd @ Wc / b
    for s1 in range(n // c):
        for s2 in range(n // c):
            ridx = dense_mode_rows(n, c, s1, s2)
            cidx = dense_coarse_cols(n, c, s1, s2)
            fast = mode_matrix_P(pcore, s1, s2, n)
            assert np.abs(Phat[np.ix_(ridx, cidx)] - fast).max() < 1e-10
            other = np.setdiff1d(np.arange((n // 2) ** 2), cidx)
            assert np.abs(Phat[np.ix_(ridx, other)]).max() < 1e-10


def test_symbol_hermitian_for_symmetric_operator():
    n, c = 16, 4
    op = block_periodic_op(n, c, seed=6)
    acore = op.stencils[:c, :c]
    for mode in FourierModeSet(n=n, c=c).modes:
        Ahat = mode_matrix_A(acore, mode[0], mode[1], n)
        assert np.abs(Ahat - Ahat.conj().T).max() < 1e-12


def test_zero_mode_refused_on_singular_operator():
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=7)
    P = build_prolongation(op, "blackbox")
    acore = op.stencils[:c, :c]
    pcore = P.col_stencils[:c // 2, :c // 2]
    with pytest.raises(DegenerateModeError):
        mode_symbols_2d(acore, pcore, (0, 0), n, CFG)
    # non-excluded modes work
    sym = mode_symbols_2d(acore, pcore, (1, 1), n, CFG)
    assert np.all(np.isfinite(sym.Mhat))


def test_mode_symbols_match_dense_error_propagation():
    """Blockdiag of all symbol blocks similarity-matches the dense M built
    with the same circulant lower part (zero mode removed on both sides)."""
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=8)
    P = build_prolongation(op, "blackbox")
    acore = op.stencils[:c, :c]
    pcore = P.col_stencils[:c // 2, :c // 2]
    from mglab.bench import _dense_loss_oracle
    from oracles import dense_from_stencils, dense_from_pmap

    A = dense_from_stencils(op)
    N = A.shape[0]
    Pd = dense_from_pmap(P)
    m = op.grid_side
    Lc = np.zeros((N, N))
    for i in range(m):
        for j in range(m):
            row = i * m + j
            for dy, dx in fourier.LOWER_OFFSETS:
                Lc[row, ((i + dy) % m) * m + (j + dx) % m] += op.stencils[i, j, dy + 1, dx + 1]
    S = np.eye(N) - np.linalg.solve(Lc, A)
    C = np.eye(N) - Pd @ np.linalg.pinv(Pd.T @ A @ Pd) @ (Pd.T @ A)
    M = S @ C @ S
    W2 = build_W_2d(n, c)
    Mhat = W2.conj().T @ M @ W2 / ((n // c) ** 2)
    frob_dev = 0.0
    rho_modes = 0.0
    keep = []
    for s1 in range(n // c):
        for s2 in range(n // c):
            if (s1, s2) == (0, 0):
                continue
            ridx = dense_mode_rows(n, c, s1, s2)
            keep.extend(ridx.tolist())
            sym = mode_symbols_2d(acore, pcore, (s1, s2), n, CFG)
            frob_dev += float(np.sum(np.abs(sym.Mhat - Mhat[np.ix_(ridx, ridx)]) ** 2))
            rho_modes = max(rho_modes, np.max(np.abs(np.linalg.eigvals(sym.Mhat))))
    assert np.sqrt(frob_dev) < 1e-8
    # spectral consistency against the deflated dense M
    keep = np.array(keep)
    rho_dense = np.max(np.abs(np.linalg.eigvals(Mhat[np.ix_(keep, keep)])))
    assert rho_modes == pytest.approx(rho_dense, abs=1e-6)


def test_full_rank_square_symbol_gives_zero_loss():
    # With the coarse grid equal to the fine grid (square invertible
    # symbol) the coarse-correction symbol vanishes; with s1 = s2 = 0 the
    # whole error symbol is zero.
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=9)
    acore = op.stencils[:c, :c]
    Ahat = mode_matrix_A(acore, 1, 0, n)
    Lhat = fourier.mode_matrix_L(acore, 1, 0, n)
    Phat = np.eye(c * c, dtype=complex)
    cfg0 = CycleConfig(s1=1, s2=0)
    Mhat = mode_error_symbol(Ahat, Lhat, Phat, cfg0)
    # C annihilates everything; one pre-sweep cannot resurrect it
    assert np.abs(Mhat).max() < 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_loss_matches_dense_oracle(seed):
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=seed)
    P = build_prolongation(op, "blackbox")
    acore = op.stencils[:c, :c]
    pcore = P.col_stencils[:c // 2, :c // 2]
    from mglab.bench import _dense_loss_oracle

    fast = frobenius_loss(acore, pcore, n, CFG)
    ref = _dense_loss_oracle(op, P, n, c, CFG)
    assert fast == pytest.approx(ref, rel=1e-6)


def test_loss_scale_invariance():
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=30)
    P = build_prolongation(op, "blackbox")
    acore = op.stencils[:c, :c]
    pcore = P.col_stencils[:c // 2, :c // 2]
    l1 = frobenius_loss(acore, pcore, n, CFG)
    l2 = frobenius_loss(3.7 * acore, pcore, n, CFG)
    assert l2 == pytest.approx(l1, rel=1e-12)


def test_mode_set_validation_and_order():
    ms = FourierModeSet(n=16, c=4)
    assert ms.modes[:5] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]
    assert (0, 0) not in ms.active_modes
    with pytest.raises(ValueError):
        FourierModeSet(n=16, c=3)
    with pytest.raises(ValueError):
        FourierModeSet(n=10, c=4)


def test_mode_frobenius_dump(tmp_path):
    n, c = 8, 4
    op = block_periodic_op(n, c, seed=31)
    P = build_prolongation(op, "blackbox")
    path = tmp_path / "modes.csv"
    fourier.dump_mode_frobenius(op.stencils[:c, :c], P.col_stencils[:c // 2, :c // 2],
                                n, CFG, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "s1,s2,frob2"
    assert len(lines) == 4  # 2x2 modes minus the excluded zero mode
    total = sum(float(line.split(",")[2]) for line in lines[1:])
    ref = frobenius_loss(op.stencils[:c, :c], P.col_stencils[:c // 2, :c // 2], n, CFG)
    assert total == pytest.approx(ref, rel=1e-12)
