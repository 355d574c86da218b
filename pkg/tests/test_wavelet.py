from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from conftest import make_network, random_connected
from temporal_wavelets.benchmarks import GranellParams, generate_granell
from temporal_wavelets.exceptions import DomainError, PreconditionError
from temporal_wavelets.spectral import (
    apply_filtered_operator,
    chebyshev_coefficients,
    layer_null_basis,
    leading_eigenpairs,
    select_lambda_star,
    with_selection,
)
from temporal_wavelets.temporal_graph import build_supra_system, lart_weights
from temporal_wavelets.wavelet import (
    WaveletFeatures,
    WaveletFilterSpec,
    correlation_distances,
    derive_filter_and_scales,
    evaluate_filter,
    exact_feature_bank,
    pearson_distance,
    random_signals,
    wavelet_matrix_exact,
    wavelet_sketch_bank,
    wavelet_sketch_fast,
)

KNOTS_0122_4 = WaveletFilterSpec(1.0, 2.0, 2.0, 4.0)

# symbolic Cox-de Boor values for the knot vector (0, 1, 2, 2, 4)
SYMBOLIC_VALUES = {
    Fraction(1, 2): Fraction(1, 32),
    Fraction(1): Fraction(1, 4),
    Fraction(3, 2): Fraction(65, 96),
    Fraction(2): Fraction(2, 3),
    Fraction(3): Fraction(1, 12),
    Fraction(7, 2): Fraction(1, 96),
}


def _instance(seed=0, n=10, t_count=4):
    rng = np.random.default_rng(seed)
    net = make_network([random_connected(n, 0.3, rng) for _ in range(t_count)])
    sys_ = build_supra_system(net, lart_weights(net))
    return net, sys_


def _full_basis(net, sys_):
    basis = leading_eigenpairs(sys_, sys_.size)
    sel = select_lambda_star(basis, layer_null_basis(net, sys_))
    return with_selection(basis, sel)


# ---------------------------------------------------------------------------
# filter

def test_filter_zero_at_support_ends():
    assert evaluate_filter(KNOTS_0122_4, 0.0) == 0.0
    assert evaluate_filter(KNOTS_0122_4, 4.0) == 0.0
    assert evaluate_filter(KNOTS_0122_4, -1.0) == 0.0
    assert evaluate_filter(KNOTS_0122_4, 9.0) == 0.0


def test_filter_matches_symbolic_recursion():
    for y, value in SYMBOLIC_VALUES.items():
        assert evaluate_filter(KNOTS_0122_4, float(y)) == pytest.approx(float(value), abs=1e-15)


@given(st.floats(0.05, 0.95), st.floats(1.05, 3.0), st.floats(1.05, 4.0))
def test_filter_matches_scipy_basis_element(y1, y2_factor, y4_factor):
    y2 = y1 * y2_factor
    y4 = y2 * y4_factor
    spec = WaveletFilterSpec(y1, y2, y2, y4)
    ref = BSpline.basis_element([0.0, y1, y2, y2, y4], extrapolate=False)
    y = np.linspace(0, y4, 257)[1:-1]
    np.testing.assert_allclose(evaluate_filter(spec, y), ref(y), atol=1e-13)
    assert np.all(evaluate_filter(spec, y) > 0)


def test_filter_lipschitz_continuity():
    y = np.linspace(1e-3, 4 - 1e-3, 4001)
    h = 1e-6
    diff = np.abs(evaluate_filter(KNOTS_0122_4, y + h) - evaluate_filter(KNOTS_0122_4, y))
    slope = np.max(np.abs(np.gradient(evaluate_filter(KNOTS_0122_4, y), y)))
    assert np.all(diff <= 2 * slope * h)


def test_filter_spec_validation():
    with pytest.raises(DomainError):
        WaveletFilterSpec(1.0, 2.0, 2.5, 4.0)
    with pytest.raises(DomainError):
        WaveletFilterSpec(2.0, 1.0, 1.0, 4.0)
    with pytest.raises(DomainError):
        WaveletFilterSpec(1.0, 2.0, 2.0, 2.0)


# ---------------------------------------------------------------------------
# scale derivation

def test_scales_for_half():
    spec, grid, _ = derive_filter_and_scales(0.5, 0.6, 10)
    assert grid.s_min == 2 and grid.s_max == 4
    assert spec.y2 == spec.y3 == 2 and spec.y1 == 1


def test_scale_grid_quarter():
    _, grid, _ = derive_filter_and_scales(0.25, 0.3, 3)
    np.testing.assert_allclose(grid.scales, [4, 8, 16], rtol=1e-15)
    assert grid.scales[0] == 4 and grid.scales[-1] == 16


def test_y4_bisection_residual():
    spec, grid, deriv = derive_filter_and_scales(0.1, 0.12, 50)
    assert deriv.y4_method == "bisection"
    g_tail = evaluate_filter(spec, grid.s_max * 0.12)
    assert abs(g_tail - evaluate_filter(spec, spec.y2) / 10) < 1e-10
    assert spec.y4 > spec.y3


def test_lambda_star_at_least_one_raises():
    with pytest.raises(DomainError, match="informative eigenvalue"):
        derive_filter_and_scales(1.0, 1.5, 10)
    with pytest.raises(DomainError):
        derive_filter_and_scales(1.4, 1.5, 10)


def test_no_larger_eigenvalue_falls_back():
    spec, _, deriv = derive_filter_and_scales(0.3, None, 5)
    assert deriv.y4_method == "double" and spec.y4 == 2 * spec.y2


@given(st.floats(1e-3, 0.999), st.floats(1.0001, 3.0), st.integers(2, 60))
def test_scale_identities(lam, ratio, m):
    lam_next = min(2.0, lam * ratio)
    spec, grid, deriv = derive_filter_and_scales(lam, lam_next, m)
    assert grid.s_min * lam == pytest.approx(1, rel=1e-15)
    assert grid.s_max * lam == pytest.approx(spec.y2, rel=1e-15)
    assert spec.y2 == grid.s_min
    steps = grid.scales[1:] / grid.scales[:-1]
    np.testing.assert_allclose(steps, steps[0], rtol=1e-12)
    assert np.all(np.diff(grid.scales) > 0)
    peak = evaluate_filter(spec, grid.s_max * lam)
    tail = evaluate_filter(spec, grid.s_max * lam_next)
    assert peak >= 10 * tail * (1 - 1e-9)


# ---------------------------------------------------------------------------
# exact wavelets

def test_identity_kernel_gives_identity():
    net, sys_ = _instance()
    basis = _full_basis(net, sys_)
    feats = wavelet_matrix_exact(basis, lambda y: np.ones_like(y), 3.0)
    np.testing.assert_allclose(feats.vectors, np.eye(sys_.size), atol=1e-12)


def test_exact_wavelets_symmetric():
    net, sys_ = _instance(2)
    basis = _full_basis(net, sys_)
    spec, grid, _ = derive_filter_and_scales(basis.lambda_star, basis.next_eigenvalue(), 4)
    for s in grid.scales:
        psi = wavelet_matrix_exact(basis, spec, s).vectors
        np.testing.assert_array_equal(psi, psi.T)


def test_exact_requires_full_spectrum():
    net, sys_ = _instance()
    partial = leading_eigenpairs(sys_, 8)
    with pytest.raises(PreconditionError):
        wavelet_matrix_exact(partial, KNOTS_0122_4, 1.0)


def test_exact_column_matches_chebyshev_on_small_instance():
    rng = np.random.default_rng(3)
    net = make_network([random_connected(4, 0.5, rng) for _ in range(2)])
    sys_ = build_supra_system(net, lart_weights(net))
    basis = _full_basis(net, sys_)
    spec, grid, _ = derive_filter_and_scales(basis.lambda_star, basis.next_eigenvalue(), 5)
    for s in grid.scales:
        psi = wavelet_matrix_exact(basis, spec, s).vectors
        series = chebyshev_coefficients(spec, s, 80, sys_.lambda_max_estimate())
        for flat in range(8):
            delta = np.eye(8)[flat]
            assert np.max(np.abs(apply_filtered_operator(sys_, series, delta) - psi[:, flat])) < 1e-3


# ---------------------------------------------------------------------------
# sketches

def test_sketch_is_deterministic():
    _, sys_ = _instance(4)
    a = wavelet_sketch_fast(sys_, KNOTS_0122_4, 2.0, eta=20, seed=11)
    b = wavelet_sketch_fast(sys_, KNOTS_0122_4, 2.0, eta=20, seed=11)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    np.testing.assert_array_equal(a.row_means, b.row_means)
    c = wavelet_sketch_fast(sys_, KNOTS_0122_4, 2.0, eta=20, seed=12)
    assert not np.array_equal(a.vectors, c.vectors)


def test_random_signal_entries():
    r = random_signals(50, 16, 0)
    np.testing.assert_array_equal(np.abs(r), 0.25)
    q = random_signals(50, 16, 0, orthonormal=True)
    np.testing.assert_allclose(q.T @ q, np.eye(16), atol=1e-12)
    with pytest.raises(DomainError):
        random_signals(5, 0, 0)


def test_orthonormal_full_sketch_is_a_rotation():
    _, sys_ = _instance(5, n=8, t_count=3)
    n = sys_.size
    spec = WaveletFilterSpec(1.0, 3.0, 3.0, 6.0)
    lam_max = sys_.lambda_max_estimate()
    sketch = wavelet_sketch_fast(sys_, spec, 2.5, eta=n, seed=1, orthonormal=True, lambda_max=lam_max)
    series = chebyshev_coefficients(spec, 2.5, 80, lam_max)
    psi = apply_filtered_operator(sys_, series, np.eye(n))
    expect = 1 - np.corrcoef(psi)
    np.fill_diagonal(expect, 0)
    got = correlation_distances(sketch).matrix()
    np.testing.assert_allclose(got, np.clip(expect, 0, 2), atol=1e-6)


def _benchmark_banks(eta):
    net, _ = generate_granell(GranellParams(model="grow", n_nodes=64, n_layers=10, seed=1))
    sys_ = build_supra_system(net, lart_weights(net))
    basis = _full_basis(net, sys_)
    spec, grid, _ = derive_filter_and_scales(basis.lambda_star, basis.next_eigenvalue(), 8)
    return exact_feature_bank(basis, spec, grid.scales), wavelet_sketch_bank(sys_, spec, grid.scales, eta, 0)


def _fraction_close(exact, sketch):
    iu = np.triu_indices(exact.vectors.shape[0], 1)
    de = correlation_distances(exact).matrix()[iu]
    ds = correlation_distances(sketch).matrix()[iu]
    return np.mean(np.abs(de - ds) < 0.05)


@pytest.mark.xfail(strict=True, reason="sketch noise on uncorrelated pairs is about 1/sqrt(eta) = 0.1 at eta = 100")
def test_sketch_distances_close_to_exact_at_eta_100():
    exact, sketch = _benchmark_banks(100)
    for e, s in zip(exact, sketch):
        assert _fraction_close(e, s) >= 0.95


def test_sketch_distances_converge_with_eta():
    exact, sketch = _benchmark_banks(3200)
    for e, s in zip(exact, sketch):
        assert _fraction_close(e, s) >= 0.95


# ---------------------------------------------------------------------------
# correlation distances

def test_pearson_distance_oracle():
    # deviations (-1.5, -0.5, 0.5, 1.5) and (-1.75, -0.75, 0.25, 2.25)
    expect = 1 - 6.5 / np.sqrt(5 * 8.75)
    assert pearson_distance([1, 2, 3, 4], [1, 2, 3, 5]) == pytest.approx(expect, abs=1e-15)
    assert expect == pytest.approx(0.0173, abs=1e-4)
    d = correlation_distances(np.array([[1, 2, 3, 4], [1, 2, 3, 5]], dtype=float))
    assert d.pair(0, 1) == pytest.approx(expect, abs=1e-14)


def test_identical_and_negated_rows():
    rows = np.array([[1.0, 3.0, 2.0, 5.0], [1.0, 3.0, 2.0, 5.0], [-1.0, -3.0, -2.0, -5.0]])
    d = correlation_distances(rows)
    assert d.pair(0, 1) == pytest.approx(0, abs=1e-15)
    assert d.pair(0, 2) == pytest.approx(2, abs=1e-15)
    assert d.pair(1, 1) == 0


def test_zero_variance_rows_are_uncorrelated(caplog):
    rows = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [2.0, 2.0, 2.0]])
    d = correlation_distances(rows)
    assert d.pair(0, 1) == 1 and d.pair(0, 2) == 1
    assert d.zero_variance.tolist() == [True, False, True]
    assert "zero-variance" in caplog.text
    assert pearson_distance([1, 1, 1], [1, 2, 3]) == 1


def test_cluster_mean_matches_pairwise_average(rng):
    rows = rng.normal(size=(9, 6))
    d = correlation_distances(rows)
    a, b = [0, 3, 4], [1, 7]
    brute = np.mean([d.pair(i, j) for i in a for j in b])
    assert d.cluster_mean(a, b) == pytest.approx(brute, abs=1e-12)
    full = d.matrix()
    assert np.allclose(full, full.T) and np.all(np.diag(full) == 0)
    assert d.condensed().shape == (36,)


@given(st.integers(0, 2 ** 32 - 1))
def test_distance_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(5, 8))
    scale = rng.uniform(0.1, 10, size=(5, 1))
    shift = rng.normal(size=(5, 1))
    a = correlation_distances(rows).matrix()
    b = correlation_distances(rows * scale + shift).matrix()
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.all((a >= 0) & (a <= 2))


def test_fast_features_centering_matches_full_rows():
    """Centered sketch rows equal the sketch of the mean-removed wavelets."""
    _, sys_ = _instance(6, n=6, t_count=2)
    n = sys_.size
    spec = WaveletFilterSpec(1.0, 2.0, 2.0, 5.0)
    lam_max = sys_.lambda_max_estimate()
    sk = wavelet_sketch_fast(sys_, spec, 1.5, eta=7, seed=3, lambda_max=lam_max)
    series = chebyshev_coefficients(spec, 1.5, 80, lam_max)
    psi = apply_filtered_operator(sys_, series, np.eye(n))
    centered = psi - psi.mean(axis=1, keepdims=True)
    signals = random_signals(n, 7, np.random.SeedSequence(3))
    assert isinstance(sk, WaveletFeatures)
    np.testing.assert_allclose(sk.centered(), centered @ signals, atol=1e-10)
