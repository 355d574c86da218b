import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from conftest import complete, make_network, path, random_connected
from temporal_wavelets.exceptions import DomainError, PreconditionError
from temporal_wavelets.spectral import (
    SpectralBasis,
    apply_filtered_operator,
    cached_leading_eigenpairs,
    chebyshev_coefficients,
    layer_null_basis,
    leading_eigenpairs,
    load_basis,
    regression_residuals,
    save_basis,
    select_lambda_star,
)
from temporal_wavelets.temporal_graph import build_supra_system, constant_weights, lart_weights
from temporal_wavelets.wavelet import WaveletFilterSpec, derive_filter_and_scales, wavelet_matrix_exact


def _system(layers, omega=None):
    net = make_network(layers)
    w = lart_weights(net) if omega is None else constant_weights(net, omega)
    return net, build_supra_system(net, w)


def _random_instance(seed, n=10, t_count=4, omega=None):
    rng = np.random.default_rng(seed)
    return _system([random_connected(n, 0.3, rng) for _ in range(t_count)], omega)


# ---------------------------------------------------------------------------
# eigenpairs

def test_two_triangles_monoplex_has_two_zero_eigenvalues():
    a = np.zeros((6, 6))
    a[:3, :3] = complete(3)
    a[3:, 3:] = complete(3)
    _, sys_ = _system([a])
    basis = leading_eigenpairs(sys_, 3)
    np.testing.assert_allclose(basis.eigenvalues[:2], 0, atol=1e-10)
    assert basis.eigenvalues[2] > 0.5


@pytest.mark.parametrize("method", ["dense", "iterative"])
def test_coupled_paths_match_dense_oracle(method):
    _, sys_ = _system([path(4), path(4)], omega=1.0)
    k = 5
    basis = leading_eigenpairs(sys_, k, method=method)
    vals, vecs = la.eigh(sys_.supra_laplacian.toarray())
    np.testing.assert_allclose(basis.eigenvalues, vals[:k], atol=1e-8)
    for j in range(k):
        assert abs(abs(basis.eigenvectors[:, j] @ vecs[:, j]) - 1) < 1e-8


def test_full_basis_reconstructs_laplacian():
    _, sys_ = _random_instance(3, n=6, t_count=3)
    basis = leading_eigenpairs(sys_, sys_.size)
    chi = basis.eigenvectors
    np.testing.assert_allclose(chi @ np.diag(basis.eigenvalues) @ chi.T, sys_.supra_laplacian.toarray(), atol=1e-8)
    np.testing.assert_allclose(chi.T @ chi, np.eye(sys_.size), atol=1e-8)
    assert basis.complete


def test_iterative_solver_on_larger_instance():
    _, sys_ = _random_instance(5, n=60, t_count=4)
    it = leading_eigenpairs(sys_, 12, method="iterative", seed=1)
    dense = leading_eigenpairs(sys_, 12, method="dense")
    np.testing.assert_allclose(it.eigenvalues, dense.eigenvalues, atol=1e-8)
    assert np.all(np.diff(it.eigenvalues) >= 0)
    np.testing.assert_allclose(it.eigenvectors.T @ it.eigenvectors, np.eye(12), atol=1e-8)
    # deterministic given the seed
    again = leading_eigenpairs(sys_, 12, method="iterative", seed=1)
    np.testing.assert_array_equal(it.eigenvalues, again.eigenvalues)


def test_k_out_of_range():
    _, sys_ = _system([path(4)])
    with pytest.raises(DomainError):
        leading_eigenpairs(sys_, 0)
    with pytest.raises(DomainError):
        leading_eigenpairs(sys_, 5)


def test_basis_cache_round_trip(tmp_path):
    _, sys_ = _random_instance(2, n=8, t_count=3)
    basis = leading_eigenpairs(sys_, 6)
    f = tmp_path / "b.bin"
    save_basis(basis, f)
    back = load_basis(f)
    np.testing.assert_array_equal(back.eigenvalues, basis.eigenvalues)
    np.testing.assert_array_equal(back.eigenvectors, basis.eigenvectors)
    assert back.lambda_max_estimate == basis.lambda_max_estimate
    first = cached_leading_eigenpairs(sys_, 6, tmp_path / "cache")
    second = cached_leading_eigenpairs(sys_, 6, tmp_path / "cache")
    np.testing.assert_array_equal(first.eigenvectors, second.eigenvectors)
    assert len(list((tmp_path / "cache").iterdir())) == 1


# ---------------------------------------------------------------------------
# null basis and lambda*

def test_regular_layer_null_column():
    net, sys_ = _system([complete(5), complete(5)])
    nulls = layer_null_basis(net, sys_)
    np.testing.assert_allclose(nulls.vectors[:5, 0], 1 / np.sqrt(5))
    np.testing.assert_array_equal(nulls.vectors[5:, 0], 0)


def test_star_layer_null_column():
    star = np.zeros((4, 4))
    star[0, 1:] = star[1:, 0] = 1
    net, sys_ = _system([star])
    col = layer_null_basis(net, sys_).vectors[:, 0]
    expect = np.array([np.sqrt(3), 1, 1, 1])
    np.testing.assert_allclose(col, expect / np.linalg.norm(expect))


def test_random_layer_null_columns(rng):
    layers = [random_connected(9, 0.3, rng) for _ in range(3)]
    net, sys_ = _system(layers)
    nulls = layer_null_basis(net, sys_)
    assert nulls.n_columns == 3
    for t, a in enumerate(layers):
        root = np.sqrt(a.sum(axis=1))
        col = nulls.vectors[:, t]
        np.testing.assert_allclose(col[t * 9:(t + 1) * 9], root / np.linalg.norm(root))
        assert np.count_nonzero(np.delete(col, np.arange(t * 9, (t + 1) * 9))) == 0


def test_disconnected_layer_extends_null_basis():
    a = np.zeros((6, 6))
    a[:3, :3] = complete(3)
    a[3:, 3:] = complete(3)
    with pytest.warns(UserWarning):
        net, sys_ = _system([a, complete(6)], omega=0.0)
        nulls = layer_null_basis(net, sys_)
    assert nulls.n_columns == 3 and nulls.extra_layers == (0,)


@pytest.mark.parametrize("t_count", [1, 2, 3, 5])
def test_decoupled_layers_select_t_plus_one(t_count):
    rng = np.random.default_rng(t_count)
    layers = [random_connected(8, 0.35, rng) for _ in range(t_count)]
    net, sys_ = _system(layers, omega=0.0)
    basis = leading_eigenpairs(sys_, t_count + 2)
    sel = select_lambda_star(basis, layer_null_basis(net, sys_))
    assert sel.q_index == t_count + 1
    assert np.all(sel.residual_norms[:t_count] < 1e-12)
    assert sel.lambda_star == basis.eigenvalues[t_count]


def test_small_omega_continuity():
    rng = np.random.default_rng(0)
    layers = [random_connected(8, 0.35, rng) for _ in range(3)]
    net, sys_ = _system(layers, omega=1e-6)
    basis = leading_eigenpairs(sys_, 6)
    assert select_lambda_star(basis, layer_null_basis(net, sys_)).q_index == 4


def test_monoplex_selects_second_eigenvalue(rng):
    net, sys_ = _system([random_connected(12, 0.3, rng)])
    basis = leading_eigenpairs(sys_, 3)
    sel = select_lambda_star(basis, layer_null_basis(net, sys_))
    assert sel.q_index == 2 and sel.lambda_star == basis.eigenvalues[1]
    assert sel.residual_norms[0] < 1e-12 and abs(sel.residual_norms[1] - 1) < 1e-12


def test_too_few_eigenpairs():
    net, sys_ = _system([path(5)] * 3, omega=1.0)
    basis = leading_eigenpairs(sys_, 3)
    with pytest.raises(PreconditionError):
        select_lambda_star(basis, layer_null_basis(net, sys_))


def test_fallback_flag_when_no_residual_exceeds():
    net, sys_ = _system([path(5)] * 2, omega=1.0)
    basis = leading_eigenpairs(sys_, 3)
    sel = select_lambda_star(basis, layer_null_basis(net, sys_), threshold=1.0)
    assert sel.fallback and sel.q_index == 3


@given(st.integers(0, 2 ** 32 - 1))
def test_selection_sign_flip_invariance(seed):
    net, sys_ = _random_instance(seed % 1000, n=7, t_count=3)
    basis = leading_eigenpairs(sys_, 6)
    nulls = layer_null_basis(net, sys_)
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=6)
    flipped = SpectralBasis(basis.eigenvalues, basis.eigenvectors * signs, basis.lambda_max_estimate)
    a = select_lambda_star(basis, nulls)
    b = select_lambda_star(flipped, nulls)
    assert a.q_index == b.q_index
    np.testing.assert_allclose(a.residual_norms, b.residual_norms, atol=1e-13)
    r = regression_residuals(basis.eigenvectors, nulls)
    assert np.all((r >= 0) & (r <= 1 + 1e-12))


# ---------------------------------------------------------------------------
# Chebyshev machinery

def test_constant_expansion():
    series = chebyshev_coefficients(lambda y: np.ones_like(y), 1.0, 10, 2.0)
    assert abs(series.coeffs[0] - 2) < 1e-14
    np.testing.assert_allclose(series.coeffs[1:], 0, atol=1e-14)
    assert series.max_error < 1e-14


def test_filter_expansion_error_and_monotonicity():
    spec, grid, _ = derive_filter_and_scales(0.3, 0.35, 10)
    for s in grid.scales:
        e40 = chebyshev_coefficients(spec, s, 40, 2.0).max_error
        e80 = chebyshev_coefficients(spec, s, 80, 2.0).max_error
        assert e80 <= e40
    # filter support fully inside the interval: high accuracy at order 80
    s = spec.y4 / 2.0 / 1.01
    assert chebyshev_coefficients(spec, s, 80, 2.0).max_error < 1e-3


def test_chebyshev_domain_errors():
    with pytest.raises(DomainError):
        chebyshev_coefficients(lambda y: y, 1.0, 5, 0.0)
    _, sys_ = _system([path(3)])
    with pytest.raises(DomainError):
        apply_filtered_operator(sys_, np.array([]), np.ones(3))


def test_identity_filter_and_zero_signal(rng):
    _, sys_ = _random_instance(1, n=6, t_count=2)
    series = chebyshev_coefficients(lambda y: np.ones_like(y), 1.0, 20, sys_.lambda_max_estimate())
    x = rng.normal(size=sys_.size)
    np.testing.assert_allclose(apply_filtered_operator(sys_, series, x), x, atol=1e-12)
    np.testing.assert_array_equal(apply_filtered_operator(sys_, series, np.zeros(sys_.size)), 0)


def test_filtered_delta_matches_exact_wavelet():
    _, sys_ = _random_instance(7, n=20, t_count=5)
    basis = leading_eigenpairs(sys_, sys_.size)
    spec, grid, _ = derive_filter_and_scales(0.25, 0.3, 5)
    lam_max = sys_.lambda_max_estimate()
    for s in grid.scales:
        psi = wavelet_matrix_exact(basis, spec, s).vectors
        series = chebyshev_coefficients(spec, s, 80, lam_max)
        for flat in (0, 37, 99):
            delta = np.zeros(sys_.size)
            delta[flat] = 1
            approx = apply_filtered_operator(sys_, series, delta)
            assert np.max(np.abs(approx - psi[:, flat])) < 1e-3
            cos = approx @ psi[:, flat] / (np.linalg.norm(approx) * np.linalg.norm(psi[:, flat]))
            assert cos >= 0.999
