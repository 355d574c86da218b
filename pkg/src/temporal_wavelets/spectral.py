"""Spectral machinery on the normalized supra-Laplacian.

Provides the leading eigenpairs, the regression test that locates the first
eigenvector not explained by the per-layer null vectors, and the Chebyshev
polynomial filters used when the full spectrum is out of reach.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import connected_components

from .exceptions import DomainError, ParseError, PreconditionError, SolverError
from .temporal_graph import SupraSystem, TemporalNetwork

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
EIG_TOL = 1e-10
RESIDUAL_LIMIT = 1e-6
DEFAULT_THRESHOLD = 0.8


@dataclass(frozen=True)
class SpectralBasis:
    """Smallest eigenpairs of the supra-Laplacian.

    ``q_index`` is 1-based, so ``lambda_star == eigenvalues[q_index - 1]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lambda_max_estimate: float
    lambda_star: float | None = None
    q_index: int | None = None
    residual_norms: np.ndarray | None = None
    q_fallback: bool = False

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def size(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def complete(self) -> bool:
        return self.k == self.size

    def next_eigenvalue(self, tol: float = 1e-10) -> float | None:
        """First eigenvalue strictly above ``lambda_star`` (beyond ``tol``)."""
        if self.q_index is None:
            raise PreconditionError("lambda_star has not been selected")
        above = self.eigenvalues[self.q_index:]
        above = above[above - self.lambda_star >= tol]
        return float(above[0]) if above.size else None


@dataclass(frozen=True)
class LayerNullBasis:
    """Zero-padded null vectors of the individual layer Laplacians.

    Column ``t`` (for ``t < n_layers``) is the unit square-root-degree vector of
    layer ``t``. Disconnected layers contribute one extra column per extra
    connected component.
    """

    vectors: np.ndarray
    n_layers: int
    extra_layers: tuple = ()

    @property
    def n_columns(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class LambdaSelection:
    q_index: int
    lambda_star: float
    residual_norms: np.ndarray
    fallback: bool


@dataclass(frozen=True)
class ChebyshevSeries:
    """Chebyshev expansion of a spectral kernel on ``[0, lambda_max]``.

    ``coeffs[0]`` follows the halved convention: the series is
    ``coeffs[0] / 2 + sum_k coeffs[k] T_k``.
    """

    coeffs: np.ndarray
    lambda_max: float
    max_error: float


# ---------------------------------------------------------------------------
# eigenpairs

def leading_eigenpairs(
    sys_: SupraSystem,
    k: int,
    *,
    method: str = "auto",
    seed: int = 0,
    tol: float = EIG_TOL,
    maxiter: int | None = None,
) -> SpectralBasis:
    """Compute the ``k`` smallest eigenpairs of the supra-Laplacian.

    ``method`` is ``"dense"`` (full decomposition, only for ``NT <= 4096``),
    ``"iterative"`` (implicitly restarted Lanczos with a seeded start vector)
    or ``"auto"``, which picks dense for small systems.
    """
    n = sys_.size
    if not 1 <= k <= n:
        raise DomainError(f"k must be in [1, {n}], got {k}")
    lap = sys_.supra_laplacian
    if method == "auto":
        method = "dense" if (n <= 1024 or k > n // 2) and n <= DENSE_LIMIT else "iterative"
    if method == "dense":
        if n > DENSE_LIMIT:
            raise PreconditionError(f"dense decomposition limited to NT <= {DENSE_LIMIT}")
        vals, vecs = la.eigh(lap.toarray(), subset_by_index=[0, k - 1])
    elif method == "iterative":
        if k >= n - 1:
            raise PreconditionError("iterative solver needs k < NT - 1; use the dense method")
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        maxiter = maxiter or 10 * n
        ncv = min(n, max(2 * k + 1, k + 32))
        try:
            vals, vecs = sla.eigsh(lap, k=k, which="SA", v0=v0, tol=tol, maxiter=maxiter, ncv=ncv)
        except sla.ArpackNoConvergence as exc:
            res = _max_residual(lap, exc.eigenvalues, exc.eigenvectors) if len(exc.eigenvalues) else np.inf
            raise SolverError(
                f"eigensolver did not converge after {maxiter} iterations "
                f"({len(exc.eigenvalues)}/{k} pairs, max residual {res:.3e})",
                residual=res,
            ) from None
    else:
        raise DomainError(f"unknown eigensolver method {method!r}")

    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = _fix_signs(vecs[:, order])
    res = _max_residual(lap, vals, vecs)
    if res > RESIDUAL_LIMIT:
        raise SolverError(f"eigenpair residual {res:.3e} exceeds {RESIDUAL_LIMIT}", residual=res)
    vals = np.clip(vals, 0.0, None) if vals[0] > -1e-9 else vals
    return SpectralBasis(vals, vecs, sys_.lambda_max_estimate())


def _max_residual(lap, vals, vecs) -> float:
    return float(np.max(np.linalg.norm(lap @ vecs - vecs * vals, axis=0)))


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # deterministic sign: the entry of largest magnitude is positive
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivots, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


# ---------------------------------------------------------------------------
# informative eigenvalue

def layer_null_basis(net: TemporalNetwork, sys_: SupraSystem) -> LayerNullBasis:
    """Per-layer null vectors, zero-padded to supra length."""
    n, t_count = net.n_nodes, net.n_layers
    cols = []
    extra_cols = []
    extra_layers = []
    for t, a in enumerate(net.layers):
        deg = np.asarray(a.sum(axis=1)).ravel()
        root = np.sqrt(deg)
        n_comp, comp = connected_components(a, directed=False)
        col = np.zeros(n * t_count)
        if root.any():
            col[t * n:(t + 1) * n] = root / np.linalg.norm(root)
        else:
            col[t * n:(t + 1) * n] = 1.0 / np.sqrt(n)
        cols.append(col)
        if n_comp > 1:
            warnings.warn(
                f"layer {t} has {n_comp} connected components; extending the null basis",
                stacklevel=2,
            )
            # the first component is covered by the span of the full column
            for c in range(1, n_comp):
                members = comp == c
                piece = np.where(members, root, 0.0)
                if not piece.any():
                    piece = members.astype(float)
                extra = np.zeros(n * t_count)
                extra[t * n:(t + 1) * n] = piece / np.linalg.norm(piece)
                extra_cols.append(extra)
                extra_layers.append(t)
    vectors = np.column_stack(cols + extra_cols)
    return LayerNullBasis(vectors, t_count, tuple(extra_layers))


def regression_residuals(eigenvectors: np.ndarray, nulls: LayerNullBasis) -> np.ndarray:
    """Norm of each eigenvector's least-squares residual against the null span."""
    q, _ = np.linalg.qr(nulls.vectors)
    proj = q @ (q.T @ eigenvectors)
    return np.linalg.norm(eigenvectors - proj, axis=0)


def select_lambda_star(
    basis: SpectralBasis,
    nulls: LayerNullBasis,
    threshold: float = DEFAULT_THRESHOLD,
) -> LambdaSelection:
    """Locate the first eigenvector poorly explained by the layer null vectors.

    For ``tau = 1, 2, ...`` the residual of regressing eigenvector ``tau`` on
    the null basis is compared with ``threshold``; the first exceedance gives
    ``q_index``. At most ``T + 1`` regressions are solved (one more per extra
    null column from disconnected layers); if none exceeds the threshold the
    last position is returned with ``fallback=True``.
    """
    if not 0 < threshold <= 1:
        raise DomainError("threshold must lie in (0, 1]")
    cap = nulls.n_columns + 1
    if basis.k < cap:
        raise PreconditionError(f"need at least {cap} eigenpairs to select lambda_star, have {basis.k}")
    residuals = regression_residuals(basis.eigenvectors[:, :cap], nulls)
    over = np.flatnonzero(residuals > threshold)
    if over.size:
        q, fallback = int(over[0]) + 1, False
    else:
        q, fallback = cap, True
        logger.warning("no regression residual exceeded %.3g; using q_index = %d", threshold, q)
    return LambdaSelection(q, float(basis.eigenvalues[q - 1]), residuals, fallback)


def with_selection(basis: SpectralBasis, sel: LambdaSelection) -> SpectralBasis:
    return replace(
        basis,
        lambda_star=sel.lambda_star,
        q_index=sel.q_index,
        residual_norms=sel.residual_norms,
        q_fallback=sel.fallback,
    )


# ---------------------------------------------------------------------------
# Chebyshev filters

def chebyshev_coefficients(
    kernel: Callable[[np.ndarray], np.ndarray],
    scale: float,
    order: int,
    lambda_max: float,
    *,
    n_quad: int | None = None,
    grid_points: int = 1000,
) -> ChebyshevSeries:
    """Expand ``y -> kernel(scale * y)`` on ``[0, lambda_max]``.

    Coefficients come from Gauss-Chebyshev quadrature of the projection
    integrals; the maximum deviation from the kernel on an evenly spaced grid
    is reported as ``max_error``.
    """
    coeffs = chebyshev_coefficient_matrix(kernel, [scale], order, lambda_max, n_quad=n_quad)[0]
    grid = np.linspace(0.0, lambda_max, grid_points)
    approx = chebyshev_eval(coeffs, grid, lambda_max)
    err = float(np.max(np.abs(approx - kernel(scale * grid))))
    return ChebyshevSeries(coeffs, float(lambda_max), err)


def chebyshev_coefficient_matrix(kernel, scales, order, lambda_max, *, n_quad=None) -> np.ndarray:
    """Coefficients for several scales at once, shape ``(len(scales), order + 1)``."""
    if order < 0:
        raise DomainError("order must be non-negative")
    if not lambda_max > 0:
        raise DomainError(f"lambda_max must be positive, got {lambda_max}")
    n_quad = n_quad or max(order + 1, 4 * (order + 1))
    half = lambda_max / 2.0
    theta = np.pi * (np.arange(n_quad) + 0.5) / n_quad
    y = half * np.cos(theta) + half
    scales = np.asarray(scales, dtype=float)
    values = kernel(scales[:, None] * y[None, :])
    basis = np.cos(np.outer(np.arange(order + 1), theta))
    return (2.0 / n_quad) * values @ basis.T


def chebyshev_eval(coeffs: np.ndarray, y: np.ndarray, lambda_max: float) -> np.ndarray:
    """Evaluate a halved-convention series at scalar points ``y``."""
    x = (2.0 / lambda_max) * np.asarray(y, dtype=float) - 1.0
    return np.polynomial.chebyshev.chebval(x, coeffs) - 0.5 * coeffs[0]


def _rescaled(lap: sp.spmatrix, lambda_max: float) -> sp.csr_matrix:
    n = lap.shape[0]
    return sp.csr_matrix((2.0 / lambda_max) * lap - sp.identity(n, format="csr"))


def apply_filtered_operator(sys_: SupraSystem, series, signal: np.ndarray, lambda_max: float | None = None) -> np.ndarray:
    """Apply a Chebyshev-expanded kernel of the supra-Laplacian to ``signal``.

    ``series`` is a :class:`ChebyshevSeries` or a bare coefficient array (then
    ``lambda_max`` defaults to the system's estimate). ``signal`` may be a
    vector or an ``NT x m`` block; only sparse products are used.
    """
    if isinstance(series, ChebyshevSeries):
        coeffs, lambda_max = series.coeffs, series.lambda_max
    else:
        coeffs = np.asarray(series, dtype=float)
        lambda_max = lambda_max or sys_.lambda_max_estimate()
    if coeffs.size == 0:
        raise DomainError("empty coefficient list")
    signal = np.asarray(signal, dtype=float)
    if signal.shape[0] != sys_.size:
        raise DomainError(f"signal length {signal.shape[0]} does not match NT = {sys_.size}")
    op = _rescaled(sys_.supra_laplacian, lambda_max)
    t_prev = signal
    out = 0.5 * coeffs[0] * t_prev
    if coeffs.size == 1:
        return out
    t_cur = op @ signal
    out = out + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_next = 2.0 * (op @ t_cur) - t_prev
        out = out + c * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def filter_bank_apply(
    sys_: SupraSystem,
    coeff_matrix: np.ndarray,
    signals: np.ndarray,
    lambda_max: float,
    *,
    chunk: int = 16,
) -> np.ndarray:
    """Filter a block of signals at several scales with one shared recurrence.

    Returns an array of shape ``(n_scales, NT, m)``. The Chebyshev terms
    ``T_k(L) x`` do not depend on the scale, so they are computed once per
    column chunk and combined with every scale's coefficients in one product.
    """
    coeff_matrix = np.atleast_2d(np.asarray(coeff_matrix, dtype=float))
    n_scales, n_terms = coeff_matrix.shape
    n, m = signals.shape
    weights = coeff_matrix.copy()
    weights[:, 0] *= 0.5
    op = _rescaled(sys_.supra_laplacian, lambda_max)
    out = np.empty((n_scales, n, m))
    for start in range(0, m, chunk):
        block = np.ascontiguousarray(signals[:, start:start + chunk])
        width = block.shape[1]
        terms = np.empty((n_terms, n, width))
        terms[0] = block
        if n_terms > 1:
            terms[1] = op @ block
        for k in range(2, n_terms):
            terms[k] = 2.0 * (op @ terms[k - 1]) - terms[k - 2]
        mixed = weights @ terms.reshape(n_terms, n * width)
        out[:, :, start:start + width] = mixed.reshape(n_scales, n, width)
    return out


# ---------------------------------------------------------------------------
# binary cache

_BASIS_MAGIC = b"TWSPEC01"
_VERSION = 1


def save_basis(basis: SpectralBasis, path) -> None:
    """Write a basis as magic, version, dims and row-major little-endian doubles."""
    n, k = basis.eigenvectors.shape
    q = basis.q_index or 0
    lam = basis.lambda_star if basis.lambda_star is not None else np.nan
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_BASIS_MAGIC)
        fh.write(struct.pack("<IQQQ?", _VERSION, n, k, q, basis.q_fallback))
        fh.write(struct.pack("<dd", basis.lambda_max_estimate, lam))
        fh.write(np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.eigenvectors, dtype="<f8").tobytes())
        has_res = basis.residual_norms is not None
        fh.write(struct.pack("<Q", len(basis.residual_norms) if has_res else 0))
        if has_res:
            fh.write(np.ascontiguousarray(basis.residual_norms, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_basis(path) -> SpectralBasis:
    with open(path, "rb") as fh:
        if fh.read(len(_BASIS_MAGIC)) != _BASIS_MAGIC:
            raise ParseError(f"{path}: not a spectral basis cache file")
        version, n, k, q, fallback = struct.unpack("<IQQQ?", fh.read(struct.calcsize("<IQQQ?")))
        if version != _VERSION:
            raise ParseError(f"{path}: unsupported cache version {version}")
        lmax, lam = struct.unpack("<dd", fh.read(16))
        vals = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
        vecs = np.frombuffer(fh.read(8 * n * k), dtype="<f8").reshape(n, k).copy()
        (n_res,) = struct.unpack("<Q", fh.read(8))
        res = np.frombuffer(fh.read(8 * n_res), dtype="<f8").copy() if n_res else None
    if vals.shape[0] != k or vecs.size != n * k:
        raise ParseError(f"{path}: truncated cache file")
    return SpectralBasis(
        vals, vecs, lmax,
        lambda_star=None if np.isnan(lam) else float(lam),
        q_index=q or None,
        residual_norms=res,
        q_fallback=bool(fallback),
    )


def system_fingerprint(sys_: SupraSystem) -> str:
    lap = sys_.supra_laplacian
    h = hashlib.sha256()
    h.update(struct.pack("<QQ", sys_.n_nodes, sys_.n_layers))
    for arr in (lap.indptr, lap.indices, lap.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:32]


def cached_leading_eigenpairs(sys_: SupraSystem, k: int, cache_dir=None, **kwargs) -> SpectralBasis:
    """:func:`leading_eigenpairs` backed by an on-disk cache keyed by the system."""
    if not cache_dir:
        return leading_eigenpairs(sys_, k, **kwargs)
    os.makedirs(cache_dir, exist_ok=True)
    key = f"{system_fingerprint(sys_)}_k{k}_{kwargs.get('method', 'auto')}_s{kwargs.get('seed', 0)}"
    path = os.path.join(cache_dir, f"{key}.eig")
    if os.path.exists(path):
        try:
            basis = load_basis(path)
            if basis.k == k and basis.size == sys_.size:
                logger.info("loaded cached eigenpairs from %s", path)
                return replace(basis, lambda_star=None, q_index=None, residual_norms=None, q_fallback=False)
        except (ParseError, OSError, struct.error, ValueError):
            logger.warning("ignoring unreadable cache file %s", path)
    basis = leading_eigenpairs(sys_, k, **kwargs)
    save_basis(basis, path)
    return basis
