"""Cubic B-spline wavelet filter, scale selection and wavelet features."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, PreconditionError
from .spectral import (
    SpectralBasis,
    chebyshev_coefficient_matrix,
    filter_bank_apply,
)
from .temporal_graph import SupraSystem

logger = logging.getLogger(__name__)

ATTENUATION = 10.0
DEFAULT_SCALES = 50
DEFAULT_ETA = 100
DEFAULT_ORDER = 80


@dataclass(frozen=True)
class WaveletFilterSpec:
    """Knots of the cubic B-spline ``B_3(0, y1, y2, y3, y4; .)`` with ``y2 == y3``."""

    y1: float
    y2: float
    y3: float
    y4: float

    def __post_init__(self):
        if not (0 < self.y1 < self.y2 == self.y3 < self.y4):
            raise DomainError(
                f"knots must satisfy 0 < y1 < y2 = y3 < y4, got {(self.y1, self.y2, self.y3, self.y4)}"
            )

    @property
    def knots(self) -> tuple:
        return (0.0, self.y1, self.y2, self.y3, self.y4)

    def __call__(self, y):
        return evaluate_filter(self, y)


@dataclass(frozen=True)
class ScaleGrid:
    s_min: float
    s_max: float
    scales: np.ndarray
    degenerate: bool = False

    @property
    def M(self) -> int:
        return len(self.scales)


@dataclass(frozen=True)
class FilterDerivation:
    """Diagnostics of :func:`derive_filter_and_scales`."""

    lambda_star: float
    lambda_next: float | None
    y4_method: str  # "bisection", "midpoint" or "double"
    attenuation: float


@dataclass(frozen=True)
class WaveletFeatures:
    """Wavelet feature rows at one scale.

    ``vectors[a]`` is the feature row of flat node-time ``a``: the full wavelet
    in exact mode, its projection on ``eta`` random signals in fast mode.
    ``row_means`` and ``signal_sums`` let :meth:`centered` remove each wavelet's
    mean before projection, so correlations are those of the full wavelets.
    """

    scale: float
    vectors: np.ndarray
    mode: str
    row_means: np.ndarray
    signal_sums: np.ndarray

    def centered(self) -> np.ndarray:
        return self.vectors - np.outer(self.row_means, self.signal_sums)

    def unit_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered rows scaled to unit norm, plus a zero-variance mask."""
        c = self.centered()
        norms = np.linalg.norm(c, axis=1)
        ref = norms.max() if norms.size else 0.0
        flat = norms <= 1e-12 * max(ref, 1e-300)
        safe = np.where(flat, 1.0, norms)
        unit = c / safe[:, None]
        unit[flat] = 0.0
        return unit, flat


# ---------------------------------------------------------------------------
# filter

def evaluate_filter(spec: WaveletFilterSpec, y):
    """Cubic B-spline on the knots ``(0, y1, y2, y3, y4)`` by Cox-de Boor recursion.

    Zero outside ``[0, y4)``; accepts scalars or arrays.
    """
    knots = spec.knots
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    basis = [((knots[i] <= y) & (y < knots[i + 1])).astype(float) for i in range(4)]
    for k in range(1, 4):
        nxt = []
        for i in range(4 - k):
            left_den = knots[i + k] - knots[i]
            right_den = knots[i + k + 1] - knots[i + 1]
            term = np.zeros_like(y)
            if left_den > 0:
                term += (y - knots[i]) / left_den * basis[i]
            if right_den > 0:
                term += (knots[i + k + 1] - y) / right_den * basis[i + 1]
            nxt.append(term)
        basis = nxt
    out = basis[0]
    return float(out[0]) if scalar else out


def _solve_y4(y2: float, x: float) -> tuple[float, str]:
    """Bisection for ``g(x) = g(y2) / 10`` over ``y4`` in ``(y2, 50 * y2]``."""

    def gap(y4):
        spec = WaveletFilterSpec(1.0, y2, y2, y4)
        return evaluate_filter(spec, x) - evaluate_filter(spec, y2) / ATTENUATION

    lo, hi = y2, 50.0 * y2
    if gap(hi) < 0:
        mid = y2 + (x - y2) / 2.0
        if mid > y2:
            return mid, "midpoint"
        return 2.0 * y2, "double"
    # gap < 0 just above y2 because x > y4 there; keep lo on the over-attenuated side
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-12 * hi:
            break
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    if lo <= y2:
        lo = hi
    return lo, "bisection"


def derive_filter_and_scales(
    lambda_star: float,
    lambda_next: float | None,
    M: int = DEFAULT_SCALES,
) -> tuple[WaveletFilterSpec, ScaleGrid, FilterDerivation]:
    """Filter knots and log-spaced scale grid centred on ``lambda_star``.

    ``y1 = 1``, ``y2 = y3 = s_min = 1 / lambda_star`` and
    ``s_max = 1 / lambda_star**2``. ``y4`` is chosen so that at ``s_max`` the
    next eigenvalue is attenuated tenfold relative to ``lambda_star``.
    ``lambda_next=None`` means no larger eigenvalue is known; ``y4`` then
    falls back to ``2 * y2``.
    """
    if M < 2:
        raise DomainError("M must be at least 2")
    if not lambda_star > 0:
        raise DomainError(f"lambda_star must be positive, got {lambda_star}")
    if lambda_star >= 1:
        raise DomainError("informative eigenvalue >= 1; no valid scale range")
    y1 = 1.0
    s_min = y1 / lambda_star
    s_max = y1 / lambda_star ** 2
    y2 = s_min
    if lambda_next is not None:
        if lambda_next <= lambda_star or lambda_next > 2.0 + 1e-9:
            raise DomainError(f"need lambda_star < lambda_next <= 2, got {lambda_star}, {lambda_next}")
        y4, how = _solve_y4(y2, s_max * lambda_next)
    else:
        y4, how = 2.0 * y2, "double"
    spec = WaveletFilterSpec(y1, y2, y2, y4)
    scales = np.geomspace(s_min, s_max, M)
    scales[0], scales[-1] = s_min, s_max
    grid = ScaleGrid(s_min, s_max, scales, degenerate=s_min == s_max)
    if lambda_next is not None:
        peak = evaluate_filter(spec, s_max * lambda_star)
        tail = evaluate_filter(spec, s_max * lambda_next)
        att = peak / tail if tail > 0 else np.inf
    else:
        att = np.nan
    if how != "bisection":
        logger.info("y4 fallback rule %r used (y4 = %.6g)", how, y4)
    return spec, grid, FilterDerivation(lambda_star, lambda_next, how, float(att))


# ---------------------------------------------------------------------------
# features

def wavelet_matrix_exact(basis: SpectralBasis, spec, scale: float) -> WaveletFeatures:
    """``chi diag(g(s lambda)) chi^T`` from a complete eigendecomposition.

    ``spec`` is any callable kernel, normally a :class:`WaveletFilterSpec`.
    """
    if not basis.complete:
        raise PreconditionError(
            f"exact wavelets need the full spectrum ({basis.k} of {basis.size} eigenpairs); use the fast sketch"
        )
    chi = basis.eigenvectors
    gains = np.asarray(spec(scale * basis.eigenvalues), dtype=float)
    psi = (chi * gains) @ chi.T
    psi = 0.5 * (psi + psi.T)
    n = psi.shape[0]
    return WaveletFeatures(float(scale), psi, "exact", psi.mean(axis=1), np.ones(n))


def exact_feature_bank(basis: SpectralBasis, spec, scales) -> list[WaveletFeatures]:
    return [wavelet_matrix_exact(basis, spec, s) for s in scales]


def random_signals(n: int, eta: int, seed, *, orthonormal: bool = False) -> np.ndarray:
    """``n x eta`` matrix of i.i.d. ``+-1/sqrt(eta)`` entries (or its orthonormalization)."""
    if eta < 1:
        raise DomainError("eta must be at least 1")
    rng = np.random.default_rng(seed)
    signals = rng.choice(np.array([-1.0, 1.0]), size=(n, eta)) / np.sqrt(eta)
    if orthonormal:
        signals, _ = np.linalg.qr(signals)
    return signals


def wavelet_sketch_bank(
    sys_: SupraSystem,
    spec,
    scales,
    eta: int = DEFAULT_ETA,
    seed=0,
    *,
    order: int = DEFAULT_ORDER,
    lambda_max: float | None = None,
    orthonormal: bool = False,
    chunk: int = 16,
) -> list[WaveletFeatures]:
    """Sketched wavelet features at every scale from one draw of random signals.

    Each signal (plus the all-ones vector, which yields the wavelet means) is
    filtered by the Chebyshev expansion of ``g(s L)`` for all scales in one pass.
    """
    n = sys_.size
    lambda_max = lambda_max or sys_.lambda_max_estimate()
    signals = random_signals(n, eta, seed, orthonormal=orthonormal)
    coeffs = chebyshev_coefficient_matrix(spec, scales, order, lambda_max)
    block = np.hstack([signals, np.ones((n, 1))])
    filtered = filter_bank_apply(sys_, coeffs, block, lambda_max, chunk=chunk)
    sums = signals.sum(axis=0)
    out = []
    for s, f in zip(scales, filtered):
        out.append(WaveletFeatures(float(s), np.ascontiguousarray(f[:, :eta]), "fast", f[:, eta] / n, sums))
    return out


def wavelet_sketch_fast(sys_: SupraSystem, spec, scale: float, eta: int = DEFAULT_ETA, seed=0, **kwargs) -> WaveletFeatures:
    return wavelet_sketch_bank(sys_, spec, [scale], eta, seed, **kwargs)[0]


# ---------------------------------------------------------------------------
# distances

def pearson_distance(a, b) -> float:
    """``1 - corr(a, b)``; a constant vector is at distance 1 from everything else."""
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(np.clip(1.0 - a @ b / (na * nb), 0.0, 2.0))


@dataclass
class CorrelationDistances:
    """Correlation distances between feature rows, evaluated on demand.

    Requested pairs are memoised in an append-only cache guarded by a lock, so
    one instance may be shared between threads.
    """

    unit: np.ndarray
    zero_variance: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n(self) -> int:
        return self.unit.shape[0]

    def pair(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        key = (a, b) if a < b else (b, a)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = float(np.clip(1.0 - self.unit[a] @ self.unit[b], 0.0, 2.0))
        with self._lock:
            self._cache.setdefault(key, d)
        return d

    def cluster_mean(self, members_a, members_b) -> float:
        """Mean distance over all cross pairs of two disjoint member sets."""
        sa = self.unit[np.asarray(members_a)].sum(axis=0)
        sb = self.unit[np.asarray(members_b)].sum(axis=0)
        return float(1.0 - sa @ sb / (len(members_a) * len(members_b)))

    def matrix(self) -> np.ndarray:
        """Full square matrix; intended for small instances and tests."""
        d = np.clip(1.0 - self.unit @ self.unit.T, 0.0, 2.0)
        np.fill_diagonal(d, 0.0)
        return d

    def condensed(self) -> np.ndarray:
        iu = np.triu_indices(self.n, k=1)
        return self.matrix()[iu]


def correlation_distances(features) -> CorrelationDistances:
    """Correlation-distance oracle for a :class:`WaveletFeatures` or a raw row matrix."""
    if isinstance(features, WaveletFeatures):
        unit, flat = features.unit_rows()
    else:
        rows = np.asarray(features, dtype=float)
        zf = WaveletFeatures(0.0, rows, "raw", rows.mean(axis=1), np.ones(rows.shape[1]))
        unit, flat = zf.unit_rows()
    if flat.any():
        logger.warning("%d zero-variance feature rows; treated as uncorrelated", int(flat.sum()))
    return CorrelationDistances(unit, flat)
