"""Connectivity-constrained clustering of node-times and the detection pipeline."""
from __future__ import annotations

import itertools
import math
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _agglomerate
from .exceptions import DomainError, PreconditionError, StageError, TemporalWaveletError
from .metrics import adjusted_rand_index
from .spectral import (
    DEFAULT_THRESHOLD,
    SpectralBasis,
    cached_leading_eigenpairs,
    layer_null_basis,
    select_lambda_star,
    with_selection,
)
from .temporal_graph import (
    FLOAT_FMT,
    InterLayerWeights,
    SupraSystem,
    TemporalNetwork,
    build_supra_system,
)
from .wavelet import (
    DEFAULT_ETA,
    DEFAULT_ORDER,
    DEFAULT_SCALES,
    CorrelationDistances,
    FilterDerivation,
    ScaleGrid,
    WaveletFeatures,
    WaveletFilterSpec,
    correlation_distances,
    derive_filter_and_scales,
    exact_feature_bank,
    wavelet_sketch_bank,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dendrogram:
    """Merge history over ``n_leaves`` leaves.

    ``merges`` is an ``(n_leaves - 1, 4)`` array of ``(a, b, height, size)``
    rows with ``a < b``. ``height`` is the running maximum of the linkage
    values in ``raw_heights`` (constrained average linkage can produce
    inversions). Merges flagged in ``synthetic`` join disconnected parts of
    the constraint graph after all admissible merges are exhausted.
    """

    merges: np.ndarray
    raw_heights: np.ndarray
    synthetic: np.ndarray
    n_leaves: int

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic.sum())


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    scale: float | None = None

    @property
    def n_communities(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass(frozen=True)
class StabilityProfile:
    gamma: np.ndarray
    repetitions: int

    @property
    def instability(self) -> np.ndarray:
        return 1.0 - self.gamma


# ---------------------------------------------------------------------------
# dendrogram construction and cutting

def _as_unit_rows(distances) -> np.ndarray:
    if isinstance(distances, CorrelationDistances):
        return distances.unit
    if isinstance(distances, WaveletFeatures):
        return distances.unit_rows()[0]
    raise TypeError("distances must be CorrelationDistances or WaveletFeatures")


def constrained_average_linkage(distances, supra_adjacency: sp.spmatrix) -> Dendrogram:
    """Agglomerate node-times, merging only clusters adjacent in the supra-graph.

    The linkage between clusters is the unweighted mean of all pairwise member
    correlation distances. Ties go to the pair with the smaller first, then
    smaller second, cluster id.
    """
    unit = np.ascontiguousarray(_as_unit_rows(distances), dtype=np.float64)
    n = unit.shape[0]
    graph = sp.csr_matrix(supra_adjacency)
    if graph.shape != (n, n):
        raise DomainError(f"adjacency shape {graph.shape} does not match {n} feature rows")
    graph.sort_indices()
    left, right, raw, size, roots = _agglomerate.constrained_average_linkage_kernel(
        unit, graph.indptr.astype(np.int64), graph.indices.astype(np.int64)
    )
    count = left.size
    lo = np.minimum(left, right)
    hi = np.maximum(left, right)
    raw_all = raw.copy()
    synthetic = np.zeros(max(n - 1, 0), dtype=bool)
    if roots.size > 1:
        logger.warning("constraint graph has %d components; joining roots synthetically", roots.size)
        top = (np.max(raw) if count else 0.0) + 1.0
        extra_lo, extra_hi = [], []
        extra_size = []
        sizes = dict(zip(range(n), itertools.repeat(1)))
        for k in range(count):
            sizes[n + k] = int(size[k])
        current = int(roots[0])
        for r in roots[1:]:
            a, b = sorted((current, int(r)))
            extra_lo.append(a)
            extra_hi.append(b)
            new_id = n + count + len(extra_lo) - 1
            sizes[new_id] = sizes[a] + sizes[b]
            extra_size.append(sizes[new_id])
            current = new_id
        lo = np.concatenate([lo, extra_lo]).astype(np.int64)
        hi = np.concatenate([hi, extra_hi]).astype(np.int64)
        size = np.concatenate([size, extra_size]).astype(np.int64)
        raw_all = np.concatenate([raw, np.full(len(extra_lo), top)])
        synthetic[count:] = True
    heights = np.maximum.accumulate(raw_all) if raw_all.size else raw_all
    merges = np.column_stack([lo, hi, heights, size]).astype(np.float64) if n > 1 else np.zeros((0, 4))
    return Dendrogram(merges, raw_all, synthetic, n)


def max_gap_cut_height(dend: Dendrogram) -> float:
    """Mean over leaves of the midpoint of the largest gap on each root path.

    The mean uses exactly rounded summation so that the cut does not depend
    on leaf order; ``inf`` when no leaf has a gap.
    """
    if dend.n_leaves <= 1:
        return np.inf
    m = dend.merges
    mids = _agglomerate.max_gap_midpoints(
        m[:, 0].astype(np.int64), m[:, 1].astype(np.int64), m[:, 2].copy(), dend.synthetic, dend.n_leaves
    )
    mids = mids[~np.isnan(mids)]
    if mids.size == 0:
        return np.inf
    return math.fsum(mids.tolist()) / mids.size


def cut_at(dend: Dendrogram, height: float) -> np.ndarray:
    m = dend.merges
    if dend.n_leaves <= 1:
        return np.zeros(dend.n_leaves, dtype=np.int64)
    return _agglomerate.labels_below(
        m[:, 0].astype(np.int64), m[:, 1].astype(np.int64), m[:, 2].copy(), dend.n_leaves, float(height)
    )


def cut_max_gap(dend: Dendrogram, scale: float | None = None) -> Partition:
    """Cut at the mean, over leaves, of the midpoint of each root path's largest gap."""
    if dend.n_leaves <= 1:
        return Partition(np.zeros(dend.n_leaves, dtype=np.int64), scale)
    return Partition(cut_at(dend, max_gap_cut_height(dend)), scale)


def cluster_features(features: WaveletFeatures, constraint: sp.spmatrix) -> tuple[Partition, Dendrogram]:
    dend = constrained_average_linkage(features, constraint)
    return cut_max_gap(dend, features.scale), dend


# ---------------------------------------------------------------------------
# stability

def mean_pairwise_ari(partitions) -> float:
    """Mean ARI over all unordered pairs, clamped to ``[0, 1]``."""
    parts = list(partitions)
    if len(parts) < 2:
        raise DomainError("need at least two partitions")
    vals = [adjusted_rand_index(a, b) for a, b in itertools.combinations(parts, 2)]
    return float(np.clip(np.mean(vals), 0.0, 1.0))


def _repetition_seed(seed, rep):
    return np.random.SeedSequence([int(seed), 1, int(rep)])


def _main_seed(seed):
    return np.random.SeedSequence([int(seed), 0])


def stability_profile(
    sys_: SupraSystem,
    spec,
    scales,
    repetitions: int,
    seed: int,
    *,
    eta: int = DEFAULT_ETA,
    order: int = DEFAULT_ORDER,
    mode: str = "fast",
    threads: int = 1,
) -> StabilityProfile:
    """Mean pairwise ARI of ``repetitions`` independently sketched partitions per scale."""
    if mode != "fast":
        raise PreconditionError("stability needs random resampling; use the fast sketch mode")
    if repetitions < 2:
        raise DomainError("stability needs at least two repetitions")
    constraint = sys_.constraint_graph()
    labels = [[None] * len(scales) for _ in range(repetitions)]
    for r in range(repetitions):
        bank = wavelet_sketch_bank(sys_, spec, scales, eta, _repetition_seed(seed, r), order=order)
        parts = _cluster_bank(bank, constraint, threads)
        for s, (part, _) in enumerate(parts):
            labels[r][s] = part.labels
        del bank
    gamma = np.array([mean_pairwise_ari([labels[r][s] for r in range(repetitions)]) for s in range(len(scales))])
    return StabilityProfile(gamma, repetitions)


def stability_gamma(sys_, spec, scale, R, seed, **kwargs) -> float:
    """Stability of the partition at a single scale."""
    return float(stability_profile(sys_, spec, [scale], R, seed, **kwargs).gamma[0])


def _cluster_bank(bank, constraint, threads):
    if threads > 1 and len(bank) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda f: cluster_features(f, constraint), bank))
    return [cluster_features(f, constraint) for f in bank]


# ---------------------------------------------------------------------------
# pipeline

@dataclass(frozen=True)
class DetectionConfig:
    mode: str = "fast"
    n_scales: int = DEFAULT_SCALES
    eta: int = DEFAULT_ETA
    repetitions: int = 20
    threshold: float = DEFAULT_THRESHOLD
    order: int = DEFAULT_ORDER
    seed: int = 0
    extra_eigenpairs: int = 10
    eig_method: str = "auto"
    cache_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("fast", "exact"):
            raise DomainError(f"mode must be 'fast' or 'exact', got {self.mode!r}")
        if self.n_scales < 2:
            raise DomainError("n_scales must be at least 2")
        if self.eta < 1 or self.order < 1 or self.threads < 1:
            raise DomainError("eta, order and threads must be positive")
        if self.repetitions < 0 or self.repetitions == 1:
            raise DomainError("repetitions must be 0 (no stability) or at least 2")
        if not 0 < self.threshold <= 1:
            raise DomainError("threshold must lie in (0, 1]")


@dataclass
class MultiScaleResult:
    lambda_star: float
    q_index: int
    q_fallback: bool
    residual_norms: np.ndarray
    eigenvalues: np.ndarray
    filter: WaveletFilterSpec
    derivation: FilterDerivation
    grid: ScaleGrid
    partitions: list
    dendrograms: list
    gamma: np.ndarray | None
    config: DetectionConfig
    n_nodes: int
    n_layers: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def scales(self) -> np.ndarray:
        return self.grid.scales

    @property
    def n_communities(self) -> list:
        return [p.n_communities for p in self.partitions]

    def to_json_dict(self, labels_files=None) -> dict:
        scales = []
        for k, part in enumerate(self.partitions):
            entry = {
                "index": k,
                "scale": float(self.scales[k]),
                "n_communities": part.n_communities,
                "gamma_a": None if self.gamma is None else float(self.gamma[k]),
            }
            if labels_files is not None:
                entry["labels_file"] = labels_files[k]
            scales.append(entry)
        return {
            "n_nodes": self.n_nodes,
            "n_layers": self.n_layers,
            "lambda_star": self.lambda_star,
            "q_index": self.q_index,
            "q_fallback": self.q_fallback,
            "residual_norms": [float(x) for x in self.residual_norms],
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "filter": {"y1": self.filter.y1, "y2": self.filter.y2, "y3": self.filter.y3, "y4": self.filter.y4,
                       "y4_method": self.derivation.y4_method,
                       "lambda_next": self.derivation.lambda_next,
                       "attenuation": _json_float(self.derivation.attenuation)},
            "scale_grid": {"s_min": self.grid.s_min, "s_max": self.grid.s_max, "M": self.grid.M,
                           "degenerate": self.grid.degenerate},
            "scales": scales,
            "config": {k: v for k, v in asdict(self.config).items() if k not in ("cache_dir", "threads")},
            "diagnostics": self.diagnostics,
        }


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except TemporalWaveletError as exc:
        raise StageError(name, exc) from exc


def detect_multiscale(net: TemporalNetwork, weights: InterLayerWeights, config: DetectionConfig | None = None) -> MultiScaleResult:
    """Run the full multi-scale detection on a temporal network.

    Supra-Laplacian, leading eigenpairs, informative eigenvalue, filter and
    scale grid, then per scale: wavelet features, constrained clustering and
    max-gap cut. With ``config.repetitions >= 2`` the stability of each
    scale's partition is estimated from independently sketched re-runs.
    """
    config = config or DetectionConfig()
    if config.mode == "exact" and config.repetitions >= 2:
        raise StageError("stability", PreconditionError(
            "stability needs random resampling; use the fast sketch mode or set repetitions to 0"))
    timings = {}
    t0 = time.perf_counter()
    sys_ = _stage("supra", build_supra_system, net, weights)
    nulls = _stage("null-basis", layer_null_basis, net, sys_)
    n = sys_.size
    timings["supra"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.mode == "exact":
        k = n
        method = "dense"
    else:
        k = min(n, nulls.n_columns + 1 + config.extra_eigenpairs)
        method = config.eig_method
    basis = _stage("spectrum", cached_leading_eigenpairs, sys_, k, config.cache_dir,
                   method=method, seed=config.seed)
    sel = _stage("lambda-star", select_lambda_star, basis, nulls, config.threshold)
    basis = with_selection(basis, sel)
    lam_next = basis.next_eigenvalue()
    while lam_next is None and not basis.complete:
        k = min(n, 2 * k)
        more = _stage("spectrum", cached_leading_eigenpairs, sys_, k, config.cache_dir,
                      method="dense" if k >= n - 1 else method, seed=config.seed)
        basis = with_selection(more, sel)
        lam_next = basis.next_eigenvalue()
    timings["spectrum"] = time.perf_counter() - t0
    logger.info("lambda* = %.6g at q = %d (fallback=%s)", sel.lambda_star, sel.q_index, sel.fallback)

    spec, grid, derivation = _stage("filter", derive_filter_and_scales, sel.lambda_star, lam_next, config.n_scales)
    logger.info("scales in [%.6g, %.6g], y4 = %.6g (%s)", grid.s_min, grid.s_max, spec.y4, derivation.y4_method)

    t0 = time.perf_counter()
    constraint = sys_.constraint_graph()
    if config.mode == "exact":
        bank = _stage("features", exact_feature_bank, basis, spec, grid.scales)
    else:
        bank = _stage("features", wavelet_sketch_bank, sys_, spec, grid.scales, config.eta,
                      _main_seed(config.seed), order=config.order)
    clustered = _stage("clustering", _cluster_bank, bank, constraint, config.threads)
    del bank
    partitions = [p for p, _ in clustered]
    dendrograms = [d for _, d in clustered]
    timings["detection"] = time.perf_counter() - t0

    gamma = None
    if config.repetitions >= 2:
        t0 = time.perf_counter()
        prof = _stage("stability", stability_profile, sys_, spec, grid.scales, config.repetitions, config.seed,
                      eta=config.eta, order=config.order, mode=config.mode, threads=config.threads)
        gamma = prof.gamma
        timings["stability"] = time.perf_counter() - t0
    logger.info("timings: %s", {k: round(v, 2) for k, v in timings.items()})

    diagnostics = {
        "eigenpairs_computed": int(basis.k),
        "null_columns": int(nulls.n_columns),
        "synthetic_merges": int(sum(d.n_synthetic for d in dendrograms)),
        "constraint_components": int(dendrograms[0].n_synthetic + 1) if dendrograms else 1,
    }
    return MultiScaleResult(
        lambda_star=sel.lambda_star,
        q_index=sel.q_index,
        q_fallback=sel.fallback,
        residual_norms=sel.residual_norms,
        eigenvalues=basis.eigenvalues[: min(basis.k, sel.q_index + config.extra_eigenpairs)],
        filter=spec,
        derivation=derivation,
        grid=grid,
        partitions=partitions,
        dendrograms=dendrograms,
        gamma=gamma,
        config=config,
        n_nodes=net.n_nodes,
        n_layers=net.n_layers,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# serialization

def _atomic_write_text(path, text):
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def labels_csv(labels: np.ndarray, n_nodes: int) -> str:
    lines = ["node,layer,community"]
    for flat, c in enumerate(np.asarray(labels)):
        layer, node = divmod(flat, n_nodes)
        lines.append(f"{node},{layer + 1},{int(c)}")
    return "\n".join(lines) + "\n"


def read_labels_csv(path, n_nodes: int | None = None, n_layers: int | None = None) -> np.ndarray:
    """Read ``node,layer,community`` rows into a ``(T, N)`` array."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        raise DomainError(f"{path}: no label rows")
    n = n_nodes or int(data[:, 0].max()) + 1
    t_count = n_layers or int(data[:, 1].max())
    if data[:, 0].max() >= n or data[:, 1].max() > t_count or data[:, 1].min() < 1:
        raise DomainError(f"{path}: labels outside {t_count} layers x {n} nodes")
    out = np.full((t_count, n), -1, dtype=np.int64)
    out[data[:, 1] - 1, data[:, 0]] = data[:, 2]
    if (out < 0).any():
        raise DomainError(f"{path}: missing labels for some node-times")
    return out


def write_result(result: MultiScaleResult, out_dir, *, timestamp: str | None = None) -> str:
    """Write ``result.json``, per-scale label CSVs and ``stability.csv`` to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for k, part in enumerate(result.partitions):
        name = f"labels_s{k:03d}.csv"
        _atomic_write_text(os.path.join(out_dir, name), labels_csv(part.labels, result.n_nodes))
        files.append(name)
    rows = ["scale_index,scale,n_communities,gamma_a,instability"]
    for k, part in enumerate(result.partitions):
        g = "" if result.gamma is None else FLOAT_FMT.format(result.gamma[k])
        inst = "" if result.gamma is None else FLOAT_FMT.format(1.0 - result.gamma[k])
        rows.append(f"{k},{FLOAT_FMT.format(result.scales[k])},{part.n_communities},{g},{inst}")
    _atomic_write_text(os.path.join(out_dir, "stability.csv"), "\n".join(rows) + "\n")
    payload = result.to_json_dict(files)
    if timestamp is not None:
        payload["timestamp"] = timestamp
    path = os.path.join(out_dir, "result.json")
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class StoredResult:
    """A detection result read back from disk (labels and stability only)."""

    n_nodes: int
    n_layers: int
    scales: np.ndarray
    partitions: list
    gamma: np.ndarray | None
    meta: dict


def read_result(path) -> StoredResult:
    with open(path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    n, t_count = meta["n_nodes"], meta["n_layers"]
    parts = []
    gammas = []
    for entry in meta["scales"]:
        labels = read_labels_csv(os.path.join(base, entry["labels_file"]), n, t_count)
        parts.append(Partition(labels.ravel(), entry["scale"]))
        gammas.append(entry.get("gamma_a"))
    gamma = None if any(g is None for g in gammas) else np.array(gammas, dtype=float)
    return StoredResult(n, t_count, np.array([e["scale"] for e in meta["scales"]]), parts, gamma, meta)
