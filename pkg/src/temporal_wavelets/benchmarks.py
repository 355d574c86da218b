"""Synthetic temporal networks with planted communities.

Two families:

* time-varying hierarchical (Sales-Pardo style) networks with three nested
  planted scales, where a pair of communities at one scale merges and later
  splits again (classes ``ssc``, ``msc``, ``lsc`` for small, medium and large
  scale change);
* single-scale ``grow``, ``merge`` and ``mixed`` planted-partition sequences.

Every layer is drawn independently given that layer's planted structure, from
a per-layer random stream derived from ``(seed, t)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ParameterError
from .temporal_graph import TemporalNetwork

SP_LEVELS = ("small", "medium", "large")
SP_DEFAULT_LAYERS = {"ssc": 21, "msc": 17, "lsc": 33}
BRANCHING = 4  # children per community at every level of the hierarchy


@dataclass(frozen=True)
class GroundTruth:
    """Planted labels per scale, each a ``(T, N)`` integer array."""

    labels: dict
    family: str
    metadata: dict = field(default_factory=dict)

    def flat(self, scale: str) -> np.ndarray:
        return np.asarray(self.labels[scale]).ravel()


@dataclass(frozen=True)
class SPParams:
    rho: float = 1.0
    k_bar: float = 16.0
    n_nodes: int = 640
    n_layers: int | None = None
    change_class: str = "ssc"
    seed: int = 0

    def __post_init__(self):
        cls = self.change_class.lower()
        object.__setattr__(self, "change_class", cls)
        if cls not in SP_DEFAULT_LAYERS:
            raise ParameterError(f"change_class must be one of {sorted(SP_DEFAULT_LAYERS)}, got {cls!r}")
        if self.n_layers is None:
            object.__setattr__(self, "n_layers", SP_DEFAULT_LAYERS[cls])
        if not self.rho > 0 or not self.k_bar > 0:
            raise ParameterError("rho and k_bar must be positive")
        if self.n_layers < 1:
            raise ParameterError("n_layers must be positive")
        if self.n_nodes % BRANCHING ** 3 or self.n_nodes < 2 * BRANCHING ** 3:
            raise ParameterError(
                f"n_nodes must be a multiple of {BRANCHING ** 3} with at least two nodes per small community"
            )


def sp_degree_split(rho: float, k_bar: float) -> np.ndarray:
    """Expected degree contributions (small, medium, large, background).

    Each level carries ``2 rho / 3`` times the degree of the level inside it.
    At ``rho = 1`` the ratio 2/3 is about the steepest decay for which
    ``k_bar`` up to 21 still fits in 10-node small groups; larger ``rho``
    shifts edges outward and blurs the finer scales.
    """
    ratios = (2.0 * rho / 3.0) ** np.arange(4, dtype=float)
    return k_bar * ratios / ratios.sum()


def sp_probabilities(params: SPParams) -> dict:
    """Connection probabilities of each hierarchy level for an unchanged layer."""
    n = params.n_nodes
    g_small = n // BRANCHING ** 3
    g_medium = g_small * BRANCHING
    g_large = g_medium * BRANCHING
    k = sp_degree_split(params.rho, params.k_bar)
    probs = {
        "small": k[0] / (g_small - 1),
        "medium": k[1] / (g_medium - g_small),
        "large": k[2] / (g_large - g_medium),
        "background": k[3] / (n - g_large),
    }
    bad = {name: round(float(p), 4) for name, p in probs.items() if p > 1}
    if bad:
        raise ParameterError(f"k_bar too large for the hierarchy: probabilities {bad} exceed 1")
    return probs


def sp_change_window(n_layers: int) -> tuple[int, int]:
    """0-based ``[start, stop)`` layers during which the changing pair is merged."""
    start = math.ceil(n_layers / 3) - 1
    stop = math.ceil(2 * n_layers / 3) - 1
    return start, stop


def _sp_base_labels(n: int):
    g_small = n // BRANCHING ** 3
    nodes = np.arange(n)
    small = nodes // g_small
    medium = small // BRANCHING
    large = medium // BRANCHING
    return {"small": small, "medium": medium, "large": large}


def _sp_layer_labels(base: dict, change_class: str, merged: bool) -> dict:
    """Labels for one layer; when merged, communities 0 and 1 of the changing level fuse."""
    labels = {k: v.copy() for k, v in base.items()}
    if merged:
        level = {"ssc": "small", "msc": "medium", "lsc": "large"}[change_class]
        lab = labels[level]
        lab[lab == 1] = 0
        labels[level] = _compact(lab)
    return labels


def _compact(labels: np.ndarray) -> np.ndarray:
    _, inv = np.unique(labels, return_inverse=True)
    return inv.astype(np.int64)


def _sp_probability_matrix(labels: dict, probs: dict) -> np.ndarray:
    p = np.full((labels["small"].size,) * 2, probs["background"])
    for level in ("large", "medium", "small"):
        same = labels[level][:, None] == labels[level][None, :]
        p[same] = probs[level]
    np.fill_diagonal(p, 0.0)
    return p


def _draw_layer(prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = prob.shape[0]
    iu = np.triu_indices(n, k=1)
    hits = rng.random(iu[0].size) < prob[iu]
    a = np.zeros((n, n))
    a[iu[0][hits], iu[1][hits]] = 1.0
    return a + a.T


def _repair_isolated(adj: np.ndarray, community: np.ndarray, rng: np.random.Generator) -> int:
    """Give every isolated node one edge to a random member of its community."""
    fixed = 0
    for i in np.flatnonzero(adj.sum(axis=1) == 0):
        if adj[i].any():  # gained an edge from an earlier repair
            continue
        mates = np.flatnonzero((community == community[i]) & (np.arange(adj.shape[0]) != i))
        if mates.size == 0:
            mates = np.flatnonzero(np.arange(adj.shape[0]) != i)
        j = int(rng.choice(mates))
        adj[i, j] = adj[j, i] = 1.0
        fixed += 1
    return fixed


def _layer_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(t)]))


def generate_sp_temporal(params: SPParams) -> tuple[TemporalNetwork, GroundTruth]:
    """Hierarchical temporal benchmark with one merge/split event.

    The hierarchy has four large communities, each split into four medium
    ones, each split into four small ones (``N / 64`` nodes each). Layers in
    the window from :func:`sp_change_window` merge communities 0 and 1 of the
    level given by the change class; elsewhere all three levels are static.
    """
    probs = sp_probabilities(params)
    n, t_count = params.n_nodes, params.n_layers
    base = _sp_base_labels(n)
    start, stop = sp_change_window(t_count)
    layers = []
    truth = {level: np.empty((t_count, n), dtype=np.int64) for level in SP_LEVELS}
    repaired = 0
    expected_degree = []
    for t in range(t_count):
        labels = _sp_layer_labels(base, params.change_class, start <= t < stop)
        prob = _sp_probability_matrix(labels, probs)
        expected_degree.append(float(prob.sum(axis=1).mean()))
        rng = _layer_rng(params.seed, t)
        adj = _draw_layer(prob, rng)
        repaired += _repair_isolated(adj, labels["small"], rng)
        layers.append(sp.csr_matrix(adj))
        for level in SP_LEVELS:
            truth[level][t] = labels[level]
    meta = {
        "family": "sp",
        "params": asdict(params),
        "probabilities": probs,
        "degree_split": sp_degree_split(params.rho, params.k_bar).tolist(),
        "merge_window": [start + 1, stop],  # 1-based inclusive layers
        "expected_mean_degree": expected_degree,
        "repaired_isolated": repaired,
    }
    return TemporalNetwork(n, tuple(layers)), GroundTruth(truth, "sp", meta)


# ---------------------------------------------------------------------------
# grow / merge / mixed

GRANELL_MODELS = ("grow", "merge", "mixed")


@dataclass(frozen=True)
class GranellParams:
    """Planted-partition sequence parameters.

    ``n_groups`` equal communities; each node expects ``k_avg`` edges, a
    fraction ``mu`` of them leaving its community. ``grow_fraction`` of the
    donor community is transferred by the last layer; the merging pair's
    cross density follows a triangular ramp peaking mid-sequence and counts
    as one community while it is above half of the within density.
    ``change_rate`` scales both processes (0 gives a static partition).
    """

    model: str = "grow"
    n_nodes: int = 128
    n_layers: int = 100
    n_groups: int = 4
    k_avg: float = 16.0
    mu: float = 0.25
    grow_fraction: float = 0.75
    change_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        model = self.model.lower()
        object.__setattr__(self, "model", model)
        if model not in GRANELL_MODELS:
            raise ParameterError(f"model must be one of {GRANELL_MODELS}, got {self.model!r}")
        if self.n_nodes < 1 or self.n_layers < 1:
            raise ParameterError("n_nodes and n_layers must be positive")
        need = 2 if model == "grow" else 4 if model == "mixed" else 2
        if self.n_groups < need:
            raise ParameterError(f"model {model!r} needs at least {need} groups")
        if self.n_nodes < 4 * self.n_groups:
            raise ParameterError(f"n_nodes={self.n_nodes} too small for {self.n_groups} planted groups")
        if not 0 <= self.mu < 1 or not 0 <= self.grow_fraction <= 1 or not 0 <= self.change_rate <= 1:
            raise ParameterError("mu, grow_fraction and change_rate must lie in [0, 1]")


def granell_probabilities(params: GranellParams) -> tuple[float, float]:
    size = params.n_nodes / params.n_groups
    p_in = (1 - params.mu) * params.k_avg / (size - 1)
    p_out = params.mu * params.k_avg / (params.n_nodes - size)
    if p_in > 1 or p_out > 1:
        raise ParameterError("k_avg too large for the planted group sizes")
    return p_in, p_out


def _granell_schedule(params: GranellParams):
    """Per-layer (groups, merge_strength) for the chosen model."""
    n, g, t_count = params.n_nodes, params.n_groups, params.n_layers
    base = np.arange(n) * g // n
    donor_members = np.flatnonzero(base == 1)[::-1]  # transferred from the top index down
    frac = np.linspace(0.0, 1.0, t_count) if t_count > 1 else np.zeros(1)
    ramp = 1.0 - np.abs(2.0 * frac - 1.0)
    out = []
    for t in range(t_count):
        groups = base.copy()
        strength = 0.0
        if params.model in ("grow", "mixed"):
            moved = int(round(params.change_rate * params.grow_fraction * donor_members.size * frac[t]))
            groups[donor_members[:moved]] = 0
        if params.model in ("merge", "mixed"):
            strength = params.change_rate * ramp[t]
        out.append((groups, strength))
    return out


def generate_granell(params: GranellParams) -> tuple[TemporalNetwork, GroundTruth]:
    """Grow / merge / mixed benchmark with one planted partition per layer.

    ``grow`` moves nodes of community 1 into community 0 at a constant rate;
    ``merge`` raises the density between the merging pair (communities 0 and 1,
    or 2 and 3 in ``mixed``) up to the within density and back; ``mixed``
    runs both processes on disjoint community pairs.
    """
    p_in, p_out = granell_probabilities(params)
    n = params.n_nodes
    pair = (2, 3) if params.model == "mixed" else (0, 1)
    truth = np.empty((params.n_layers, n), dtype=np.int64)
    layers = []
    repaired = 0
    moved = []
    merged_layers = []
    for t, (groups, strength) in enumerate(_granell_schedule(params)):
        same = groups[:, None] == groups[None, :]
        prob = np.where(same, p_in, p_out)
        in_pair = np.isin(groups, pair)
        cross = in_pair[:, None] & in_pair[None, :] & ~same
        prob[cross] = p_out + strength * (p_in - p_out)
        np.fill_diagonal(prob, 0.0)
        labels = groups.copy()
        if strength >= 0.5:
            labels[labels == pair[1]] = pair[0]
            merged_layers.append(t + 1)
        truth[t] = _compact(labels)
        rng = _layer_rng(params.seed, t)
        adj = _draw_layer(prob, rng)
        repaired += _repair_isolated(adj, labels, rng)
        layers.append(sp.csr_matrix(adj))
        moved.append(int(np.sum((np.arange(n) * params.n_groups // n == 1) & (groups == 0))))
    meta = {
        "family": "granell",
        "params": asdict(params),
        "p_in": p_in,
        "p_out": p_out,
        "transferred_per_layer": moved,
        "merged_layers": merged_layers,
        "repaired_isolated": repaired,
    }
    return TemporalNetwork(n, tuple(layers)), GroundTruth({"true": truth}, "granell", meta)
