"""Temporal networks and their multilayer (supra) representation.

Layers are indexed from 0 inside the library. Node ``i`` of layer ``t`` sits at
flat position ``i + t * N`` of every supra-level vector or matrix (layer-major
ordering); the edge-list file format uses 1-based layer numbers.
"""
from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ConsistencyError,
    DegenerateDegreeError,
    DomainError,
    ParseError,
    RangeError,
)

FLOAT_FMT = "{:.17g}"


def _canonical(mat: sp.spmatrix) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=np.float64)
    mat.eliminate_zeros()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@dataclass(frozen=True)
class TemporalNetwork:
    """Ordered sequence of undirected layers on a shared node set.

    Parameters
    ----------
    n_nodes : int
        Number of nodes ``N`` present in every layer.
    layers : sequence of sparse matrices
        ``T`` symmetric ``N x N`` adjacency matrices with non-negative weights
        and empty diagonal.
    node_labels : sequence of str, optional
        Display names for the ``N`` nodes.
    """

    n_nodes: int
    layers: tuple
    node_labels: tuple | None = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise DomainError("n_nodes must be positive")
        if len(self.layers) < 1:
            raise DomainError("a temporal network needs at least one layer")
        layers = tuple(_canonical(a) for a in self.layers)
        for t, a in enumerate(layers):
            if a.shape != (self.n_nodes, self.n_nodes):
                raise DomainError(f"layer {t} has shape {a.shape}, expected {(self.n_nodes,) * 2}")
            if a.nnz and a.data.min() < 0:
                raise DomainError(f"layer {t} has negative weights")
            if a.diagonal().any():
                raise DomainError(f"layer {t} has self-loops")
            if (a - a.T).count_nonzero():
                raise DomainError(f"layer {t} is not symmetric")
        object.__setattr__(self, "layers", layers)
        if self.node_labels is not None:
            labels = tuple(str(x) for x in self.node_labels)
            if len(labels) != self.n_nodes:
                raise DomainError("node_labels must have one entry per node")
            object.__setattr__(self, "node_labels", labels)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def degrees(self) -> np.ndarray:
        """Within-layer degrees as a ``(T, N)`` array."""
        return np.vstack([np.asarray(a.sum(axis=1)).ravel() for a in self.layers])

    def edge_count(self) -> int:
        return sum(a.nnz for a in self.layers) // 2

    def mean_degree(self) -> float:
        return float(self.degrees().mean())


@dataclass(frozen=True)
class InterLayerWeights:
    """Couplings ``w[t, i]`` between node ``i`` in layers ``t`` and ``t + 1``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise DomainError("inter-layer weights must be a (T-1, N) array")
        if w.size and (not np.all(np.isfinite(w)) or w.min() < 0):
            raise DomainError("inter-layer weights must be finite and non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class SupraSystem:
    """Supra-adjacency, multilayer degrees and normalized supra-Laplacian."""

    n_nodes: int
    n_layers: int
    supra_adjacency: sp.csr_matrix
    multilayer_degrees: np.ndarray
    supra_laplacian: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.n_nodes * self.n_layers

    def flat_index(self, node, layer):
        return node + layer * self.n_nodes

    def node_layer(self, flat):
        return divmod_flat(flat, self.n_nodes)

    def constraint_graph(self) -> sp.csr_matrix:
        """Unweighted supra-graph used as clustering connectivity."""
        if "constraint" not in self._cache:
            g = self.supra_adjacency.copy()
            g.data[:] = 1.0
            self._cache["constraint"] = _canonical(g)
        return self._cache["constraint"]

    def gershgorin_bound(self) -> float:
        lap = self.supra_laplacian
        return float(np.abs(lap).sum(axis=1).max())

    def lambda_max_estimate(self) -> float:
        return min(2.0, self.gershgorin_bound())


def divmod_flat(flat, n_nodes):
    """Inverse of the flat layout: returns ``(node, layer)``."""
    layer, node = np.divmod(flat, n_nodes)
    if np.ndim(flat) == 0:
        return int(node), int(layer)
    return node, layer


# ---------------------------------------------------------------------------
# I/O

def load_temporal_network(source) -> TemporalNetwork:
    """Read a temporal edge list.

    The first non-comment line is ``N <int> T <int>``; each following line is
    ``t i j w`` with a 1-based layer ``t``, 0-based nodes and a positive weight.
    Blank lines and ``#`` comments are skipped. ``source`` may be a path or an
    open text stream.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            return _parse_edge_list(fh)
    if isinstance(source, (bytes, bytearray)):
        return _parse_edge_list(io.StringIO(source.decode()))
    return _parse_edge_list(source)


def _parse_edge_list(lines: Iterable[str]) -> TemporalNetwork:
    header = None
    entries: dict[tuple[int, int, int], float] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 4 or parts[0] != "N" or parts[2] != "T":
                raise ParseError("expected header 'N <int> T <int>'", lineno)
            try:
                n, t_count = int(parts[1]), int(parts[3])
            except ValueError:
                raise ParseError("header counts must be integers", lineno) from None
            if n < 1 or t_count < 1:
                raise ParseError("N and T must be positive", lineno)
            header = (n, t_count)
            continue
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields 't i j w', got {len(parts)}", lineno)
        try:
            t, i, j = int(parts[0]), int(parts[1]), int(parts[2])
            w = float(parts[3])
        except ValueError:
            raise ParseError(f"malformed record {line!r}", lineno) from None
        n, t_count = header
        if not 1 <= t <= t_count:
            raise RangeError(f"line {lineno}: layer {t} outside 1..{t_count}")
        if not (0 <= i < n and 0 <= j < n):
            raise RangeError(f"line {lineno}: node index outside 0..{n - 1}")
        if i == j:
            raise ParseError(f"self-loop on node {i}", lineno)
        if not np.isfinite(w) or w <= 0:
            raise ParseError(f"weight must be positive, got {parts[3]}", lineno)
        key = (t, i, j)
        if key in entries:
            raise ParseError(f"duplicate record for layer {t} edge ({i}, {j})", lineno)
        mirror = (t, j, i)
        if mirror in entries and entries[mirror] != w:
            raise ConsistencyError(
                f"line {lineno}: edge ({i}, {j}) in layer {t} has conflicting weights "
                f"{entries[mirror]!r} and {w!r}"
            )
        entries[key] = w
    if header is None:
        raise ParseError("missing header 'N <int> T <int>'", 1)
    n, t_count = header
    rows = [[] for _ in range(t_count)]
    cols = [[] for _ in range(t_count)]
    vals = [[] for _ in range(t_count)]
    for (t, i, j), w in entries.items():
        a, b = min(i, j), max(i, j)
        if i > j and (t, j, i) in entries:
            continue  # symmetric double entry, already covered by (t, a, b)
        rows[t - 1].append(a)
        cols[t - 1].append(b)
        vals[t - 1].append(w)
    layers = []
    for t in range(t_count):
        upper = sp.csr_matrix((vals[t], (rows[t], cols[t])), shape=(n, n))
        layers.append(upper + upper.T)
    return TemporalNetwork(n, tuple(layers))


def write_temporal_network(net: TemporalNetwork, target) -> None:
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8") as fh:
            write_temporal_network(net, fh)
        return
    target.write(f"N {net.n_nodes} T {net.n_layers}\n")
    for t, a in enumerate(net.layers, start=1):
        upper = sp.triu(a, k=1, format="coo")
        order = np.lexsort((upper.col, upper.row))
        for r, c, v in zip(upper.row[order], upper.col[order], upper.data[order]):
            target.write(f"{t} {r} {c} {FLOAT_FMT.format(v)}\n")


def load_weights_override(source, base: InterLayerWeights) -> InterLayerWeights:
    """Apply a ``t i omega`` weights file on top of ``base``.

    ``t`` is the 1-based index of the first layer of the coupled pair.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_weights_override(fh, base)
    w = base.w.copy()
    n_pairs, n = w.shape
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("expected 't i omega'", lineno)
        try:
            t, i, om = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"malformed record {line!r}", lineno) from None
        if not 1 <= t <= n_pairs or not 0 <= i < n:
            raise RangeError(f"line {lineno}: ({t}, {i}) outside the coupling table")
        if not np.isfinite(om) or om < 0:
            raise ParseError("omega must be non-negative", lineno)
        w[t - 1, i] = om
    return InterLayerWeights(w)


def write_weights(weights: InterLayerWeights, target) -> None:
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8") as fh:
            write_weights(weights, fh)
        return
    for t, row in enumerate(weights.w, start=1):
        for i, om in enumerate(row):
            target.write(f"{t} {i} {FLOAT_FMT.format(om)}\n")


# ---------------------------------------------------------------------------
# couplings

def lart_weights(net: TemporalNetwork) -> InterLayerWeights:
    """Half the number of neighbours a node keeps between consecutive layers.

    Weighted layers are binarized (``A > 0``) for the neighbourhood count only.
    """
    if any(a.nnz and np.any(a.data != 1.0) for a in net.layers):
        warnings.warn("non-binary layers binarized (A > 0) for the LART coupling", stacklevel=2)
    binary = [(a > 0).astype(np.float64) for a in net.layers]
    w = np.zeros((net.n_layers - 1, net.n_nodes))
    for t in range(net.n_layers - 1):
        shared = binary[t].multiply(binary[t + 1])
        w[t] = np.asarray(shared.sum(axis=1)).ravel() / 2.0
    return InterLayerWeights(w)


def constant_weights(net: TemporalNetwork, omega: float) -> InterLayerWeights:
    if not np.isfinite(omega) or omega < 0:
        raise DomainError(f"omega must be non-negative, got {omega}")
    return InterLayerWeights(np.full((net.n_layers - 1, net.n_nodes), float(omega)))


# ---------------------------------------------------------------------------
# supra system

def build_supra_system(net: TemporalNetwork, weights: InterLayerWeights) -> SupraSystem:
    """Assemble the block-tridiagonal supra-adjacency and its normalized Laplacian."""
    n, t_count = net.n_nodes, net.n_layers
    if weights.w.shape != (t_count - 1, n):
        raise DomainError(f"weights shape {weights.w.shape} does not match ({t_count - 1}, {n})")
    size = n * t_count
    rows, cols, vals = [], [], []
    for t, a in enumerate(net.layers):
        upper = sp.triu(a, k=1, format="coo")
        rows.append(upper.row + t * n)
        cols.append(upper.col + t * n)
        vals.append(upper.data)
    idx = np.arange(n)
    for t in range(t_count - 1):
        keep = weights.w[t] > 0
        rows.append(idx[keep] + t * n)
        cols.append(idx[keep] + (t + 1) * n)
        vals.append(weights.w[t][keep])
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    upper = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    adjacency = _canonical(upper + upper.T)

    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    zero = np.flatnonzero(degrees <= 0)
    if zero.size:
        node, layer = divmod_flat(int(zero[0]), n)
        # layers are reported 1-based, as in edge-list files
        raise DegenerateDegreeError(node, layer + 1)

    inv_sqrt = 1.0 / np.sqrt(degrees)
    upper = sp.coo_matrix(upper)
    norm_vals = upper.data * inv_sqrt[upper.row] * inv_sqrt[upper.col]
    off = sp.csr_matrix((norm_vals, (upper.row, upper.col)), shape=(size, size))
    laplacian = _canonical(sp.identity(size, format="csr") - (off + off.T))
    degrees.setflags(write=False)
    return SupraSystem(n, t_count, adjacency, degrees, laplacian)


def supra_components(adjacency: sp.spmatrix) -> tuple[int, np.ndarray]:
    from scipy.sparse.csgraph import connected_components

    return connected_components(adjacency, directed=False)
