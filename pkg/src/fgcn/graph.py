"""Skeleton graph construction: topologies, neighborhood partition, normalization.

A topology is an undirected graph over joint indices with one distinguished
center joint (the gravity center of the skeleton). The spatial convolution
splits each vertex neighborhood into three subsets by hop distance to the
center: the vertex itself, neighbors at least as close to the center
(centripetal; ties included), and neighbors strictly farther (centrifugal).
Each subset matrix is normalized symmetrically with epsilon-regularized
row-sum degrees.

Everything here is plain numpy; the differentiable use of these matrices
lives in :mod:`fgcn.model`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DataError

NUM_SUBSETS = 3
DEGREE_EPS = 1e-3


@dataclass(frozen=True)
class Topology:
    """An undirected joint graph with a distinguished center joint."""

    num_vertices: int
    edges: tuple
    center: int

    def __post_init__(self):
        n = self.num_vertices
        if n < 1:
            raise DataError(f"topology needs at least one vertex, got {n}")
        if not 0 <= self.center < n:
            raise DataError(f"center {self.center} out of range for {n} vertices")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"edge ({i}, {j}) out of range for {n} vertices")
            if i == j:
                raise DataError(f"self-loop edge ({i}, {j}) not allowed")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataError(f"duplicate edge ({i}, {j})")
            seen.add(key)


def adjacency(topo):
    """Symmetric binary adjacency matrix without self-loops."""
    a = np.zeros((topo.num_vertices, topo.num_vertices), dtype=np.float64)
    for i, j in topo.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def hop_distances(topo):
    """Breadth-first hop count from the center joint.

    Vertices unreachable from the center are assigned ``num_vertices``,
    which is strictly larger than any realizable hop count.
    """
    n = topo.num_vertices
    hops = np.full(n, n, dtype=np.int64)
    hops[topo.center] = 0
    neighbors = [[] for _ in range(n)]
    for i, j in topo.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    queue = deque([topo.center])
    while queue:
        v = queue.popleft()
        for w in neighbors[v]:
            if hops[w] == n:
                hops[w] = hops[v] + 1
                queue.append(w)
    return hops


def partition_subsets(topo):
    """Split the graph into (root, centripetal, centrifugal) subset matrices.

    Returns a (3, V, V) array. Row i of each matrix selects the sources that
    vertex i aggregates from: the root subset is the identity, the
    centripetal subset holds neighbors whose hop distance to the center is
    less than or equal to the vertex's own, and the centrifugal subset holds
    neighbors strictly farther out. Centripetal and centrifugal sum to the
    full adjacency.
    """
    n = topo.num_vertices
    adj = adjacency(topo)
    hops = hop_distances(topo)
    subsets = np.zeros((NUM_SUBSETS, n, n), dtype=np.float64)
    subsets[0] = np.eye(n)
    toward = (hops[None, :] <= hops[:, None]).astype(np.float64)
    subsets[1] = adj * toward
    subsets[2] = adj * (1.0 - toward)
    return subsets


def normalize_adjacency(a, eps=DEGREE_EPS):
    """Symmetric degree normalization with epsilon-regularized row sums.

    Multiplies ``a`` on both sides by ``diag((rowsum + eps) ** -0.5)``. The
    epsilon keeps zero-degree rows finite.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.sum(axis=1) + eps
    dinv = d ** -0.5
    return dinv[:, None] * a * dinv[None, :]


def normalized_subsets(topo, eps=DEGREE_EPS):
    """Partitioned and normalized subset matrices, shape (3, V, V)."""
    subsets = partition_subsets(topo)
    return np.stack([normalize_adjacency(s, eps) for s in subsets])


def permuted_topology(topo, perm):
    """Relabel vertices: old vertex v becomes ``perm[v]``."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(topo.num_vertices)):
        raise DataError(f"not a permutation of {topo.num_vertices} vertices: {perm}")
    edges = tuple((int(perm[i]), int(perm[j])) for i, j in topo.edges)
    return Topology(topo.num_vertices, edges, int(perm[topo.center]))


def permute_vertex_axis(arr, perm, axis):
    """Move data so that old vertex v's slice lands at index ``perm[v]``."""
    inverse = np.argsort(np.asarray(perm, dtype=np.int64))
    return np.take(arr, inverse, axis=axis)


# ---------------------------------------------------------------------------
# named topologies

# Kinect-v2 25-joint skeleton; joint 21 in the standard 1-based numbering is
# the spine joint used as the center. Edges here are 0-based.
_NTU25_EDGES = (
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13),
    (15, 14), (16, 0), (17, 16), (18, 17), (19, 18), (21, 22), (22, 7),
    (23, 24), (24, 11),
)

# 20-joint skeleton of the Northwestern-UCLA capture rig, centered on the
# spine joint (index 1).
_UCLA20_EDGES = (
    (0, 1), (1, 2), (2, 3), (4, 2), (5, 4), (6, 5), (7, 6), (8, 2),
    (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18),
)

# Small synthetic skeleton: a torso joint with four two-joint limbs.
_TOY9_EDGES = (
    (0, 1), (1, 2), (0, 3), (3, 4), (0, 5), (5, 6), (0, 7), (7, 8),
)

_NAMED = {
    "ntu25": (25, _NTU25_EDGES, 20),
    "ucla20": (20, _UCLA20_EDGES, 1),
    "toy9": (9, _TOY9_EDGES, 0),
    "path3": (3, ((0, 1), (1, 2)), 1),
    "star5": (5, ((0, 1), (0, 2), (0, 3), (0, 4)), 0),
}


def named_topology(name):
    """Look up a built-in topology by name."""
    try:
        n, edges, center = _NAMED[name]
    except KeyError:
        raise DataError(f"unknown topology {name!r}, expected one of {sorted(_NAMED)}")
    return Topology(n, edges, center)


def topology_names():
    return sorted(_NAMED)


# ---------------------------------------------------------------------------
# text file format: first payload line "N center", then one "i j" per edge


def read_topology(path):
    """Parse a topology file; ``#`` comments and blank lines are skipped."""
    header = None
    edges = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read topology file {path}: {exc}")
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected two integers, got {raw!r}")
            try:
                a, b = int(fields[0]), int(fields[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected two integers, got {raw!r}")
            if header is None:
                header = (a, b)
            else:
                edges.append((a, b))
    if header is None:
        raise DataError(f"{path}: no topology header line")
    try:
        return Topology(header[0], tuple(edges), header[1])
    except DataError as exc:
        raise DataError(f"{path}: {exc}")


def write_topology(path, topo):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{topo.num_vertices} {topo.center}\n")
        for i, j in topo.edges:
            fh.write(f"{i} {j}\n")
