"""Single-step context-aware clustering of surviving masks.

Masks become nodes of an undirected graph (self-loops always present); an
edge joins two masks when the IoU of their Gaussian sets and the cosine
similarity of their features both clear their thresholds.  Candidate pairs
come from an inverted Gaussian -> mask index, so only set-sharing pairs are
ever scored; pairs sharing nothing have IoU 0 and cannot pass any positive
IoU threshold.  Connected components become clusters in one union-find pass
and cluster features are the L2-normalized means of member mask features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DataError
from .injection import MaskGaussianSets, MaskIndexField
from .scene_io import SENTINEL


def mask_iou(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Intersection over union of two Gaussian-id sets; both empty -> 0."""
    a = np.unique(np.asarray(set_a))
    b = np.unique(np.asarray(set_b))
    union = a.size + b.size - np.intersect1d(a, b, assume_unique=True).size
    if union == 0:
        return 0.0
    inter = a.size + b.size - union
    return inter / union


def feature_sim(f_a: np.ndarray, f_b: np.ndarray) -> float:
    """Cosine similarity between two feature vectors."""
    a = np.asarray(f_a, dtype=np.float64)
    b = np.asarray(f_b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class MaskGraph:
    """Graph over surviving masks; ``edges`` includes the self-loops."""

    nodes: np.ndarray                # (S,) int64, sorted surviving mask ids
    edges: np.ndarray                # (E, 2) int64, canonical a <= b, lexsorted

    @property
    def cross_edges(self) -> np.ndarray:
        return self.edges[self.edges[:, 0] != self.edges[:, 1]]


def _sharing_pairs(sets: MaskGaussianSets, surviving: np.ndarray):
    """Unique surviving-mask pairs sharing a Gaussian, with intersection sizes.

    Every Gaussian contributes one occurrence per mask pair it belongs to, so
    the multiplicity of a pair equals the intersection of the two sets.
    """
    is_surviving = np.zeros(sets.n_masks, dtype=bool)
    is_surviving[surviving] = True
    keep = is_surviving[sets.pair_masks]
    g = sets.pair_gaussians[keep]
    m = sets.pair_masks[keep]
    order = np.lexsort((m, g))
    g, m = g[order], m[order]

    run_sizes = np.diff(np.concatenate([[0], np.flatnonzero(np.diff(g)) + 1, [len(g)]]))
    max_run = int(run_sizes.max()) if len(run_sizes) else 0
    parts = []
    stride = np.int64(sets.n_masks)
    for shift in range(1, max_run):
        same = g[:-shift] == g[shift:]
        if not same.any():
            break
        parts.append(m[:-shift][same] * stride + m[shift:][same])
    if parts:
        keys, inter = np.unique(np.concatenate(parts), return_counts=True)
        return keys // stride, keys % stride, inter
    empty = np.empty(0, dtype=np.int64)
    return empty, empty.copy(), empty.copy()


def build_graph(sets: MaskGaussianSets, features: np.ndarray,
                surviving: np.ndarray, tau_iou: float, tau_feat: float, *,
                geometric_gate: bool = True, counters: dict | None = None) -> MaskGraph:
    """Score candidate pairs and keep those passing both gates.

    ``geometric_gate=False`` removes the IoU requirement entirely: every
    surviving pair is scored on semantics alone, so spatially disjoint masks
    with matching features can merge (the overlap-blind ablation).
    """
    surviving = np.asarray(surviving, dtype=np.int64)
    feats = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = feats / norms

    if geometric_gate:
        ia, ib, inter = _sharing_pairs(sets, surviving)
        sizes = sets.set_sizes
        union = sizes[ia] + sizes[ib] - inter
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
        sim = np.einsum("ij,ij->i", feats[ia], feats[ib])
        ok = (iou >= tau_iou) & (sim >= tau_feat)
    else:
        s = len(surviving)
        ia, ib = np.triu_indices(s, k=1)
        ia, ib = surviving[ia], surviving[ib]
        sim = np.einsum("ij,ij->i", feats[ia], feats[ib])
        ok = sim >= tau_feat

    if counters is not None:
        counters["pair_passes"] = counters.get("pair_passes", 0) + 1
        counters["pairs_scored"] = counters.get("pairs_scored", 0) + len(ia)

    loops = np.stack([surviving, surviving], axis=1)
    cross = np.stack([ia[ok], ib[ok]], axis=1)
    edges = np.concatenate([loops, cross]) if len(cross) else loops
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return MaskGraph(nodes=surviving, edges=edges)


class UnionFind:
    """Disjoint sets with path compression."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, v: int) -> int:
        parent = self.parent
        root = v
        while parent[root] != root:
            root = parent[root]
        while parent[v] != root:
            parent[v], v = root, parent[v]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Attach the larger root under the smaller: component
            # representatives stay the minimum member.
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def connected_components(graph: MaskGraph, counters: dict | None = None):
    """Partition graph nodes; cluster ids ordered by smallest member mask id.

    Returns ``(nodes, labels)`` aligned arrays.
    """
    nodes = graph.nodes
    uf = UnionFind(len(nodes))
    idx = {int(n): i for i, n in enumerate(nodes)}
    for a, b in graph.edges:
        if a != b:
            uf.union(idx[int(a)], idx[int(b)])
    roots = np.array([uf.find(i) for i in range(len(nodes))], dtype=np.int64)
    # Roots are minimal member indices, and nodes are sorted, so ordering
    # components by root index equals ordering by smallest member mask id.
    uniq, labels = np.unique(roots, return_inverse=True)
    if counters is not None:
        counters["clustering_passes"] = counters.get("clustering_passes", 0) + 1
    return nodes, labels.astype(np.int64)


def aggregate_features(nodes: np.ndarray, labels: np.ndarray,
                       features: np.ndarray,
                       counters: dict | None = None) -> np.ndarray:
    """Average member mask features per cluster, then L2-normalize."""
    feats = np.asarray(features, dtype=np.float64)
    n_clusters = int(labels.max()) + 1 if len(labels) else 0
    sums = np.zeros((n_clusters, feats.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, feats[nodes])
    counts = np.bincount(labels, minlength=n_clusters)
    means = sums / counts[:, None]
    out = means / np.linalg.norm(means, axis=1, keepdims=True)
    if counters is not None:
        counters["mask_passes"] = counters.get("mask_passes", 0) + 1
    return out


def build_cluster_field(index_field: MaskIndexField, nodes: np.ndarray,
                        labels: np.ndarray) -> np.ndarray:
    """Compose the mask index field with the mask -> cluster map."""
    n_clusters = int(labels.max()) + 1 if len(labels) else 0
    if n_clusters > 0xFFFF:
        raise CapacityError(f"{n_clusters} clusters exceed the 2-byte budget")
    lut = np.full(0x10000, SENTINEL, dtype=np.uint16)
    lut[nodes] = labels.astype(np.uint16)
    return lut[index_field.values]


@dataclass
class ClusterTable:
    """Cluster-level semantic index: the product of the distillation stage."""

    mask_ids: np.ndarray             # (S,) surviving masks, sorted
    mask_clusters: np.ndarray        # (S,) cluster label per mask
    cluster_features: np.ndarray     # (C, D) float64, rows L2-normalized
    gaussian_clusters: np.ndarray    # (N,) uint16, sentinel 0xFFFF
    _members: np.ndarray = field(init=False)
    _member_starts: np.ndarray = field(init=False)

    def __post_init__(self):
        assigned = np.flatnonzero(self.gaussian_clusters != SENTINEL)
        labels = self.gaussian_clusters[assigned].astype(np.int64)
        order = np.argsort(labels, kind="stable")
        self._members = assigned[order]
        counts = np.bincount(labels, minlength=self.n_clusters)
        self._member_starts = np.concatenate([[0], np.cumsum(counts)])

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_features)

    @property
    def mask_to_cluster(self) -> dict[int, int]:
        return {int(m): int(c) for m, c in zip(self.mask_ids, self.mask_clusters)}

    def cluster_gaussians(self, cluster_id: int) -> np.ndarray:
        if not (0 <= cluster_id < self.n_clusters):
            raise DataError(f"cluster id {cluster_id} out of range")
        lo = self._member_starts[cluster_id]
        hi = self._member_starts[cluster_id + 1]
        return self._members[lo:hi]

    def gaussians_of(self, cluster_ids) -> np.ndarray:
        parts = [self.cluster_gaussians(int(c)) for c in cluster_ids]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))


def build_cluster_table(sets: MaskGaussianSets, surviving: np.ndarray,
                        features: np.ndarray, index_field: MaskIndexField,
                        tau_iou: float, tau_feat: float, *,
                        geometric_gate: bool = True,
                        counters: dict | None = None) -> ClusterTable:
    """Graph, components, aggregation and the per-Gaussian cluster field."""
    graph = build_graph(sets, features, surviving, tau_iou, tau_feat,
                        geometric_gate=geometric_gate, counters=counters)
    nodes, labels = connected_components(graph, counters=counters)
    cluster_features = aggregate_features(nodes, labels, features, counters=counters)
    gaussian_clusters = build_cluster_field(index_field, nodes, labels)
    return ClusterTable(
        mask_ids=nodes,
        mask_clusters=labels,
        cluster_features=cluster_features,
        gaussian_clusters=gaussian_clusters,
    )
