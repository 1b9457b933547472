"""Open-vocabulary inference against cluster features, plus cluster edits.

Queries are compared with the compact cluster-feature table, never with
individual Gaussians: similarity work per query is exactly the cluster
count.  Edits return new scenes; they never mutate their input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterTable
from .errors import ConfigError, DataError
from .scene_io import SENTINEL, GaussianScene, QuerySet

# Zeroth-order spherical-harmonic constant 1 / (2 sqrt(pi)); DC color
# coefficients encode rgb as (rgb - 0.5) / SH_DC.
SH_DC = 0.28209479177387814

SELECTION_MODES = ("argmax", "relative")


@dataclass
class SelectionResult:
    query_name: str
    similarities: np.ndarray         # (C,) float64
    selected_clusters: np.ndarray    # sorted cluster ids
    selected_gaussians: np.ndarray   # sorted gaussian ids


def select_objects(table: ClusterTable, query: np.ndarray, *,
                   mode: str = "relative", rho: float = 0.9,
                   query_name: str = "", counters: dict | None = None) -> SelectionResult:
    """Select clusters for one L2-normalized query embedding.

    ``argmax`` picks the single best cluster; ``relative`` keeps every
    cluster within ``rho`` of the best similarity.
    """
    if table.n_clusters == 0:
        raise DataError("cannot query an empty cluster table")
    if mode not in SELECTION_MODES:
        raise ConfigError(f"selection mode must be one of {SELECTION_MODES}, got {mode!r}")
    q = np.asarray(query, dtype=np.float64)
    sims = table.cluster_features @ q
    if counters is not None:
        counters["similarity_evals"] = counters.get("similarity_evals", 0) + len(sims)
    if mode == "argmax":
        selected = np.array([int(np.argmax(sims))], dtype=np.int64)
    else:
        selected = np.flatnonzero(sims >= rho * sims.max())
    return SelectionResult(
        query_name=query_name,
        similarities=sims,
        selected_clusters=selected,
        selected_gaussians=table.gaussians_of(selected),
    )


def semantic_segmentation(table: ClusterTable, label_queries: QuerySet,
                          counters: dict | None = None) -> np.ndarray:
    """Label every Gaussian with its cluster's best-matching query.

    Returns a per-Gaussian uint16 label field; unassigned Gaussians keep the
    sentinel.  Similarity ties resolve to the smallest label id.
    """
    if len(label_queries) < 1:
        raise DataError("semantic segmentation needs at least one label query")
    sims = label_queries.embeddings @ table.cluster_features.T   # (Q, C)
    if counters is not None:
        counters["similarity_evals"] = counters.get("similarity_evals", 0) + sims.size
    best = np.argmax(sims, axis=0).astype(np.uint16)             # (C,)
    lut = np.full(0x10000, SENTINEL, dtype=np.uint16)
    lut[: len(best)] = best
    return lut[table.gaussian_clusters]


def edit_recolor(scene: GaussianScene, selected: np.ndarray,
                 rgb) -> GaussianScene:
    """Set the DC color of the selected Gaussians to a constant rgb in [0,1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape != (3,) or (rgb < 0).any() or (rgb > 1).any():
        raise ConfigError(f"rgb must be three components in [0, 1], got {rgb}")
    out = scene.copy()
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size:
        out.color_dc[selected] = ((rgb - 0.5) / SH_DC).astype(np.float32)
    return out


def edit_enlarge(scene: GaussianScene, selected: np.ndarray,
                 factor: float) -> GaussianScene:
    """Scale the selected Gaussians about their centroid by ``factor``."""
    if not factor > 0:
        raise ConfigError(f"enlarge factor must be positive, got {factor}")
    out = scene.copy()
    selected = np.asarray(selected, dtype=np.int64)
    if factor == 1.0 or selected.size == 0:
        return out
    pos = out.positions[selected].astype(np.float64)
    centroid = pos.mean(axis=0)
    out.positions[selected] = (centroid + factor * (pos - centroid)).astype(np.float32)
    out.scales[selected] = (
        out.scales[selected].astype(np.float64) + np.log(factor)
    ).astype(np.float32)
    return out
