"""Metric harness: render-back 2D evaluation and direct 3D label evaluation.

Object selection renders the selected Gaussians back into each evaluation
view, binarizes the alpha image and scores IoU against ground-truth masks;
a query's IoU is the mean over its views.  Semantic segmentation compares
per-Gaussian labels one-to-one and reports per-class IoU and recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .query import SelectionResult
from .rasterizer import render_alpha_mask
from .scene_io import SENTINEL, Camera, GaussianScene


def iou_2d(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pixel IoU of two binary masks; two empty masks agree vacuously (1.0)."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DataError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


@dataclass
class MetricReport:
    task: str
    per_query: list[dict] = field(default_factory=list)
    miou: float = 0.0
    macc25: float | None = None
    macc: float | None = None
    per_class: list[dict] | None = None
    timing: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"task": self.task, "per_query": self.per_query, "miou": self.miou}
        if self.macc25 is not None:
            out["macc25"] = self.macc25
        if self.macc is not None:
            out["macc"] = self.macc
        if self.per_class is not None:
            out["per_class"] = self.per_class
        out["timing"] = self.timing
        out["notes"] = self.notes
        return out


def evaluate_object_selection(scene: GaussianScene, cameras: list[Camera],
                              selections: list[SelectionResult],
                              gt_masks: dict[str, dict[int, np.ndarray]], *,
                              binarize_alpha: float = 0.5,
                              eval_view_ids: list[int] | None = None,
                              threads: int = 1,
                              backend: str | None = None) -> MetricReport:
    """Render-back evaluation; per-query IoU averages over that query's views."""
    cam_by_id = {c.view_id: c for c in cameras}
    per_query = []
    for sel in selections:
        if sel.query_name not in gt_masks or not gt_masks[sel.query_name]:
            raise DataError(f"query '{sel.query_name}': no ground-truth views")
        gt_views = gt_masks[sel.query_name]
        view_ids = eval_view_ids if eval_view_ids is not None else sorted(gt_views)
        ious = {}
        for vid in view_ids:
            if vid not in gt_views:
                raise DataError(f"query '{sel.query_name}': missing GT for view {vid}")
            if vid not in cam_by_id:
                raise DataError(f"query '{sel.query_name}': unknown view {vid}")
            alpha = render_alpha_mask(scene, cam_by_id[vid], sel.selected_gaussians,
                                      threads=threads, backend=backend)
            pred = alpha >= binarize_alpha
            ious[vid] = iou_2d(pred, gt_views[vid] > 0)
        iou = float(np.mean(list(ious.values())))
        per_query.append({
            "name": sel.query_name,
            "iou": iou,
            "hit_at_025": bool(iou >= 0.25),
            "per_view_iou": {str(v): ious[v] for v in sorted(ious)},
        })
    miou = float(np.mean([q["iou"] for q in per_query]))
    macc25 = float(np.mean([q["hit_at_025"] for q in per_query]))
    return MetricReport(
        task="object_selection",
        per_query=per_query,
        miou=miou,
        macc25=macc25,
        notes={
            "binarize_alpha": binarize_alpha,
            "view_reduction": "mean of per-view IoUs",
        },
    )


def evaluate_semantic_3d(label_field: np.ndarray, gt_labels: np.ndarray,
                         class_count: int) -> MetricReport:
    """Per-Gaussian label metrics; sentinel predictions count as wrong."""
    pred = np.asarray(label_field)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise DataError(f"label fields differ in length: {pred.shape} vs {gt.shape}")
    per_class = []
    for c in range(class_count):
        gt_c = gt == c
        if not gt_c.any():
            continue
        pred_c = (pred == c) & (pred != SENTINEL)
        tp = int(np.logical_and(pred_c, gt_c).sum())
        fp = int(np.logical_and(pred_c, ~gt_c).sum())
        fn = int(np.logical_and(~pred_c, gt_c).sum())
        per_class.append({
            "class_id": c,
            "iou": tp / (tp + fp + fn),
            "acc": tp / (tp + fn),
        })
    if not per_class:
        raise DataError("no ground-truth classes present")
    return MetricReport(
        task="semantic_segmentation",
        miou=float(np.mean([r["iou"] for r in per_class])),
        macc=float(np.mean([r["acc"] for r in per_class])),
        per_class=per_class,
    )
