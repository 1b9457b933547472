"""Deterministic synthetic scenes with known object partitions, plus the
brute-force oracles the test suite checks the fast paths against.

Objects are shells of semi-transparent Gaussians placed on well-separated
blobs; cameras sit on a sphere looking at the origin.  Ground-truth masks
assign every covered pixel (accumulated alpha >= 0.5) to the object of its
maximum-contribution Gaussian, computed with the naive oracle rasterizer
whenever the scene fits its guard and with the tiled rasterizer otherwise
(only the large timing benchmark exceeds the guard).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rasterizer import (
    ALPHA_CUT,
    LOWPASS,
    NEAR_PLANE,
    TAU_EMIT,
    project_gaussians,
    rasterize_view,
)
from . import scene_io
from .scene_io import Camera, GaussianScene, scene_from_arrays

ORACLE_T_STOP = 1e-6
ORACLE_MAX_PIXELS = 64 * 64
ORACLE_MAX_GAUSSIANS = 10_000


# ---------------------------------------------------------------------------
# oracles


@dataclass
class OracleRender:
    pixels: np.ndarray         # (R,) uint32, canonical pixel-major order
    gaussian_ids: np.ndarray   # (R,) uint32
    weights: np.ndarray        # (R,) float64
    alpha: np.ndarray          # (H, W) float64 accumulated alpha
    width: int
    height: int

    def owner_map(self) -> np.ndarray:
        """Per-pixel gaussian id with the largest weight; -1 where empty."""
        owner = np.full(self.height * self.width, -1, dtype=np.int64)
        if len(self.pixels):
            order = np.lexsort((self.weights, self.pixels))
            pix = self.pixels[order]
            last = np.concatenate([np.flatnonzero(np.diff(pix)), [len(pix) - 1]])
            owner[pix[last]] = self.gaussian_ids[order][last]
        return owner.reshape(self.height, self.width)


def _quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def oracle_rasterize(scene: GaussianScene, camera: Camera, *,
                     tau_emit: float = TAU_EMIT) -> OracleRender:
    """Naive float64 reference: every Gaussian is evaluated at every pixel,
    depth-sorted and blended sequentially with no tiling and termination only
    below 1e-6 transmittance.

    Guarded against quadratic blowup: either the image is at most 64x64 or
    the scene holds at most 10k Gaussians.
    """
    w_img, h_img = camera.width, camera.height
    if w_img * h_img > ORACLE_MAX_PIXELS and len(scene) > ORACLE_MAX_GAUSSIANS:
        raise DataError(
            f"oracle refuses {len(scene)} Gaussians at {w_img}x{h_img}: "
            f"needs <= {ORACLE_MAX_PIXELS} pixels or <= {ORACLE_MAX_GAUSSIANS} Gaussians"
        )

    ids = np.arange(len(scene), dtype=np.int64)
    pos = scene.positions.astype(np.float64)
    p_cam = pos @ camera.rotation.T + camera.translation
    front = p_cam[:, 2] > NEAR_PLANE
    ids, p_cam = ids[front], p_cam[front]
    if not len(ids):
        empty = np.empty(0, np.uint32)
        return OracleRender(empty, empty.copy(), np.empty(0, np.float64),
                            np.zeros((h_img, w_img)), w_img, h_img)

    order = np.lexsort((ids, p_cam[:, 2]))
    ids, p_cam = ids[order], p_cam[order]

    rot = _quat_to_rot(scene.quaternions[ids].astype(np.float64))
    rs = rot * np.exp(scene.scales[ids].astype(np.float64))[:, None, :]
    cov3 = rs @ rs.transpose(0, 2, 1)
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    jac = np.zeros((len(ids), 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * x / z**2
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * y / z**2
    jw = jac @ camera.rotation[None]
    cov2 = jw @ cov3 @ jw.transpose(0, 2, 1) + LOWPASS * np.eye(2)
    conic = np.linalg.inv(cov2)
    mu = np.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], -1)
    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits[ids].astype(np.float64)))

    m = len(ids)
    rows_per_block = max(1, int(6_000_000 / max(m * w_img, 1)))
    us = np.arange(w_img, dtype=np.float64)
    pix_parts, gid_parts, w_parts = [], [], []
    alpha_img = np.empty((h_img, w_img), dtype=np.float64)
    ca, cb, cc = conic[:, 0, 0], conic[:, 0, 1], conic[:, 1, 1]

    for row0 in range(0, h_img, rows_per_block):
        row1 = min(row0 + rows_per_block, h_img)
        vs = np.arange(row0, row1, dtype=np.float64)
        dx = us[None, :, None] - mu[None, None, :, 0]          # (1, W, M)
        dy = vs[:, None, None] - mu[None, None, :, 1].reshape(1, 1, m)
        q = ca * dx * dx + 2.0 * cb * (dx * dy) + cc * (dy * dy)
        np.maximum(q, 0.0, out=q)
        alpha = opac * np.exp(-0.5 * q)
        np.minimum(alpha, 0.99, out=alpha)
        alpha[alpha < ALPHA_CUT] = 0.0
        flat = alpha.reshape(-1, m)
        t_excl = np.cumprod(1.0 - flat, axis=1)
        alpha_img[row0:row1] = (1.0 - t_excl[:, -1]).reshape(row1 - row0, w_img)
        t_excl = np.concatenate([np.ones((len(flat), 1)), t_excl[:, :-1]], axis=1)
        weights = flat * t_excl
        weights[t_excl < ORACLE_T_STOP] = 0.0
        rr, cc_idx = np.nonzero(weights >= tau_emit)
        pix_parts.append(((row0 * w_img) + rr).astype(np.uint32))
        gid_parts.append(ids[cc_idx].astype(np.uint32))
        w_parts.append(weights[rr, cc_idx])

    return OracleRender(
        pixels=np.concatenate(pix_parts),
        gaussian_ids=np.concatenate(gid_parts),
        weights=np.concatenate(w_parts),
        alpha=alpha_img,
        width=w_img,
        height=h_img,
    )


def oracle_components(edges: np.ndarray, nodes: np.ndarray):
    """Breadth-first-search partition; labels ordered by smallest member id."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    adj: dict[int, list[int]] = {int(n): [] for n in nodes}
    for a, b in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        if a != b:
            adj[int(a)].append(int(b))
            adj[int(b)].append(int(a))
    labels = {}
    next_label = 0
    for start in nodes:
        start = int(start)
        if start in labels:
            continue
        queue = [start]
        labels[start] = next_label
        while queue:
            cur = queue.pop()
            for nb in adj[cur]:
                if nb not in labels:
                    labels[nb] = next_label
                    queue.append(nb)
        next_label += 1
    return nodes, np.array([labels[int(n)] for n in nodes], dtype=np.int64)


# ---------------------------------------------------------------------------
# scene construction helpers


def _look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    up = np.array([0.0, 0.0, 1.0])
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    return w2c


def _camera_sphere(n_views, radius, width, height, fx, elev_deg=25.0) -> list[Camera]:
    cams = []
    for i in range(n_views):
        azim = 2 * np.pi * i / n_views + 0.13
        elev = np.deg2rad(elev_deg if i % 2 == 0 else -elev_deg)
        eye = radius * np.array([
            np.cos(azim) * np.cos(elev),
            np.sin(azim) * np.cos(elev),
            np.sin(elev),
        ])
        cams.append(Camera(
            view_id=i, width=width, height=height, fx=fx, fy=fx,
            cx=width / 2.0, cy=height / 2.0,
            world_to_camera=_look_at(eye, np.zeros(3)),
        ))
    return cams


def _orthonormal_rows(rng, n: int, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, n)))
    return np.ascontiguousarray(q.T)


def _shell_object(rng, center, radius, count, logit_range=(0.2, 0.8)):
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rad = radius * (1.0 + rng.normal(0, 0.03, count))
    positions = center + dirs * rad[:, None]
    sigma = 2.4 * radius / np.sqrt(count)
    scales = np.log(sigma * rng.uniform(0.7, 1.4, (count, 3)))
    quats = rng.normal(size=(count, 4))
    logits = rng.uniform(*logit_range, count)
    colors = rng.uniform(-1, 1, (count, 3))
    return positions, scales, quats, logits, colors


def _noisy_feature(rng, base: np.ndarray, sigma: float) -> np.ndarray:
    noisy = base + rng.normal(0, sigma / np.sqrt(len(base)), len(base))
    return noisy / np.linalg.norm(noisy)


def _render_view(scene, camera, use_oracle, threads):
    """Owner map, coverage and alpha for one view, oracle or tiled."""
    if use_oracle:
        render = oracle_rasterize(scene, camera)
        return render.owner_map(), render.alpha
    proj = project_gaussians(scene, camera)
    stream, alpha = rasterize_view(proj, camera, threads=threads)
    owner = np.full(camera.height * camera.width, -1, dtype=np.int64)
    if len(stream):
        order = np.lexsort((stream.weights, stream.pixels))
        pix = stream.pixels[order]
        last = np.concatenate([np.flatnonzero(np.diff(pix)), [len(pix) - 1]])
        owner[pix[last]] = stream.gaussian_ids[order][last]
    return owner.reshape(camera.height, camera.width), alpha.astype(np.float64)


class _SceneBuilder:
    """Shared machinery: place objects, render GT, write artifacts."""

    def __init__(self, out_dir, seed, width, height, feature_dim):
        self.out = Path(out_dir)
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.width = width
        self.height = height
        self.dim = feature_dim
        self.centers: list[np.ndarray] = []
        self.radii: list[float] = []
        self.counts: list[int] = []
        self.labels: list[str] = []
        self.parts: list[tuple] = []

    def add_object(self, center, radius, count, label, logit_range=(0.2, 0.8)):
        self.centers.append(np.asarray(center, dtype=np.float64))
        self.radii.append(radius)
        self.counts.append(count)
        self.labels.append(label)
        self.parts.append(_shell_object(self.rng, center, radius, count, logit_range))
        return len(self.centers) - 1

    def build_scene(self) -> GaussianScene:
        self.scene = scene_from_arrays(
            positions=np.concatenate([p[0] for p in self.parts]),
            scales=np.concatenate([p[1] for p in self.parts]),
            quaternions=np.concatenate([p[2] for p in self.parts]),
            opacity_logits=np.concatenate([p[3] for p in self.parts]),
            color_dc=np.concatenate([p[4] for p in self.parts]),
        )
        bounds = np.cumsum([0] + self.counts)
        self.object_of = np.repeat(np.arange(len(self.counts)), self.counts)
        self.ranges = [(int(bounds[i]), int(bounds[i + 1])) for i in range(len(self.counts))]
        return self.scene

    def build_cameras(self, n_views, elev_deg=25.0) -> list[Camera]:
        extent = max(np.linalg.norm(c) + r for c, r in zip(self.centers, self.radii))
        cam_radius = 3.2 * max(extent, 1.0)
        fx = 0.42 * min(self.width, self.height) * (cam_radius - extent) / extent
        self.cameras = _camera_sphere(n_views, cam_radius, self.width, self.height,
                                      fx, elev_deg)
        return self.cameras

    def render_ground_truth(self, use_oracle, threads=1):
        """Per view: object-id pixel map (-1 background) from coverage + owner."""
        self.object_maps = []
        for cam in self.cameras:
            owner, alpha = _render_view(self.scene, cam, use_oracle, threads)
            omap = np.where((alpha >= 0.5) & (owner >= 0),
                            self.object_of[np.clip(owner, 0, None)], -1)
            self.object_maps.append(omap.astype(np.int32))
        return self.object_maps


def _write_common(builder: _SceneBuilder, mask_images, feature_rows, view_masks,
                  manifest_extra, write_gt, object_features, query_names=None,
                  query_vectors=None):
    out = builder.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    scene_io.save_scene(builder.scene, out / "scene.ply")
    cams = [
        Camera(view_id=c.view_id, width=c.width, height=c.height, fx=c.fx, fy=c.fy,
               cx=c.cx, cy=c.cy, world_to_camera=c.world_to_camera,
               mask_count=int(mask_images[i].max()))
        for i, c in enumerate(builder.cameras)
    ]
    scene_io.save_cameras(cams, out / "cameras.json")
    for cam, mask in zip(cams, mask_images):
        scene_io.save_mask_png(mask, out / "masks" / f"{cam.view_id}.png")
    scene_io.save_features(np.asarray(feature_rows, dtype=np.float32),
                           out / "features.splf")

    names = query_names or [f"object_{i}" for i in range(len(builder.labels))]
    vectors = query_vectors if query_vectors is not None else object_features
    scene_io.save_queries("object_selection", names, vectors,
                          out / "queries_selection.json")
    scene_io.save_queries("semantic_segmentation", builder.labels, object_features,
                          out / "queries_labels.json")

    if write_gt:
        gt = out / "gt"
        for obj_idx, name in enumerate(names):
            qdir = gt / "selection" / name
            qdir.mkdir(parents=True, exist_ok=True)
            for cam, omap in zip(cams, builder.object_maps):
                binary = (omap == obj_idx).astype(np.uint16) * 0xFFFF
                scene_io.save_mask_png(binary, qdir / f"{cam.view_id}.png")
        scene_io.save_index_field(
            builder.object_of.astype(np.uint16), gt / "gaussian_labels.spix")
        (gt / "classes.json").write_text(json.dumps(builder.labels))

    manifest = {
        "seed": builder.seed,
        "width": builder.width,
        "height": builder.height,
        "feature_dim": builder.dim,
        "n_views": len(builder.cameras),
        "objects": [
            {
                "object_id": i,
                "label": builder.labels[i],
                "gaussian_start": builder.ranges[i][0],
                "gaussian_count": builder.ranges[i][1] - builder.ranges[i][0],
                "feature": [float(v) for v in object_features[i]],
            }
            for i in range(len(builder.labels))
        ],
        "views": view_masks,
        "query_names": names,
    }
    manifest.update(manifest_extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def generate_scene(out_dir, *, seed=7, n_objects=4, gaussians_per_object=2000,
                   n_views=8, noise_sigma=0.05, width=160, height=160,
                   feature_dim=512, spurious_pixels=0, threads=1,
                   use_oracle=None, write_gt=True, min_visible_pixels=10):
    """Standard benchmark scene: well-separated shell objects on a ring.

    Object centers keep at least six blob radii of spacing; per-view object
    mask features are the object vector plus Gaussian noise of expected norm
    ``noise_sigma``, renormalized.  Returns the manifest dict.
    """
    if n_objects < 1 or n_objects > feature_dim:
        raise ConfigError(f"n_objects must be in [1, {feature_dim}]")
    if n_views < 2:
        raise ConfigError("need at least two views")

    b = _SceneBuilder(out_dir, seed, width, height, feature_dim)
    r_blob = 0.4
    ring = 3.0 * r_blob / np.sin(np.pi / n_objects) if n_objects > 1 else 0.0
    for i in range(n_objects):
        angle = 2 * np.pi * i / n_objects
        center = np.array([
            ring * np.cos(angle),
            ring * np.sin(angle),
            2.4 * r_blob * (i - (n_objects - 1) / 2),
        ])
        b.add_object(center, r_blob, gaussians_per_object, f"object_{i}")
    centers = np.array(b.centers)
    if n_objects > 1:
        dists = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() < 6 * r_blob:
            raise ConfigError("object placement violates the 6-radius spacing rule")

    scene = b.build_scene()
    b.build_cameras(n_views)
    if use_oracle is None:
        use_oracle = (width * height <= ORACLE_MAX_PIXELS
                      or len(scene) <= ORACLE_MAX_GAUSSIANS)
    b.render_ground_truth(use_oracle, threads)

    object_features = _orthonormal_rows(b.rng, n_objects, feature_dim)
    mask_images = []
    feature_rows = []
    view_masks = []
    spurious = []
    for vi, omap in enumerate(b.object_maps):
        visible = [o for o in range(n_objects)
                   if (omap == o).sum() >= min_visible_pixels]
        mask = np.zeros((height, width), dtype=np.uint16)
        records = []
        for local, obj in enumerate(visible):
            mask[omap == obj] = local + 1
            feature_rows.append(_noisy_feature(b.rng, object_features[obj], noise_sigma))
            records.append({"local": local, "global": len(feature_rows) - 1,
                            "object": obj})
        if spurious_pixels > 0 and vi == 0 and visible:
            yy, xx = np.nonzero(omap == visible[0])
            take = min(spurious_pixels, len(yy))
            local = len(visible)
            mask[yy[:take], xx[:take]] = local + 1
            vec = b.rng.normal(size=feature_dim)
            feature_rows.append(vec / np.linalg.norm(vec))
            spurious.append({"view": vi, "local": local,
                             "global": len(feature_rows) - 1, "pixels": int(take)})
        mask_images.append(mask)
        view_masks.append({"view_id": vi, "masks": records})

    return _write_common(
        b, mask_images, feature_rows, view_masks,
        {
            "kind": "benchmark",
            "noise_sigma": noise_sigma,
            "spurious_masks": spurious,
            "expected_clusters": n_objects,
            "recommended_thresholds": {
                "tau_contrib": 0.04, "tau_noise": 200,
                "tau_iou": 0.6, "tau_feat": 0.75,
            },
            "recommended_selection_mode": "relative",
        },
        write_gt, object_features)


def generate_ablation_scene(out_dir, *, seed=11, gaussians_per_object=2200,
                            n_views=8, width=176, height=176, feature_dim=512,
                            threads=1, twin_noise=0.4, clean_noise=0.05,
                            spur_radius_px=3.0):
    """Ablation benchmark: a spatially disjoint twin pair sharing one feature
    vector, an interlocked pair with orthogonal features, and small spurious
    masks anchored to fixed 3D points across all views.

    Selection queries use the expected cluster features (the normalized mean
    of each object's planted mask features) so argmax selection separates the
    twins whenever they stay in distinct clusters.
    """
    b = _SceneBuilder(out_dir, seed, width, height, feature_dim)
    r = 0.4
    d = 6.5 * r
    b.add_object([-d, -0.4 * d, 0.0], r, gaussians_per_object, "twin_a")
    b.add_object([d, -0.4 * d, 0.45 * d], r, gaussians_per_object, "twin_b")
    b.add_object([-0.275 * r, 0.8 * d, -0.45 * d], r, gaussians_per_object, "inter_c")
    b.add_object([0.275 * r, 0.8 * d, -0.45 * d], r, gaussians_per_object, "inter_d")
    scene = b.build_scene()
    b.build_cameras(n_views)
    b.render_ground_truth(use_oracle=len(scene) <= ORACLE_MAX_GAUSSIANS,
                          threads=threads)

    basis = _orthonormal_rows(b.rng, 3, feature_dim)
    v_twin, v_c, v_d = basis
    base_vectors = [v_twin, v_twin, v_c, v_d]
    noise = [twin_noise, twin_noise, clean_noise, clean_noise]

    # One fixed 3D anchor per spurious mask: (object, shell point); each view
    # carves a small disc around the anchor's projection out of that object's
    # mask so the planted mask has consistent (but small) 3D support.
    anchor_objs = [0, 0, 1, 2]
    anchors = []
    for obj in anchor_objs:
        lo, hi = b.ranges[obj]
        gid = lo + int(b.rng.integers(0, hi - lo))
        anchors.append((obj, scene.positions[gid].astype(np.float64)))

    mask_images = []
    feature_rows = []
    view_masks = []
    spurious = []
    mask_feats_by_obj: dict[int, list[np.ndarray]] = {0: [], 1: [], 2: [], 3: []}
    for vi, (cam, omap) in enumerate(zip(b.cameras, b.object_maps)):
        mask = np.zeros((height, width), dtype=np.uint16)
        records = []
        local = 0
        for obj in range(4):
            sel = omap == obj
            if sel.sum() < 10:
                continue
            mask[sel] = local + 1
            feat = _noisy_feature(b.rng, base_vectors[obj], noise[obj])
            mask_feats_by_obj[obj].append(feat)
            feature_rows.append(feat)
            records.append({"local": local, "global": len(feature_rows) - 1,
                            "object": obj})
            local += 1
        for anchor_idx, (obj, point) in enumerate(anchors):
            cam_pt = cam.rotation @ point + cam.translation
            if cam_pt[2] <= NEAR_PLANE:
                continue
            u = cam.fx * cam_pt[0] / cam_pt[2] + cam.cx
            v = cam.fy * cam_pt[1] / cam_pt[2] + cam.cy
            yy, xx = np.mgrid[0:height, 0:width]
            disc = ((xx - u) ** 2 + (yy - v) ** 2 <= spur_radius_px ** 2) \
                & (omap == obj)
            if disc.sum() < 3:
                continue
            mask[disc] = local + 1
            vec = b.rng.normal(size=feature_dim)
            feature_rows.append(vec / np.linalg.norm(vec))
            spurious.append({"view": vi, "local": local, "anchor": anchor_idx,
                             "global": len(feature_rows) - 1,
                             "pixels": int(disc.sum())})
            local += 1
        mask_images.append(mask)
        view_masks.append({"view_id": vi, "masks": records})

    expected = np.stack([
        np.mean(mask_feats_by_obj[o], axis=0) for o in range(4)
    ])
    expected /= np.linalg.norm(expected, axis=1, keepdims=True)

    return _write_common(
        b, mask_images, feature_rows, view_masks,
        {
            "kind": "ablation",
            "twin_noise": twin_noise,
            "clean_noise": clean_noise,
            "spurious_masks": spurious,
            "twin_objects": [0, 1],
            "interlocked_objects": [2, 3],
            "expected_clusters": 4,
            "recommended_thresholds": {
                "tau_contrib": 0.04, "tau_noise": 500,
                "tau_iou": 0.6, "tau_feat": 0.75,
            },
            "recommended_selection_mode": "argmax",
        },
        True, np.stack(base_vectors), query_vectors=expected)


def generate_perf_scene(out_dir, *, seed=3, n_objects=125,
                        gaussians_per_object=800, n_views=50, width=960,
                        height=540, noise_sigma=0.05, feature_dim=512,
                        threads=2, write_gt=False):
    """Large grid scene for the timing benchmark (exceeds the oracle guard,
    so ground truth uses the tiled rasterizer)."""
    b = _SceneBuilder(out_dir, seed, width, height, feature_dim)
    r_blob = 0.4
    side = int(np.ceil(n_objects ** (1 / 3)))
    spacing = 6.0 * r_blob
    placed = 0
    for iz in range(side):
        for iy in range(side):
            for ix in range(side):
                if placed >= n_objects:
                    break
                center = (np.array([ix, iy, iz]) - (side - 1) / 2) * spacing
                b.add_object(center, r_blob, gaussians_per_object,
                             f"object_{placed}")
                placed += 1
    scene = b.build_scene()
    b.build_cameras(n_views)
    b.render_ground_truth(use_oracle=False, threads=threads)

    object_features = _orthonormal_rows(b.rng, n_objects, feature_dim)
    mask_images = []
    feature_rows = []
    view_masks = []
    for vi, omap in enumerate(b.object_maps):
        counts = np.bincount(omap[omap >= 0].reshape(-1), minlength=n_objects)
        visible = np.flatnonzero(counts >= 10)
        lut = np.zeros(n_objects + 1, dtype=np.uint16)
        lut[1 + visible] = np.arange(1, len(visible) + 1, dtype=np.uint16)
        mask = lut[omap + 1]
        records = []
        for local, obj in enumerate(visible):
            feature_rows.append(_noisy_feature(b.rng, object_features[obj],
                                               noise_sigma))
            records.append({"local": local, "global": len(feature_rows) - 1,
                            "object": int(obj)})
        mask_images.append(mask)
        view_masks.append({"view_id": vi, "masks": records})

    return _write_common(
        b, mask_images, feature_rows, view_masks,
        {
            "kind": "perf",
            "noise_sigma": noise_sigma,
            "spurious_masks": [],
            "expected_clusters": n_objects,
            "recommended_thresholds": {
                "tau_contrib": 0.01, "tau_noise": 50,
                "tau_iou": 0.6, "tau_feat": 0.75,
            },
            "recommended_selection_mode": "relative",
        },
        write_gt, object_features)
