"""EWA projection and per-pixel contribution weights.

For every view this module produces the stream of alpha-blending
contribution weights ``w = alpha * transmittance`` that the injection stage
consumes.  The hot blending loop has two interchangeable backends: a
compiled tile-parallel kernel (built from ``_kernels.pyx``) and a pure-numpy
splat-major fallback; both implement identical blending semantics and the
import-time default picks the compiled one when available.  Override with
``SPLATSEM_BACKEND=python|compiled``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .errors import ConfigError
from .scene_io import Camera, GaussianScene

try:
    from . import _kernels

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - build-less installs
    _kernels = None
    HAVE_COMPILED = False

# Blending contract shared by both backends and the naive oracle.
NEAR_PLANE = 0.01          # camera-space z cull
LOWPASS = 0.3              # isotropic floor added to every 2D covariance
ALPHA_MAX = 0.99           # per-sample alpha clamp
ALPHA_CUT = 1.0 / 255.0    # samples below this neither emit nor attenuate
TAU_EMIT = 1e-4            # minimum emitted record weight
T_STOP = 1e-4              # per-pixel early termination
TILE_SIZE = 16


def active_backend() -> str:
    env = os.environ.get("SPLATSEM_BACKEND")
    if env:
        if env not in ("compiled", "python"):
            raise ConfigError(f"SPLATSEM_BACKEND must be 'compiled' or 'python', got {env!r}")
        if env == "compiled" and not HAVE_COMPILED:
            raise ConfigError("compiled backend requested but extension is not built")
        return env
    return "compiled" if HAVE_COMPILED else "python"


@dataclass
class ProjectedGaussians:
    """Depth-sorted screen-space Gaussians for one view (struct of arrays).

    ``cov2d``/``conics`` store the symmetric 2x2 matrices as (a, b, c) with
    b the off-diagonal.  ``bboxes`` are inclusive integer pixel rectangles
    covering every sample with alpha >= ALPHA_CUT.
    """

    gaussian_ids: np.ndarray      # (M,) uint32, indices into the scene
    means2d: np.ndarray           # (M, 2) float64, pixel coords
    cov2d: np.ndarray             # (M, 3) float64
    conics: np.ndarray            # (M, 3) float64, inverse of cov2d
    depths: np.ndarray            # (M,) float64, camera-space z
    opacities: np.ndarray         # (M,) float64, sigmoid of the stored logit
    bboxes: np.ndarray            # (M, 4) int32, x0, y0, x1, y1 inclusive
    n_culled: int

    def __len__(self) -> int:
        return len(self.gaussian_ids)


def quaternions_to_matrices(quats: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    w, x, y, z = (quats[:, i].astype(np.float64) for i in range(4))
    m = np.empty((len(quats), 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariances_3d(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """World-space covariances R diag(exp(s))^2 R^T, (N, 3, 3) float64."""
    rot = quaternions_to_matrices(quats)
    rs = rot * np.exp(scales.astype(np.float64))[:, None, :]
    return rs @ rs.transpose(0, 2, 1)


def project_gaussians(scene: GaussianScene, camera: Camera,
                      subset: np.ndarray | None = None) -> ProjectedGaussians:
    """Project (a subset of) the scene into one camera.

    Culls Gaussians behind the near plane, with non-finite screen-space
    footprints, or whose bounding box misses the image; survivors come back
    sorted by ascending view depth with ties broken by ascending id.
    """
    if subset is None:
        ids = np.arange(len(scene), dtype=np.uint32)
    else:
        ids = np.asarray(subset, dtype=np.uint32)
    total = len(ids)
    if total == 0:
        return _empty_projection(0)

    pos = scene.positions[ids].astype(np.float64)
    rot_w2c = camera.rotation
    p_cam = pos @ rot_w2c.T + camera.translation
    z = p_cam[:, 2]
    keep = z > NEAR_PLANE

    ids = ids[keep]
    p_cam = p_cam[keep]
    z = z[keep]
    if not len(ids):
        return _empty_projection(total)

    cov3d = covariances_3d(scene.scales[ids], scene.quaternions[ids])
    x, y = p_cam[:, 0], p_cam[:, 1]
    inv_z = 1.0 / z
    # Perspective Jacobian rows evaluated at each mean, pre-multiplied by the
    # view rotation: cov2d = (J W) cov3d (J W)^T + LOWPASS * I.
    jw = np.empty((len(ids), 2, 3), dtype=np.float64)
    jw[:, 0, :] = camera.fx * inv_z[:, None] * (rot_w2c[0] - (x * inv_z)[:, None] * rot_w2c[2])
    jw[:, 1, :] = camera.fy * inv_z[:, None] * (rot_w2c[1] - (y * inv_z)[:, None] * rot_w2c[2])
    cov = jw @ cov3d @ jw.transpose(0, 2, 1)
    a = cov[:, 0, 0] + LOWPASS
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + LOWPASS

    mean_u = camera.fx * x * inv_z + camera.cx
    mean_v = camera.fy * y * inv_z + camera.cy
    opac = 1.0 / (1.0 + np.exp(-scene.opacity_logits[ids].astype(np.float64)))

    det = a * c - b * b
    mid = 0.5 * (a + c)
    lam1 = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    finite = np.isfinite(a) & np.isfinite(b) & np.isfinite(c) & (det > 0) \
        & np.isfinite(mean_u) & np.isfinite(mean_v)
    # Reach of the alpha >= ALPHA_CUT region: q <= 2 ln(opacity / ALPHA_CUT).
    q_max = 2.0 * np.log(np.maximum(opac, 1e-12) / ALPHA_CUT)
    finite &= q_max > 0
    radius = np.sqrt(np.maximum(q_max, 0) * np.maximum(lam1, 0))

    with np.errstate(invalid="ignore"):
        x0 = np.maximum(np.floor(mean_u - radius), 0)
        x1 = np.minimum(np.ceil(mean_u + radius), camera.width - 1)
        y0 = np.maximum(np.floor(mean_v - radius), 0)
        y1 = np.minimum(np.ceil(mean_v + radius), camera.height - 1)
    keep = finite & (x0 <= x1) & (y0 <= y1)

    ids = ids[keep]
    order = np.lexsort((ids, z[keep]))
    ids = ids[order]
    a, b, c = a[keep][order], b[keep][order], c[keep][order]
    det = det[keep][order]
    inv_det = 1.0 / det
    conics = np.stack([c * inv_det, -b * inv_det, a * inv_det], axis=1)
    bboxes = np.stack([x0[keep][order], y0[keep][order],
                       x1[keep][order], y1[keep][order]], axis=1).astype(np.int32)

    return ProjectedGaussians(
        gaussian_ids=ids,
        means2d=np.stack([mean_u[keep][order], mean_v[keep][order]], axis=1),
        cov2d=np.stack([a, b, c], axis=1),
        conics=np.ascontiguousarray(conics),
        depths=z[keep][order],
        opacities=opac[keep][order],
        bboxes=np.ascontiguousarray(bboxes),
        n_culled=total - len(ids),
    )


def _empty_projection(n_culled: int) -> ProjectedGaussians:
    return ProjectedGaussians(
        gaussian_ids=np.empty(0, np.uint32),
        means2d=np.empty((0, 2), np.float64),
        cov2d=np.empty((0, 3), np.float64),
        conics=np.empty((0, 3), np.float64),
        depths=np.empty(0, np.float64),
        opacities=np.empty(0, np.float64),
        bboxes=np.empty((0, 4), np.int32),
        n_culled=n_culled,
    )


@dataclass
class ContributionStream:
    """Per-view contribution records in canonical order.

    Sorted by pixel linear index (row-major), then front-to-back within a
    pixel, so identical inputs produce identical streams regardless of
    backend threading.
    """

    pixels: np.ndarray        # (R,) uint32 linear index v * width + u
    gaussian_ids: np.ndarray  # (R,) uint32
    weights: np.ndarray       # (R,) float32
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.pixels)


def _bin_tiles(bboxes: np.ndarray, width: int, height: int):
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    tx0 = bboxes[:, 0] // TILE_SIZE
    ty0 = bboxes[:, 1] // TILE_SIZE
    tx1 = bboxes[:, 2] // TILE_SIZE
    ty1 = bboxes[:, 3] // TILE_SIZE
    wspan = (tx1 - tx0 + 1).astype(np.int64)
    counts = wspan * (ty1 - ty0 + 1)
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    wrep = np.repeat(wspan, counts)
    tx = local % wrep + np.repeat(tx0, counts)
    ty = local // wrep + np.repeat(ty0, counts)
    tile_id = (ty * tiles_x + tx).astype(np.int64)
    ranks = np.repeat(np.arange(len(bboxes), dtype=np.uint32), counts)
    order = np.argsort(tile_id, kind="stable")
    entries = ranks[order]
    per_tile = np.bincount(tile_id, minlength=tiles_x * tiles_y)
    tile_starts = np.concatenate([[0], np.cumsum(per_tile)]).astype(np.int64)
    return entries, tile_starts


def _blend(proj: ProjectedGaussians, width: int, height: int, *,
           want_records: bool, want_alpha: bool, threads: int, backend: str | None):
    backend = backend or active_backend()
    if len(proj) == 0:
        empty = np.empty(0, np.uint32)
        alpha = np.zeros((height, width), np.float32) if want_alpha else None
        return (empty, empty.copy(), np.empty(0, np.float32), alpha)
    if backend == "compiled":
        entries, tile_starts = _bin_tiles(proj.bboxes, width, height)
        pix, ranks, w, alpha = _kernels.blend_tiles(
            proj.means2d, proj.conics, proj.opacities, proj.bboxes,
            entries, tile_starts, width, height, TILE_SIZE,
            ALPHA_CUT, TAU_EMIT, T_STOP, threads, want_records, want_alpha)
    else:
        pix, ranks, w, alpha = _kernels_py.blend_splats(
            proj.means2d, proj.conics, proj.opacities, proj.bboxes,
            width, height, ALPHA_CUT, TAU_EMIT, T_STOP, want_records, want_alpha)
    if not want_records:
        return None, None, None, alpha
    order = np.lexsort((ranks, pix))
    return pix[order], ranks[order], w[order], alpha


def rasterize_contributions(proj: ProjectedGaussians, camera: Camera, *,
                            threads: int = 1,
                            backend: str | None = None) -> ContributionStream:
    """Compute the per-pixel sorted contribution stream for one view."""
    stream, _ = rasterize_view(proj, camera, threads=threads, backend=backend,
                               want_alpha=False)
    return stream


def rasterize_view(proj: ProjectedGaussians, camera: Camera, *,
                   threads: int = 1, backend: str | None = None,
                   want_alpha: bool = True):
    """Contribution stream plus (optionally) the accumulated-alpha image."""
    pix, ranks, w, alpha = _blend(proj, camera.width, camera.height,
                                  want_records=True, want_alpha=want_alpha,
                                  threads=threads, backend=backend)
    stream = ContributionStream(
        pixels=pix,
        gaussian_ids=proj.gaussian_ids[ranks] if len(ranks) else ranks,
        weights=w,
        width=camera.width,
        height=camera.height,
    )
    return stream, alpha


def render_alpha_mask(scene: GaussianScene, camera: Camera,
                      selected: np.ndarray, *, threads: int = 1,
                      backend: str | None = None) -> np.ndarray:
    """Accumulated-alpha image of a Gaussian subset; empty selection -> zeros."""
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        return np.zeros((camera.height, camera.width), dtype=np.float32)
    proj = project_gaussians(scene, camera, subset=np.sort(selected))
    _, _, _, alpha = _blend(proj, camera.width, camera.height,
                            want_records=False, want_alpha=True,
                            threads=threads, backend=backend)
    return alpha
