"""Pure-numpy fallback for the compiled blending kernel.

Splat-major instead of tile-major: Gaussians are visited once in global
front-to-back order and vectorized over their pixel bounding boxes, which
yields the exact same per-pixel blending sequence as the tiled kernel (a
pixel's transmittance only ever depends on Gaussians earlier in that order).
"""

from __future__ import annotations

import numpy as np


def blend_splats(means, conics, opacities, bboxes, width, height,
                 alpha_cut, tau_emit, t_stop, want_records, want_alpha):
    """Blend depth-sorted Gaussians; returns ``(pixels, ranks, weights, alpha)``.

    Record order is splat-major here (the caller canonicalizes), values match
    the compiled kernel to float64 rounding.
    """
    transmittance = np.ones((height, width), dtype=np.float64)
    pix_parts: list[np.ndarray] = []
    rank_parts: list[np.ndarray] = []
    w_parts: list[np.ndarray] = []

    for i in range(len(means)):
        x0, y0, x1, y1 = bboxes[i]
        sub = transmittance[y0:y1 + 1, x0:x1 + 1]
        dx = np.arange(x0, x1 + 1, dtype=np.float64) - means[i, 0]
        dy = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - means[i, 1]
        q = conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * (dx * dy) \
            + conics[i, 2] * (dy * dy)
        np.maximum(q, 0.0, out=q)
        alpha = opacities[i] * np.exp(-0.5 * q)
        np.minimum(alpha, 0.99, out=alpha)
        active = (alpha >= alpha_cut) & (sub >= t_stop)
        if not active.any():
            continue
        if want_records:
            w = np.where(active, alpha * sub, 0.0)
            emit = w >= tau_emit
            if emit.any():
                yy, xx = np.nonzero(emit)
                pix_parts.append(((yy + y0) * width + (xx + x0)).astype(np.uint32))
                rank_parts.append(np.full(yy.shape, i, dtype=np.uint32))
                w_parts.append(w[emit].astype(np.float32))
        sub[active] *= 1.0 - alpha[active]

    if want_records:
        if pix_parts:
            pixels = np.concatenate(pix_parts)
            ranks = np.concatenate(rank_parts)
            weights = np.concatenate(w_parts)
        else:
            pixels = np.empty(0, dtype=np.uint32)
            ranks = np.empty(0, dtype=np.uint32)
            weights = np.empty(0, dtype=np.float32)
    else:
        pixels = ranks = weights = None
    alpha_img = (1.0 - transmittance).astype(np.float32) if want_alpha else None
    return pixels, ranks, weights, alpha_img
