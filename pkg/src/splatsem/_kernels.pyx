# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Tiled alpha-blending contribution kernel.

One parallel work unit per 16x16 tile; every tile owns a growable record
buffer so thread scheduling cannot reorder output (buffers are concatenated
in tile index order afterwards).  All blending math runs in float64; emitted
weights are narrowed to float32.
"""

from cython.parallel cimport prange
from libc.math cimport exp
from libc.stdlib cimport free, malloc, realloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef struct Rec:
    unsigned int pixel
    unsigned int rank
    float weight


def blend_tiles(double[:, ::1] means,
                double[:, ::1] conics,
                double[::1] opacities,
                int[:, ::1] bboxes,
                unsigned int[::1] tile_entries,
                long long[::1] tile_starts,
                int width, int height, int tile_size,
                double alpha_cut, double tau_emit, double t_stop,
                int n_threads, bint want_records, bint want_alpha):
    """Blend pre-binned Gaussians front-to-back per pixel.

    ``tile_entries``/``tile_starts`` form a CSR layout of per-tile Gaussian
    indices (into the depth-sorted arrays).  Returns
    ``(pixels, ranks, weights, alpha_image)``; the image is ``None`` unless
    requested.
    """
    cdef int tiles_x = (width + tile_size - 1) // tile_size
    cdef int tiles_y = (height + tile_size - 1) // tile_size
    cdef int n_tiles = tiles_x * tiles_y

    cdef Rec **bufs = NULL
    cdef long long *used = NULL
    cdef long long *caps = NULL
    cdef float[:, ::1] alpha_img
    cdef bint have_alpha = want_alpha

    alpha_np = np.zeros((height, width), dtype=np.float32) if want_alpha \
        else np.zeros((1, 1), dtype=np.float32)
    alpha_img = alpha_np

    if want_records:
        bufs = <Rec **>malloc(n_tiles * sizeof(Rec *))
        used = <long long *>malloc(n_tiles * sizeof(long long))
        caps = <long long *>malloc(n_tiles * sizeof(long long))
        if bufs == NULL or used == NULL or caps == NULL:
            free(bufs); free(used); free(caps)
            raise MemoryError()

    cdef int t, u, v, x0, y0, x1, y1, px, py
    cdef long long e, start, stop, cap, cnt
    cdef unsigned int i
    cdef double T, dx, dy, q, a, w
    cdef Rec *buf
    cdef Rec *grown
    cdef bint failed = 0

    with nogil:
        for t in prange(n_tiles, schedule="dynamic", num_threads=n_threads):
            start = tile_starts[t]
            stop = tile_starts[t + 1]
            if want_records:
                bufs[t] = NULL
                used[t] = 0
                caps[t] = 0
            if start == stop:
                continue
            x0 = (t % tiles_x) * tile_size
            y0 = (t // tiles_x) * tile_size
            x1 = x0 + tile_size
            y1 = y0 + tile_size
            if x1 > width:
                x1 = width
            if y1 > height:
                y1 = height

            buf = NULL
            cap = 0
            cnt = 0
            for py in range(y0, y1):
                for px in range(x0, x1):
                    T = 1.0
                    for e in range(start, stop):
                        i = tile_entries[e]
                        if px < bboxes[i, 0] or px > bboxes[i, 2]:
                            continue
                        if py < bboxes[i, 1] or py > bboxes[i, 3]:
                            continue
                        dx = px - means[i, 0]
                        dy = py - means[i, 1]
                        q = conics[i, 0] * dx * dx \
                            + 2.0 * conics[i, 1] * dx * dy \
                            + conics[i, 2] * dy * dy
                        if q < 0.0:
                            q = 0.0
                        a = opacities[i] * exp(-0.5 * q)
                        if a > 0.99:
                            a = 0.99
                        if a < alpha_cut:
                            continue
                        w = a * T
                        if want_records and w >= tau_emit:
                            if cnt == cap:
                                cap = 256 if cap == 0 else cap * 2
                                grown = <Rec *>realloc(buf, cap * sizeof(Rec))
                                if grown == NULL:
                                    failed = 1
                                    break
                                buf = grown
                            buf[cnt].pixel = <unsigned int>(py * width + px)
                            buf[cnt].rank = i
                            buf[cnt].weight = <float>w
                            cnt = cnt + 1
                        T = T * (1.0 - a)
                        if T < t_stop:
                            break
                    if failed:
                        break
                    if have_alpha:
                        alpha_img[py, px] = <float>(1.0 - T)
                if failed:
                    break
            if want_records:
                bufs[t] = buf
                used[t] = cnt
                caps[t] = cap
            elif buf != NULL:
                free(buf)

    cdef long long total = 0
    cdef long long off
    cdef unsigned int[::1] out_pix
    cdef unsigned int[::1] out_rank
    cdef float[::1] out_w
    cdef long long j

    if not want_records:
        if failed:
            raise MemoryError()
        return None, None, None, (alpha_np if want_alpha else None)

    for t in range(n_tiles):
        total += used[t]
    pix_np = np.empty(total, dtype=np.uint32)
    rank_np = np.empty(total, dtype=np.uint32)
    w_np = np.empty(total, dtype=np.float32)
    if total:
        out_pix = pix_np
        out_rank = rank_np
        out_w = w_np
        off = 0
        for t in range(n_tiles):
            buf = bufs[t]
            for j in range(used[t]):
                out_pix[off] = buf[j].pixel
                out_rank[off] = buf[j].rank
                out_w[off] = buf[j].weight
                off += 1
    for t in range(n_tiles):
        if bufs[t] != NULL:
            free(bufs[t])
    free(bufs); free(used); free(caps)
    if failed:
        raise MemoryError()
    return pix_np, rank_np, w_np, (alpha_np if want_alpha else None)
