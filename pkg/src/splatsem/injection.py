"""Single-step indexed semantic injection.

Associates Gaussians to 2D masks wherever their contribution weight inside a
mask meets the contribution threshold, filters masks with too little 3D
support, and assigns each Gaussian the 2-byte index of its most influential
surviving mask.  "Most influential" aggregates by summing contribution
weights over all pixels and views, which rewards consistent multi-view
support; sums are accumulated in float64 in a fixed per-view order so the
resulting field is byte-identical across runs and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, EmptySceneError
from .rasterizer import ContributionStream
from .scene_io import SENTINEL, ViewSet

MAX_INDEX = 0xFFFE  # 0xFFFF is the unassigned sentinel


@dataclass(frozen=True)
class Thresholds:
    """The four pipeline thresholds: contribution, noise, IoU, feature."""

    tau_contrib: float
    tau_noise: int
    tau_iou: float
    tau_feat: float

    def __post_init__(self):
        if not (0.0 < self.tau_contrib < 1.0):
            raise ConfigError(f"tau_contrib must be in (0, 1), got {self.tau_contrib}")
        if self.tau_noise < 1:
            raise ConfigError(f"tau_noise must be >= 1, got {self.tau_noise}")
        if not (0.0 <= self.tau_iou <= 1.0):
            raise ConfigError(f"tau_iou must be in [0, 1], got {self.tau_iou}")
        if not (-1.0 <= self.tau_feat <= 1.0):
            raise ConfigError(f"tau_feat must be in [-1, 1], got {self.tau_feat}")


@dataclass
class MaskGaussianSets:
    """Per-mask Gaussian sets and the sparse (gaussian, mask) influence sums.

    The pair arrays are sorted by (mask, gaussian); ``mask_starts`` is the
    CSR row index over masks.
    """

    n_gaussians: int
    n_masks: int
    pair_gaussians: np.ndarray       # (P,) int64
    pair_masks: np.ndarray           # (P,) int64
    pair_influence: np.ndarray       # (P,) float64
    set_sizes: np.ndarray = field(init=False)   # (K,) int64, |G_k|
    mask_starts: np.ndarray = field(init=False)  # (K + 1,) int64

    def __post_init__(self):
        self.set_sizes = np.bincount(self.pair_masks, minlength=self.n_masks)
        self.mask_starts = np.concatenate([[0], np.cumsum(self.set_sizes)])

    def set_of(self, mask_id: int) -> np.ndarray:
        """Sorted Gaussian ids of one mask's set."""
        lo, hi = self.mask_starts[mask_id], self.mask_starts[mask_id + 1]
        return self.pair_gaussians[lo:hi]

    def influence_of(self, gaussian_id: int) -> dict[int, float]:
        """Mask -> accumulated weight for one Gaussian (test/debug helper)."""
        sel = self.pair_gaussians == gaussian_id
        return {
            int(m): float(w)
            for m, w in zip(self.pair_masks[sel], self.pair_influence[sel])
        }


class PairAccumulator:
    """Streams one view at a time so full record streams never coexist."""

    def __init__(self, views: ViewSet, tau_contrib: float):
        self.views = views
        self.tau_contrib = float(tau_contrib)
        self._keys: list[np.ndarray] = []
        self._sums: list[np.ndarray] = []
        self._seen = 0

    def add_view(self, view_index: int, stream: ContributionStream) -> None:
        mask_flat = self.views.masks[view_index].reshape(-1)
        mask_vals = mask_flat[stream.pixels]
        keep = (stream.weights >= self.tau_contrib) & (mask_vals > 0)
        if not keep.any():
            self._seen += 1
            return
        g = stream.gaussian_ids[keep].astype(np.int64)
        m = self.views.offsets[view_index] + mask_vals[keep].astype(np.int64) - 1
        w = stream.weights[keep].astype(np.float64)
        # One reduction per view: stable sort keeps the canonical record order
        # within each (mask, gaussian) key, so the float64 sums are
        # reproducible bit-for-bit.
        key = m * self._stride() + g
        order = np.argsort(key, kind="stable")
        key = key[order]
        w = w[order]
        starts = np.concatenate([[0], np.flatnonzero(np.diff(key)) + 1])
        self._keys.append(key[starts])
        self._sums.append(np.add.reduceat(w, starts))
        self._seen += 1

    def _stride(self) -> int:
        return 1 << 40  # masks and gaussians both far below 2^40

    def finalize(self, n_gaussians: int) -> MaskGaussianSets:
        if self._seen != len(self.views):
            raise ConfigError(
                f"accumulated {self._seen} views, expected {len(self.views)}"
            )
        if self._keys:
            keys = np.concatenate(self._keys)
            sums = np.concatenate(self._sums)
        else:
            keys = np.empty(0, dtype=np.int64)
            sums = np.empty(0, dtype=np.float64)
        # Global mask ids are view-local, so per-view keys never collide and
        # a plain sort suffices.
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        return MaskGaussianSets(
            n_gaussians=n_gaussians,
            n_masks=self.views.total_masks,
            pair_gaussians=keys % self._stride(),
            pair_masks=keys // self._stride(),
            pair_influence=sums[order],
        )


def build_mask_sets(streams, views: ViewSet, tau_contrib: float,
                    n_gaussians: int) -> MaskGaussianSets:
    """Associate Gaussians to masks from full contribution streams."""
    acc = PairAccumulator(views, tau_contrib)
    for view_index, stream in enumerate(streams):
        acc.add_view(view_index, stream)
    return acc.finalize(n_gaussians)


def filter_masks(sets: MaskGaussianSets, tau_noise: int) -> np.ndarray:
    """Surviving mask ids: those whose set holds at least tau_noise Gaussians."""
    surviving = np.flatnonzero(sets.set_sizes >= tau_noise)
    if surviving.size == 0:
        raise EmptySceneError(
            "3D-aware filtering removed every mask; lower tau_noise or "
            "tau_contrib (empty scene semantics)"
        )
    return surviving


@dataclass
class MaskIndexField:
    """Per-Gaussian 2-byte mask index; 0xFFFF means unassigned."""

    values: np.ndarray               # (N,) uint16

    def __post_init__(self):
        assert self.values.dtype == np.uint16

    def __len__(self) -> int:
        return len(self.values)

    @property
    def memory_bytes(self) -> int:
        return self.values.nbytes

    @property
    def assigned(self) -> np.ndarray:
        return self.values != SENTINEL


def assign_indices(sets: MaskGaussianSets, surviving: np.ndarray) -> MaskIndexField:
    """Assign each Gaussian its most influential surviving mask.

    Ties on summed influence break toward the smallest global mask id;
    Gaussians with no surviving influence keep the sentinel.
    """
    if surviving.size > 0xFFFF:
        raise CapacityError(
            f"{surviving.size} surviving masks exceed the 2-byte index budget"
        )
    if surviving.size and int(surviving.max()) > MAX_INDEX:
        raise CapacityError(
            f"surviving mask id {int(surviving.max())} exceeds the 2-byte "
            f"index budget (0xFFFF is reserved)"
        )
    is_surviving = np.zeros(sets.n_masks, dtype=bool)
    is_surviving[surviving] = True
    keep = is_surviving[sets.pair_masks]
    g = sets.pair_gaussians[keep]
    m = sets.pair_masks[keep]
    w = sets.pair_influence[keep]

    values = np.full(sets.n_gaussians, SENTINEL, dtype=np.uint16)
    if len(g):
        order = np.lexsort((m, -w, g))
        g, m = g[order], m[order]
        first = np.concatenate([[0], np.flatnonzero(np.diff(g)) + 1])
        values[g[first]] = m[first].astype(np.uint16)
    return MaskIndexField(values=values)
