"""Loaders and writers for every external artifact.

Formats:
  * scene        splat PLY, ``binary_little_endian``, one ``vertex`` element
  * cameras      JSON array of pinhole records with row-major world_to_camera
  * masks        ``<view_id>.png``, 16-bit grayscale, 0 = background,
                 value v > 0 encodes local mask index v - 1
  * features     ``SPLF`` binary: magic, u32 rows, u32 dim, f32 row-major data
  * queries      JSON ``{"task": ..., "entries": [{"name", "embedding"}]}``
  * index/cluster fields   ``SPIX`` / ``SPCL`` binary: magic, u32 N, N x u16
  * contribution records   ``SPCW`` binary: magic, u32 count,
                           count x (u32 pixel, u32 gaussian, f32 weight)

All loaders are pure functions; everything they return is treated as
immutable by the rest of the pipeline.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError

SENTINEL = np.uint16(0xFFFF)

REQUIRED_PLY_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {v: k for k, v in reversed(_PLY_DTYPES.items())}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass
class GaussianScene:
    """In-memory splat scene.

    ``raw`` holds the full PLY vertex table (unknown properties included) so
    that save -> load round-trips are bit-exact; the typed views below are
    what the pipeline reads.  Scales are stored as logarithms, opacity as a
    pre-sigmoid logit, per splat-PLY convention.
    """

    raw: np.ndarray                     # structured array, one row per Gaussian
    positions: np.ndarray               # (N, 3) float32
    scales: np.ndarray                  # (N, 3) float32, log-scale
    quaternions: np.ndarray             # (N, 4) float32, unit (w, x, y, z)
    opacity_logits: np.ndarray          # (N,) float32
    color_dc: np.ndarray                # (N, 3) float32

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def opacities(self) -> np.ndarray:
        return _sigmoid(self.opacity_logits)

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            raw=self.raw.copy(),
            positions=self.positions.copy(),
            scales=self.scales.copy(),
            quaternions=self.quaternions.copy(),
            opacity_logits=self.opacity_logits.copy(),
            color_dc=self.color_dc.copy(),
        )


def scene_from_arrays(positions, scales, quaternions, opacity_logits, color_dc) -> GaussianScene:
    """Assemble a scene from plain arrays (used by the synthetic generator)."""
    n = len(positions)
    fields = [(p, "<f4") for p in REQUIRED_PLY_PROPS]
    raw = np.zeros(n, dtype=np.dtype(fields))
    pos = np.asarray(positions, dtype=np.float32)
    sc = np.asarray(scales, dtype=np.float32)
    qn = np.asarray(quaternions, dtype=np.float64)
    qn = (qn / np.linalg.norm(qn, axis=1, keepdims=True)).astype(np.float32)
    op = np.asarray(opacity_logits, dtype=np.float32)
    dc = np.asarray(color_dc, dtype=np.float32)
    for i, axis in enumerate("xyz"):
        raw[axis] = pos[:, i]
    for i in range(3):
        raw[f"scale_{i}"] = sc[:, i]
        raw[f"f_dc_{i}"] = dc[:, i]
    for i in range(4):
        raw[f"rot_{i}"] = qn[:, i]
    raw["opacity"] = op
    return GaussianScene(raw, pos, sc, qn, op, dc)


def _parse_ply_header(fh, path):
    line = fh.readline().strip()
    if line != b"ply":
        raise FormatError(f"{path}: not a PLY file")
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"{path}: truncated PLY header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise FormatError(f"{path}: list properties are not supported")
            if tokens[1] not in _PLY_DTYPES:
                raise FormatError(f"{path}: unknown property type '{tokens[1]}'")
            props.append((tokens[2], "<" + _PLY_DTYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise FormatError(f"{path}: expected binary_little_endian, got {fmt}")
    if count is None:
        raise FormatError(f"{path}: no vertex element declared")
    return count, props


def load_scene(path) -> GaussianScene:
    """Read a splat PLY into a :class:`GaussianScene`.

    Quaternions are normalized on load; unknown properties are kept in
    ``raw`` and written back verbatim by :func:`save_scene`.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _parse_ply_header(fh, path)
        names = [p[0] for p in props]
        for req in REQUIRED_PLY_PROPS:
            if req not in names:
                raise FormatError(f"{path}: missing required property '{req}'")
        dtype = np.dtype(props)
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise FormatError(
                f"{path}: expected {count * dtype.itemsize} payload bytes, "
                f"found {len(payload)}"
            )
        raw = np.frombuffer(payload, dtype=dtype).copy()

    for name in REQUIRED_PLY_PROPS:
        col = raw[name]
        bad = np.flatnonzero(~np.isfinite(col.astype(np.float64)))
        if bad.size:
            raise DataError(f"{path}: non-finite '{name}' at element {int(bad[0])}")

    positions = np.stack([raw["x"], raw["y"], raw["z"]], axis=1).astype(np.float32)
    scales = np.stack([raw[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float32)
    quats = np.stack([raw[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    if len(raw):
        norms = np.linalg.norm(quats, axis=1)
        bad = np.flatnonzero(norms < 1e-8)
        if bad.size:
            raise DataError(f"{path}: zero-norm quaternion at element {int(bad[0])}")
        # Skip the division for quaternions already unit within 1e-6: keeps
        # normalization idempotent at the bit level across save/load cycles.
        need = np.abs(norms - 1.0) > 1e-6
        quats[need] /= norms[need, None]
    quats = quats.astype(np.float32)
    for i in range(4):
        raw[f"rot_{i}"] = quats[:, i]

    return GaussianScene(
        raw=raw,
        positions=positions,
        scales=scales,
        quaternions=quats,
        opacity_logits=np.asarray(raw["opacity"], dtype=np.float32).copy(),
        color_dc=np.stack([raw[f"f_dc_{i}"] for i in range(3)], axis=1).astype(np.float32),
    )


def save_scene(scene: GaussianScene, path) -> None:
    """Write a scene back to splat PLY, preserving unknown properties."""
    path = Path(path)
    raw = scene.raw.copy()
    pos = scene.positions.astype(np.float32)
    sc = scene.scales.astype(np.float32)
    qn = scene.quaternions.astype(np.float32)
    dc = scene.color_dc.astype(np.float32)
    for i, axis in enumerate("xyz"):
        raw[axis] = pos[:, i]
    for i in range(3):
        raw[f"scale_{i}"] = sc[:, i]
        raw[f"f_dc_{i}"] = dc[:, i]
    for i in range(4):
        raw[f"rot_{i}"] = qn[:, i]
    raw["opacity"] = scene.opacity_logits.astype(np.float32)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(raw)}"]
    for name in raw.dtype.names:
        kind = _PLY_NAMES[raw.dtype[name].str.lstrip("<>|=")]
        header.append(f"property {kind} {name}")
    header.append("end_header\n")
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(raw.tobytes())


@dataclass(frozen=True)
class Camera:
    view_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray          # (4, 4) float64, row-major rigid transform
    mask_count: int | None = None        # declared local mask count, if any

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]


def _validate_camera(cam: Camera) -> None:
    r = cam.rotation
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-5):
        raise DataError(f"camera {cam.view_id}: rotation block not orthonormal")
    if cam.fx <= 0 or cam.fy <= 0:
        raise DataError(f"camera {cam.view_id}: focal lengths must be positive")
    if not (0 <= cam.cx < cam.width and 0 <= cam.cy < cam.height):
        raise DataError(f"camera {cam.view_id}: principal point outside image")


def load_cameras(path) -> list[Camera]:
    path = Path(path)
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise FormatError(f"{path}: camera file must be a JSON array")
    cameras = []
    for rec in records:
        try:
            w2c = np.asarray(rec["world_to_camera"], dtype=np.float64).reshape(4, 4)
            cam = Camera(
                view_id=int(rec["view_id"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                fx=float(rec["fx"]),
                fy=float(rec["fy"]),
                cx=float(rec["cx"]),
                cy=float(rec["cy"]),
                world_to_camera=w2c,
                mask_count=int(rec["mask_count"]) if "mask_count" in rec else None,
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: bad camera record ({exc})") from exc
        _validate_camera(cam)
        cameras.append(cam)
    cameras.sort(key=lambda c: c.view_id)
    if len({c.view_id for c in cameras}) != len(cameras):
        raise DataError(f"{path}: duplicate view_id")
    return cameras


def save_cameras(cameras: list[Camera], path) -> None:
    records = []
    for cam in cameras:
        rec = {
            "view_id": cam.view_id,
            "width": cam.width,
            "height": cam.height,
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "world_to_camera": [float(v) for v in cam.world_to_camera.reshape(-1)],
        }
        if cam.mask_count is not None:
            rec["mask_count"] = cam.mask_count
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=1))


def load_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("I", "I;16", "L", "P"):
        raise FormatError(f"{path}: expected a grayscale mask PNG, got mode {img.mode}")
    arr = np.asarray(img)
    if arr.dtype not in (np.uint8, np.uint16, np.int32):
        raise FormatError(f"{path}: unsupported mask dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() > 0xFFFF:
        raise DataError(f"{path}: mask values outside the 16-bit range")
    return arr.astype(np.uint16)


def save_mask_png(mask: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(mask, dtype=np.uint16)
    Image.fromarray(arr, mode="I;16").save(path)


@dataclass
class ViewSet:
    """Cameras plus per-view mask images and the global mask numbering.

    Global mask ids are contiguous: view ``i`` owns ids
    ``offsets[i] .. offsets[i] + counts[i] - 1`` where the local index is the
    mask pixel value minus one.
    """

    cameras: list[Camera]
    masks: list[np.ndarray]              # uint16 H x W per view, aligned with cameras
    counts: np.ndarray                   # per-view local mask count
    offsets: np.ndarray                  # per-view global id offset

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def total_masks(self) -> int:
        return int(self.offsets[-1] + self.counts[-1]) if len(self.cameras) else 0

    def global_mask_id(self, view_index: int, local_index: int) -> int:
        return int(self.offsets[view_index]) + local_index


def load_views(camera_path, mask_dir) -> ViewSet:
    """Load cameras and their mask images, assigning global mask numbering."""
    cameras = load_cameras(camera_path)
    mask_dir = Path(mask_dir)
    masks = []
    counts = []
    for cam in cameras:
        mask_path = mask_dir / f"{cam.view_id}.png"
        if not mask_path.exists():
            raise DataError(f"missing mask file for view {cam.view_id}: {mask_path}")
        mask = load_mask_png(mask_path)
        if mask.shape != (cam.height, cam.width):
            raise DataError(
                f"view {cam.view_id}: mask is {mask.shape[1]}x{mask.shape[0]} "
                f"but camera declares {cam.width}x{cam.height}"
            )
        local = int(mask.max())
        if cam.mask_count is not None:
            if local > cam.mask_count:
                raise DataError(
                    f"view {cam.view_id}: mask value {local} exceeds declared "
                    f"count {cam.mask_count}"
                )
            local = cam.mask_count
        masks.append(mask)
        counts.append(local)
    counts = np.asarray(counts, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]) if len(counts) else np.zeros(0, np.int64)
    return ViewSet(cameras=cameras, masks=masks, counts=counts, offsets=offsets)


@dataclass
class FeatureTable:
    rows: np.ndarray                     # (K, D) float32

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def normalized(self) -> np.ndarray:
        norms = np.linalg.norm(self.rows.astype(np.float64), axis=1, keepdims=True)
        return self.rows.astype(np.float64) / norms


FEATURE_MAGIC = b"SPLF"


def load_features(path) -> FeatureTable:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    k, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * k * d
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    rows = np.frombuffer(blob, dtype="<f4", offset=12).reshape(k, d).copy()
    bad = np.flatnonzero(~np.isfinite(rows).all(axis=1))
    if bad.size:
        raise DataError(f"{path}: non-finite feature at row {int(bad[0])}")
    bad = np.flatnonzero(np.linalg.norm(rows, axis=1) == 0)
    if bad.size:
        raise DataError(f"{path}: zero-norm feature at row {int(bad[0])}")
    return FeatureTable(rows=rows)


def save_features(table: FeatureTable | np.ndarray, path) -> None:
    rows = table.rows if isinstance(table, FeatureTable) else np.asarray(table)
    rows = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


QUERY_TASKS = ("object_selection", "semantic_segmentation")


@dataclass
class QuerySet:
    task: str
    names: list[str]
    embeddings: np.ndarray               # (Q, D) float64, rows L2-normalized

    def __len__(self) -> int:
        return len(self.names)


def load_queries(path) -> QuerySet:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    task = doc.get("task")
    if task not in QUERY_TASKS:
        raise FormatError(f"{path}: task must be one of {QUERY_TASKS}, got {task!r}")
    names = []
    vecs = []
    for entry in doc.get("entries", []):
        names.append(str(entry["name"]))
        vecs.append(np.asarray(entry["embedding"], dtype=np.float64))
    if not names:
        raise DataError(f"{path}: query file has no entries")
    emb = np.stack(vecs)
    if not np.isfinite(emb).all():
        raise DataError(f"{path}: non-finite query embedding")
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DataError(f"{path}: zero-norm query embedding")
    return QuerySet(task=task, names=names, embeddings=emb / norms)


def save_queries(task: str, names: list[str], embeddings: np.ndarray, path) -> None:
    entries = [
        {"name": n, "embedding": [float(v) for v in e]}
        for n, e in zip(names, embeddings)
    ]
    Path(path).write_text(json.dumps({"task": task, "entries": entries}))


def _load_u16_field(path, magic: bytes) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != magic:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) != 8 + 2 * n:
        raise FormatError(f"{path}: expected {8 + 2 * n} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<u2", offset=8).copy()


def _save_u16_field(values: np.ndarray, path, magic: bytes) -> None:
    values = np.ascontiguousarray(values, dtype="<u2")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(values)))
        fh.write(values.tobytes())


def load_index_field(path) -> np.ndarray:
    return _load_u16_field(path, b"SPIX")


def save_index_field(values: np.ndarray, path) -> None:
    _save_u16_field(values, path, b"SPIX")


def load_cluster_field(path) -> np.ndarray:
    return _load_u16_field(path, b"SPCL")


def save_cluster_field(values: np.ndarray, path) -> None:
    _save_u16_field(values, path, b"SPCL")


def save_contribution_records(pixels, gaussian_ids, weights, path) -> None:
    n = len(pixels)
    rec = np.zeros(n, dtype=np.dtype([("pixel", "<u4"), ("gid", "<u4"), ("w", "<f4")]))
    rec["pixel"] = pixels
    rec["gid"] = gaussian_ids
    rec["w"] = weights
    with open(path, "wb") as fh:
        fh.write(b"SPCW")
        fh.write(struct.pack("<I", n))
        fh.write(rec.tobytes())


def load_contribution_records(path):
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != b"SPCW":
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected b'SPCW'")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) != 8 + 12 * n:
        raise FormatError(f"{path}: expected {8 + 12 * n} bytes, found {len(blob)}")
    rec = np.frombuffer(blob, dtype=np.dtype([("pixel", "<u4"), ("gid", "<u4"), ("w", "<f4")]), offset=8)
    return rec["pixel"].copy(), rec["gid"].copy(), rec["w"].copy()
