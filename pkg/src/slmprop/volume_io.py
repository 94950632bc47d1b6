"""Volumetric image / mask containers and the SVOL / SMSK binary formats.

File layout (little-endian), 36-byte header followed by the raw payload:

    magic[4] | version:u32 | dtype:u8 | modality:u8 | pad:u16
    | D:u32 | H:u32 | W:u32 | sz:f32 | sy:f32 | sx:f32 | payload

``SVOL`` files carry f32 intensities, ``SMSK`` files u8 labels, both in
(slice, row, col) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimMismatch, IoFailure, TruncatedFile, UnsupportedVersion

VOLUME_MAGIC = b"SVOL"
MASK_MAGIC = b"SMSK"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIBBHIIIfff")

_DTYPE_F32 = 0
_DTYPE_U8 = 1


class Modality(IntEnum):
    CT = 0
    MR = 1
    US = 2
    SYNTH = 3


@dataclass
class Volume:
    """Intensity stack with physical voxel spacing.

    ``voxels`` is float32 with shape (D, H, W); ``spacing`` is (sz, sy, sx)
    in physical units per voxel.
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: Modality = Modality.SYNTH

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise DimMismatch(f"volume voxels must be 3D, got shape {self.voxels.shape}")
        if any(s <= 0 for s in self.spacing):
            raise DimMismatch(f"spacing components must be positive, got {self.spacing}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.modality = Modality(self.modality)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class MaskVolume:
    """Per-slice integer labels; 0 is background, positive values are objects."""

    labels: np.ndarray
    object_ids: tuple[int, ...] = field(default=())
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 3:
            raise DimMismatch(f"mask labels must be 3D, got shape {self.labels.shape}")
        if not self.object_ids:
            present = np.unique(self.labels)
            present = present[present > 0]
            self.object_ids = tuple(int(v) for v in present) or (1,)
        else:
            self.object_ids = tuple(int(v) for v in self.object_ids)
        if any(v <= 0 for v in self.object_ids):
            raise DimMismatch(f"object ids must be positive, got {self.object_ids}")
        allowed = set(self.object_ids) | {0}
        present = set(int(v) for v in np.unique(self.labels))
        if not present <= allowed:
            raise DimMismatch(
                f"labels contain values {sorted(present - allowed)} outside object_ids"
            )
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def num_objects(self) -> int:
        return len(self.object_ids)

    def binary(self, object_id: int) -> np.ndarray:
        """Boolean (D, H, W) mask for one object id."""
        return self.labels == object_id


def _read_header(raw: bytes, expect_magic: bytes, path) -> tuple:
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: file shorter than the 36-byte header")
    magic, version, dtype, modality, _pad, d, h, w, sz, sy, sx = _HEADER.unpack_from(raw)
    if magic != expect_magic:
        raise BadMagic(f"{path}: magic field is {magic!r}, expected {expect_magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: version field is {version}, expected {FORMAT_VERSION}")
    return dtype, modality, (d, h, w), (sz, sy, sx)


def _read_payload(raw: bytes, dims, np_dtype, path) -> np.ndarray:
    count = int(np.prod(dims))
    expected = _HEADER.size + count * np.dtype(np_dtype).itemsize
    if len(raw) < expected:
        raise TruncatedFile(
            f"{path}: payload field holds {len(raw) - _HEADER.size} bytes, "
            f"header promises {expected - _HEADER.size}"
        )
    flat = np.frombuffer(raw, dtype=np_dtype, count=count, offset=_HEADER.size)
    return flat.reshape(dims).copy()


def load_volume(path) -> Volume:
    """Read an SVOL file."""
    raw = Path(path).read_bytes()
    dtype, modality, dims, spacing = _read_header(raw, VOLUME_MAGIC, path)
    if dtype != _DTYPE_F32:
        raise UnsupportedVersion(f"{path}: dtype field {dtype} not valid for a volume")
    voxels = _read_payload(raw, dims, "<f4", path)
    return Volume(voxels, spacing, Modality(modality))


def save_volume(volume: Volume, path) -> None:
    """Write an SVOL file; round-trips f32 payloads bit-exactly."""
    d, h, w = volume.dims
    header = _HEADER.pack(
        VOLUME_MAGIC, FORMAT_VERSION, _DTYPE_F32, int(volume.modality), 0,
        d, h, w, *volume.spacing,
    )
    payload = volume.voxels.astype("<f4", copy=False).tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_mask(path) -> MaskVolume:
    """Read an SMSK file; object ids are derived from the labels present."""
    raw = Path(path).read_bytes()
    dtype, _modality, dims, spacing = _read_header(raw, MASK_MAGIC, path)
    if dtype != _DTYPE_U8:
        raise UnsupportedVersion(f"{path}: dtype field {dtype} not valid for a mask")
    labels = _read_payload(raw, dims, np.uint8, path)
    return MaskVolume(labels, spacing=spacing)


def save_mask(mask: MaskVolume, path) -> None:
    """Write an SMSK file."""
    d, h, w = mask.dims
    header = _HEADER.pack(
        MASK_MAGIC, FORMAT_VERSION, _DTYPE_U8, int(Modality.SYNTH), 0,
        d, h, w, *mask.spacing,
    )
    try:
        Path(path).write_bytes(header + mask.labels.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


CT_CLIP_RANGE = (-1024.0, 2000.0)


def normalize_volume(volume: Volume) -> Volume:
    """Min-max rescale intensities to [0, 255] over the whole volume.

    CT volumes are first clipped to ``CT_CLIP_RANGE``. A constant volume maps
    to all zeros.
    """
    vox = volume.voxels.astype(np.float64)
    if volume.modality == Modality.CT:
        vox = np.clip(vox, *CT_CLIP_RANGE)
    lo = float(vox.min())
    hi = float(vox.max())
    if hi > lo:
        vox = (vox - lo) / (hi - lo) * 255.0
    else:
        vox = np.zeros_like(vox)
    return Volume(vox.astype(np.float32), volume.spacing, volume.modality)


def resize_slice(slice2d: np.ndarray, target: tuple[int, int], *, labels: bool = False) -> np.ndarray:
    """Resize one 2D slice.

    Intensities use bilinear interpolation, labels nearest-neighbor; both
    sample at pixel centers (align-corners-false). Identity targets return
    the input unchanged.
    """
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise DimMismatch(f"resize target must be >= 1, got {(th, tw)}")
    arr = np.asarray(slice2d)
    h, w = arr.shape
    if (h, w) == (th, tw):
        return arr.copy()

    if labels:
        yi = np.clip(np.floor((np.arange(th) + 0.5) * (h / th)).astype(int), 0, h - 1)
        xi = np.clip(np.floor((np.arange(tw) + 0.5) * (w / tw)).astype(int), 0, w - 1)
        return arr[yi[:, None], xi[None, :]].copy()

    # source coordinates of each output pixel center
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    a = arr.astype(np.float64)
    top = a[y0c[:, None], x0c[None, :]] * (1 - fx)[None, :] + a[y0c[:, None], x1c[None, :]] * fx[None, :]
    bot = a[y1c[:, None], x0c[None, :]] * (1 - fx)[None, :] + a[y1c[:, None], x1c[None, :]] * fx[None, :]
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out.astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)
