"""Quantitative instruments: DSC, ASSD, slice-level present/absent DSC,
false-negative slice ratios, saved-effort calculators, bootstrap intervals.

Conventions (pinned by the oracle tests): two empty masks have DSC 1; ASSD is
undefined when either mask is empty; surfaces are 6-connectivity foreground
voxels; distances are Euclidean between voxel centers in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimMismatch, NoTargetSlices, TooFewValues, ZeroBaseline
from .volume_io import MaskVolume


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|); both-empty is 1, one-empty is 0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"dsc: shapes {a.shape} vs {b.shape}")
    na = int(a.sum())
    nb = int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / (na + nb)


def surface_points(mask: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Foreground voxels with a background 6-neighbor (or on the border),
    as physical (z, y, x) coordinates of voxel centers."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return np.zeros((0, 3))
    padded = np.pad(m, 1)
    interior = (
        padded[:-2, 1:-1, 1:-1] & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1] & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2] & padded[1:-1, 1:-1, 2:]
    )
    surf = m & ~interior
    coords = np.argwhere(surf).astype(np.float64)
    return coords * np.asarray(spacing, dtype=np.float64)


def assd(a: np.ndarray, b: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> float | None:
    """Average symmetric surface distance in physical units; ``None`` when
    either mask is empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"assd: shapes {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        return None
    sa = surface_points(a, spacing)
    sb = surface_points(b, spacing)
    d_ab = cKDTree(sb).query(sa)[0]
    d_ba = cKDTree(sa).query(sb)[0]
    return float((d_ab.sum() + d_ba.sum()) / (len(sa) + len(sb)))


def slice_dsc_partition(pred: MaskVolume, gt: MaskVolume, object_id: int):
    """Per-slice 2D DSC split into (present, absent) lists of (index, dsc)."""
    if pred.dims != gt.dims:
        raise DimMismatch(f"slice_dsc_partition: {pred.dims} vs {gt.dims}")
    present, absent = [], []
    pb = pred.binary(object_id)
    gb = gt.binary(object_id)
    for k in range(gt.dims[0]):
        value = dsc(pb[k], gb[k])
        (present if gb[k].any() else absent).append((k, value))
    return present, absent


def fnsr_pfnsr(pred: MaskVolume, gt: MaskVolume, object_id: int) -> tuple[float, float]:
    """False-negative slice ratio and its premature-termination subset.

    A false-negative slice is a target-present slice with an empty
    prediction. Premature slices are the consecutive false negatives at
    either end of the present range, walking inward until the first present
    slice with any predicted mask.
    """
    if pred.dims != gt.dims:
        raise DimMismatch(f"fnsr_pfnsr: {pred.dims} vs {gt.dims}")
    pb = pred.binary(object_id)
    gb = gt.binary(object_id)
    present = [k for k in range(gt.dims[0]) if gb[k].any()]
    if not present:
        raise NoTargetSlices(f"object {object_id} never present in ground truth")
    fn = [not pb[k].any() for k in present]
    n_fn = sum(fn)
    head = 0
    while head < len(fn) and fn[head]:
        head += 1
    if head == len(fn):
        premature = len(fn)
    else:
        tail = 0
        while tail < len(fn) and fn[-1 - tail]:
            tail += 1
        premature = head + tail
    return n_fn / len(present), premature / len(present)


def saved_effort(spv_base: float, spv_new: float, csr_base: float,
                 csr_new: float) -> tuple[float, float]:
    """Relative reduction of seconds-per-volume and corrected-slice ratio."""
    if spv_base <= 0 or csr_base <= 0:
        raise ZeroBaseline("baseline SPV and CSR must be positive")
    return (spv_base - spv_new) / spv_base, (csr_base - csr_new) / csr_base


def bootstrap_ci(values, resamples: int = 1000, seed: int = 0) -> tuple[float, float, float]:
    """Percentile bootstrap 95% interval of the mean; deterministic per seed."""
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size < 2:
        raise TooFewValues("bootstrap needs at least two values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, vals.size, size=(resamples, vals.size))
    means = vals[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(vals.mean()), float(lo), float(hi)


@dataclass
class MetricsReport:
    """Full per-volume metric set for one object."""

    object_id: int
    dsc_3d: float
    assd_3d: float | None
    assd_undefined: bool
    present_slice_dsc: list  # [(index, dsc)]
    absent_slice_dsc: list
    fnsr: float
    pfnsr: float
    bootstrap: tuple[float, float, float] | None = None

    @property
    def mean_present_dsc(self) -> float | None:
        vals = [v for _, v in self.present_slice_dsc]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_absent_dsc(self) -> float | None:
        vals = [v for _, v in self.absent_slice_dsc]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "dsc_3d": self.dsc_3d,
            "assd_3d": self.assd_3d,
            "assd_undefined": self.assd_undefined,
            "present_slice_dsc": [[int(i), float(v)] for i, v in self.present_slice_dsc],
            "absent_slice_dsc": [[int(i), float(v)] for i, v in self.absent_slice_dsc],
            "mean_present_dsc": self.mean_present_dsc,
            "mean_absent_dsc": self.mean_absent_dsc,
            "fnsr": self.fnsr,
            "pfnsr": self.pfnsr,
            "bootstrap": list(self.bootstrap) if self.bootstrap else None,
        }


def evaluate_volume(pred: MaskVolume, gt: MaskVolume, object_id: int,
                    spacing=None) -> MetricsReport:
    """All metrics of one predicted mask volume against ground truth."""
    if pred.dims != gt.dims:
        raise DimMismatch(f"evaluate_volume: {pred.dims} vs {gt.dims}")
    spacing = spacing if spacing is not None else gt.spacing
    pb = pred.binary(object_id)
    gb = gt.binary(object_id)
    a = assd(pb, gb, spacing)
    present, absent = slice_dsc_partition(pred, gt, object_id)
    fnsr, pfnsr = fnsr_pfnsr(pred, gt, object_id)
    return MetricsReport(
        object_id=object_id,
        dsc_3d=dsc(pb, gb),
        assd_3d=a,
        assd_undefined=a is None,
        present_slice_dsc=present,
        absent_slice_dsc=absent,
        fnsr=fnsr,
        pfnsr=pfnsr,
    )
