"""Synthetic labeled volumes reproducing the propagation failure scenarios:
a look-alike neighbor appearing where the target ends (over-propagation bait),
disappearance, gap-then-reappearance, and intermittent presence.

Targets are superellipses whose center and radii drift by a seeded random
walk; cross-section area tapers smoothly toward the ends of each presence
interval. The distractor is an unlabeled structure of near-target intensity
abutting the target's final footprint on the slices just past its end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import SpecInvalid
from .volume_io import MaskVolume, Modality, Volume


class ScenarioKind(str, Enum):
    SIMPLE_BLOB = "SimpleBlob"
    ADJACENT_DISTRACTOR = "AdjacentDistractor"
    GAP_REAPPEAR = "GapReappear"
    INTERMITTENT = "Intermittent"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    dims: tuple[int, int, int] = (24, 64, 64)
    object_radius_range: tuple[float, float] = (5.0, 9.0)
    distractor_contrast: float = 0.05
    present_ranges: tuple[tuple[int, int], ...] = ((6, 17),)
    seed: int = 0

    def validate(self) -> None:
        d = self.dims[0]
        last = -1
        if not self.present_ranges:
            raise SpecInvalid("present_ranges must not be empty")
        for a, b in self.present_ranges:
            if a > b:
                raise SpecInvalid(f"interval ({a}, {b}) reversed")
            if a <= last:
                raise SpecInvalid("present_ranges must be sorted and disjoint")
            if a < 0 or b >= d:
                raise SpecInvalid(f"interval ({a}, {b}) outside [0, {d - 1}]")
            last = b
        rmin, rmax = self.object_radius_range
        if not (1.5 <= rmin <= rmax):
            raise SpecInvalid(f"object_radius_range {self.object_radius_range} invalid")
        if not 0.0 <= self.distractor_contrast <= 1.0:
            raise SpecInvalid("distractor_contrast must be in [0, 1]")

    @property
    def present_slices(self) -> list[int]:
        out = []
        for a, b in self.present_ranges:
            out.extend(range(a, b + 1))
        return out


@dataclass
class LabeledCase:
    volume: Volume
    mask: MaskVolume
    spec: ScenarioSpec


def _taper(offset: int, length: int) -> float:
    """Presence envelope: the blob grows in over the first slices of an
    interval and shrinks to a small remnant over the last ones. Per-step
    radius factor 0.79 keeps adjacent areas within the 50% smoothness bound."""
    edge = min(offset, length - 1 - offset)
    steps = min(3, max(1, length // 3))
    return 0.79 ** max(0, steps - edge)


def _superellipse(h: int, w: int, cy: float, cx: float, ry: float, rx: float, p: float):
    yy, xx = np.mgrid[0:h, 0:w]
    s = (np.abs((yy - cy) / ry) ** p + np.abs((xx - cx) / rx) ** p)
    return s


class _BlobTrack:
    """Per-slice center/radius/exponent states of one drifting blob."""

    def __init__(self, rng, spec: ScenarioSpec, x_bounds=None):
        d, h, w = spec.dims
        rmin, rmax = spec.object_radius_range
        self.r0 = float(rng.uniform(rmin, rmax))
        self.p = float(rng.uniform(1.8, 3.0))
        margin = self.r0 * 1.4 + 1
        xlo, xhi = x_bounds if x_bounds else (margin, w - margin)
        xlo = max(xlo, margin)
        xhi = min(xhi, w - margin)
        cy = float(rng.uniform(margin, h - margin))
        cx = float(rng.uniform(xlo, xhi))
        self.states: dict[int, tuple[float, float, float, float]] = {}
        ry_mul, rx_mul = 1.0, 1.0
        for a, b in spec.present_ranges:
            length = b - a + 1
            for k in range(a, b + 1):
                env = _taper(k - a, length)
                ry = max(2.0, self.r0 * env * ry_mul)
                rx = max(2.0, self.r0 * env * rx_mul)
                self.states[k] = (cy, cx, ry, rx)
                cy = float(np.clip(cy + rng.normal(0, 0.6), margin, h - margin))
                cx = float(np.clip(cx + rng.normal(0, 0.6), xlo, xhi))
                ry_mul = float(np.clip(ry_mul * (1 + rng.normal(0, 0.02)), 0.85, 1.18))
                rx_mul = float(np.clip(rx_mul * (1 + rng.normal(0, 0.02)), 0.85, 1.18))
        # remember where the blob ended for distractor placement
        last = spec.present_ranges[-1][1]
        self.final_state = self.states[last]


def _paint(vol_slice, cy, cx, ry, rx, p, level):
    """Blend a superellipse of the given intensity with a thin soft edge."""
    h, w = vol_slice.shape
    s = _superellipse(h, w, cy, cx, ry, rx, p)
    weight = np.clip((1.3 - s) / 0.3, 0.0, 1.0)
    np.copyto(vol_slice, vol_slice * (1 - weight) + level * weight)
    return s <= 1.0


def generate_case(spec: ScenarioSpec) -> LabeledCase:
    """Deterministic volume+mask for one scenario spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, h, w = spec.dims

    base = rng.uniform(25, 55)
    noise = gaussian_filter(rng.normal(0, 1, size=(d, h, w)), sigma=(1.0, 2.0, 2.0))
    noise *= rng.uniform(6, 14) / max(noise.std(), 1e-9)
    vol = np.full((d, h, w), base) + noise

    target_level = rng.uniform(170, 220)
    track = _BlobTrack(rng, spec, None)
    labels = np.zeros((d, h, w), dtype=np.uint8)
    for k, (cy, cx, ry, rx) in track.states.items():
        inside = _paint(vol[k], cy, cx, ry, rx, track.p, target_level + rng.normal(0, 4))
        labels[k][inside] = 1

    if spec.kind == ScenarioKind.ADJACENT_DISTRACTOR:
        _paint_distractor(vol, labels, rng, spec, track, target_level)

    vol = np.clip(vol, 0.0, 255.0)
    return LabeledCase(
        Volume(vol.astype(np.float32), (1.0, 1.0, 1.0), Modality.SYNTH),
        MaskVolume(labels, object_ids=(1,)),
        spec,
    )


def _paint_distractor(vol, labels, rng, spec, track, target_level):
    """Unlabeled look-alike neighbor: it rides alongside the target (touching,
    never overlapping the ground truth), and once the target ends it drifts
    into the vacated footprint, continuing past the end of the presence range.
    Telling it apart from the target takes memory, not appearance."""
    d, h, w = spec.dims
    first = spec.present_ranges[0][0]
    last = spec.present_ranges[-1][1]
    start = max(0, first - 1)
    stop = min(d - 1, last + max(6, (last - spec.present_ranges[-1][0] + 1)))
    ang = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.sin(ang), np.cos(ang)])
    dist_r = track.r0 * rng.uniform(0.9, 1.1)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    level = float(np.clip(target_level + sign * spec.distractor_contrast * 255.0, 0, 255))
    fin_cy, fin_cx, _, _ = track.final_state
    pos = None
    for k in range(start, stop + 1):
        state = track.states.get(k)
        if state is not None:
            tcy, tcx, try_, trx = state
            # 1.2x covers the superellipse corner bulge plus the soft edge
            gap = 1.2 * (max(try_, trx) + dist_r) + 1.5
            anchor = np.array([tcy, tcx]) + direction * gap
        else:
            # target gone: slide into its vacated footprint
            anchor = np.array([fin_cy, fin_cx])
        if pos is None:
            pos = anchor.astype(float)
        else:
            pos = pos + 0.45 * (anchor - pos) + rng.normal(0, 0.4, size=2)
        pos[0] = float(np.clip(pos[0], dist_r + 1, h - dist_r - 1))
        pos[1] = float(np.clip(pos[1], dist_r + 1, w - dist_r - 1))
        if state is not None:
            # border clipping may have pushed us back toward the target;
            # restore the separation or hide the neighbor on this slice
            off = pos - np.array([tcy, tcx])
            dist = float(np.hypot(*off))
            if dist < gap:
                if dist < 1e-6:
                    continue
                cand = np.array([tcy, tcx]) + off / dist * gap
                cand[0] = np.clip(cand[0], dist_r + 1, h - dist_r - 1)
                cand[1] = np.clip(cand[1], dist_r + 1, w - dist_r - 1)
                if float(np.hypot(*(cand - np.array([tcy, tcx])))) < gap:
                    continue
                pos = cand
        _paint(vol[k], pos[0], pos[1], dist_r, dist_r, track.p, level)


def generate_multi_case(spec: ScenarioSpec, second_ranges=None) -> LabeledCase:
    """Two disjoint labeled blobs (ids 1 and 2) confined to opposite halves."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, h, w = spec.dims

    base = rng.uniform(25, 55)
    noise = gaussian_filter(rng.normal(0, 1, size=(d, h, w)), sigma=(1.0, 2.0, 2.0))
    noise *= rng.uniform(6, 14) / max(noise.std(), 1e-9)
    vol = np.full((d, h, w), base) + noise
    labels = np.zeros((d, h, w), dtype=np.uint8)

    spec2 = replace(spec, present_ranges=tuple(second_ranges) if second_ranges else spec.present_ranges)
    for oid, (sp, bounds) in enumerate(
        [(spec, (0, w / 2 - 2)), (spec2, (w / 2 + 2, w))], start=1
    ):
        level = rng.uniform(170, 220)
        track = _BlobTrack(rng, sp, bounds)
        for k, (cy, cx, ry, rx) in track.states.items():
            inside = _paint(vol[k], cy, cx, ry, rx, track.p, level + rng.normal(0, 4))
            labels[k][inside & (labels[k] == 0)] = oid

    vol = np.clip(vol, 0.0, 255.0)
    return LabeledCase(
        Volume(vol.astype(np.float32), (1.0, 1.0, 1.0), Modality.SYNTH),
        MaskVolume(labels, object_ids=(1, 2)),
        spec,
    )


DEFAULT_TEMPLATES = {
    ScenarioKind.SIMPLE_BLOB: ScenarioSpec(ScenarioKind.SIMPLE_BLOB, present_ranges=((6, 17),)),
    ScenarioKind.ADJACENT_DISTRACTOR: ScenarioSpec(
        ScenarioKind.ADJACENT_DISTRACTOR, present_ranges=((4, 13),)),
    ScenarioKind.GAP_REAPPEAR: ScenarioSpec(
        ScenarioKind.GAP_REAPPEAR, present_ranges=((4, 11), (16, 21))),
    ScenarioKind.INTERMITTENT: ScenarioSpec(
        ScenarioKind.INTERMITTENT, present_ranges=((3, 8), (11, 15), (18, 21))),
}


def _jitter_ranges(ranges, d, rng):
    shift = int(rng.integers(-2, 3))
    out = []
    last = -1
    for a, b in ranges:
        a2 = a + shift
        b2 = b + shift
        if a2 < 0:
            b2 -= a2
            a2 = 0
        if b2 > d - 1:
            a2 -= b2 - (d - 1)
            b2 = d - 1
        a2 = max(a2, last + 2)
        if a2 > b2:
            a2 = b2
        out.append((a2, b2))
        last = b2
    return tuple(out)


def derive_case_spec(template: ScenarioSpec, rng) -> ScenarioSpec:
    """Child spec with its own seed and slightly jittered presence intervals."""
    seed = int(rng.integers(0, 2 ** 63 - 1))
    ranges = _jitter_ranges(template.present_ranges, template.dims[0], rng)
    return replace(template, seed=seed, present_ranges=ranges)


def generate_split(spec_template: ScenarioSpec, n_train: int, n_test: int,
                   seed: int) -> tuple[list[LabeledCase], list[LabeledCase]]:
    """Disjointly-seeded train/test cases derived from one template."""
    if n_train < 1 or n_test < 1:
        raise SpecInvalid("n_train and n_test must be >= 1")
    rng = np.random.default_rng(seed)
    train = [generate_case(derive_case_spec(spec_template, rng)) for _ in range(n_train)]
    test = [generate_case(derive_case_spec(spec_template, rng)) for _ in range(n_test)]
    return train, test


def scenario_suite(kinds, n_train: int, n_test: int, seed: int,
                   dims=(24, 64, 64), radius_range=None,
                   distractor_contrast=None) -> tuple[list[LabeledCase], list[LabeledCase]]:
    """Mixed-kind suite: cases alternate between the given scenario kinds."""
    kinds = [ScenarioKind(k) for k in kinds]
    rng = np.random.default_rng(seed)
    templates = []
    for k in kinds:
        t = replace(DEFAULT_TEMPLATES[k], dims=tuple(dims))
        t = _scale_template(t, dims)
        if radius_range is not None:
            t = replace(t, object_radius_range=tuple(radius_range))
        if distractor_contrast is not None:
            t = replace(t, distractor_contrast=float(distractor_contrast))
        templates.append(t)

    def build(n):
        return [
            generate_case(derive_case_spec(templates[i % len(templates)], rng))
            for i in range(n)
        ]

    return build(n_train), build(n_test)


def _scale_template(t: ScenarioSpec, dims) -> ScenarioSpec:
    """Rescale default presence intervals (defined for D=24) and radii
    (defined for 64x64) to other volume dims."""
    d, h, w = dims
    f = d / 24.0
    ranges = tuple(
        (min(d - 1, int(round(a * f))), min(d - 1, max(int(round(a * f)), int(round(b * f)))))
        for a, b in t.present_ranges
    )
    g = min(h, w) / 64.0
    rmin, rmax = t.object_radius_range
    return replace(t, present_ranges=ranges,
                   object_radius_range=(max(2.0, rmin * g), max(2.5, rmax * g)))
