"""Binary-mask run-length codec used on the HTTP wire.

Encoding: flatten the mask row-major, collect maximal runs of foreground as
(start, length) pairs, serialize the pairs as consecutive little-endian u32
values, base64 the bytes. An empty mask encodes to an empty string.
"""

from __future__ import annotations

import base64

import numpy as np

from .errors import ShapeMismatch


def encode_mask(mask: np.ndarray) -> str:
    flat = np.asarray(mask).astype(bool).ravel()
    if flat.size == 0:
        return ""
    padded = np.concatenate(([False], flat, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    pairs = np.empty(2 * len(starts), dtype="<u4")
    pairs[0::2] = starts
    pairs[1::2] = ends - starts
    return base64.b64encode(pairs.tobytes()).decode("ascii")


def decode_mask(rle: str, shape: tuple[int, int]) -> np.ndarray:
    h, w = int(shape[0]), int(shape[1])
    out = np.zeros(h * w, dtype=bool)
    if rle:
        raw = base64.b64decode(rle.encode("ascii"), validate=True)
        if len(raw) % 8:
            raise ShapeMismatch("rle payload must be a sequence of u32 (start, length) pairs")
        pairs = np.frombuffer(raw, dtype="<u4")
        starts = pairs[0::2].astype(np.int64)
        lengths = pairs[1::2].astype(np.int64)
        if np.any(starts + lengths > h * w) or np.any(lengths < 0):
            raise ShapeMismatch(f"rle runs exceed mask of shape {(h, w)}")
        for s, n in zip(starts, lengths):
            out[s:s + n] = True
    return out.reshape(h, w)
