"""Toy-scale fixed networks: image encoder, prompt encoder, memory encoder,
and mask decoder, plus the named-tensor checkpoint format.

All four are small conv stacks sized by :class:`BackboneConfig`; the point of
the artifact is the memory machinery, so the backbone stays deliberately
simple: two stride-2 stages down to a (C, H0/4, W0/4) feature map and two
transposed-conv stages back up.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, IoFailure, ShapeMismatch, TruncatedFile, UnsupportedVersion
from .nn import (
    ParamStore,
    Tensor,
    add,
    add_bias,
    conv2d,
    conv_transpose2x2,
    gelu,
    instance_norm2d,
    layer_norm,
    matmul,
    reshape,
    scale,
    sigmoid,
    sum_axis,
    transpose,
)


@dataclass(frozen=True)
class BackboneConfig:
    input_res: tuple[int, int] = (64, 64)
    feat_channels: int = 64
    decoder_hidden: int = 32

    def __post_init__(self):
        h0, w0 = self.input_res
        if h0 % 4 or w0 % 4:
            raise ShapeMismatch(f"input_res {self.input_res} must be divisible by 4")
        if self.feat_channels < 8:
            raise ShapeMismatch("feat_channels must be >= 8")

    @property
    def feat_res(self) -> tuple[int, int]:
        return self.input_res[0] // 4, self.input_res[1] // 4

    def to_dict(self) -> dict:
        return {
            "input_res": list(self.input_res),
            "feat_channels": self.feat_channels,
            "decoder_hidden": self.decoder_hidden,
        }

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        return BackboneConfig(tuple(d["input_res"]), d["feat_channels"], d["decoder_hidden"])


@dataclass
class DecoderOutput:
    mask_logits: Tensor  # [1, 1, H0, W0]
    iou_pred: Tensor     # [1, 1], sigmoid-squashed
    obj_logit: Tensor    # [1, 1]


def ln_channels(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """LayerNorm over the channel axis of an NCHW tensor, per spatial position."""
    t = transpose(x, (0, 2, 3, 1))
    t = layer_norm(t, gamma, beta)
    return transpose(t, (0, 3, 1, 2))


def norm2d(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Backbone normalization: per-channel spatial instance norm. Channelwise
    LayerNorm would erase absolute intensity (a locally constant bright patch
    and a dark one normalize identically), which the mask decoder needs."""
    return instance_norm2d(x, gamma, beta)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _add_conv(store, rng, name, cout, cin, k):
    store.add(f"{name}.w", _he(rng, (cout, cin, k, k), cin * k * k))
    store.add(f"{name}.b", np.zeros(cout))


def _add_ln(store, name, c):
    store.add(f"{name}.g", np.ones(c))
    store.add(f"{name}.b", np.zeros(c))


def _add_downstack(store, rng, prefix, cin, c):
    """Two stride-2 conv+LN+GELU stages mapping (cin, H0, W0) -> (c, H0/4, W0/4)."""
    mid = max(8, c // 2)
    _add_conv(store, rng, f"{prefix}.c1", mid, cin, 3)
    _add_ln(store, f"{prefix}.ln1", mid)
    _add_conv(store, rng, f"{prefix}.c2", c, mid, 3)
    _add_ln(store, f"{prefix}.ln2", c)


def init_backbone_params(store: ParamStore, cfg: BackboneConfig, rng) -> None:
    c = cfg.feat_channels
    dh = cfg.decoder_hidden
    h, w = cfg.feat_res
    _add_downstack(store, rng, "enc", 1, c)
    _add_downstack(store, rng, "prm", 1, c)
    store.add("prm.null", rng.normal(0.0, 0.02, size=(1, c, h, w)))
    _add_downstack(store, rng, "mem.down", 1, c)
    _add_conv(store, rng, "mem.light", c, c, 3)
    # decoder: two x2 transposed convs, 3x3 head, pooled quality heads
    store.add("dec.up1.w", _he(rng, (c, dh, 2, 2), c * 4))
    store.add("dec.up1.b", np.zeros(dh))
    _add_ln(store, "dec.ln1", dh)
    store.add("dec.up2.w", _he(rng, (dh, dh, 2, 2), dh * 4))
    store.add("dec.up2.b", np.zeros(dh))
    _add_ln(store, "dec.ln2", dh)
    store.add("dec.head.w", rng.normal(0.0, 0.01, size=(1, dh, 3, 3)))
    store.add("dec.head.b", np.zeros(1))
    store.add("dec.iou.w", rng.normal(0.0, 0.02, size=(c, 1)))
    store.add("dec.iou.b", np.zeros(1))
    store.add("dec.obj.w", rng.normal(0.0, 0.02, size=(c, 1)))
    store.add("dec.obj.b", np.zeros(1))


def _downstack(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    h = conv2d(x, store[f"{prefix}.c1.w"], store[f"{prefix}.c1.b"], stride=2, padding=1)
    h = gelu(norm2d(h, store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"]))
    h = conv2d(h, store[f"{prefix}.c2.w"], store[f"{prefix}.c2.b"], stride=2, padding=1)
    return gelu(norm2d(h, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"]))


def encode_image(slice2d, store: ParamStore, cfg: BackboneConfig) -> Tensor:
    """Encode one normalized [0, 255] slice into a (1, C, H, W) feature map."""
    arr = np.asarray(slice2d, dtype=np.float64)
    if arr.shape != tuple(cfg.input_res):
        raise ShapeMismatch(f"slice shape {arr.shape} != input_res {cfg.input_res}")
    x = Tensor(arr.reshape(1, 1, *arr.shape) / 255.0)
    return _downstack(x, store, "enc")


def encode_prompt(mask2d, store: ParamStore, cfg: BackboneConfig) -> Tensor:
    """Encode a binary prompt mask; an all-zero mask maps to the learned
    null-prompt embedding rather than to zero features."""
    arr = np.asarray(mask2d, dtype=np.float64)
    if arr.shape != tuple(cfg.input_res):
        raise ShapeMismatch(f"mask shape {arr.shape} != input_res {cfg.input_res}")
    if not arr.any():
        return store["prm.null"]
    x = Tensor(arr.reshape(1, 1, *arr.shape))
    return _downstack(x, store, "prm")


def encode_memory(f_i: Tensor, mask_probs, store: ParamStore, cfg: BackboneConfig) -> Tensor:
    """Memory feature: lightweight conv over (image features + downsampled mask)."""
    if isinstance(mask_probs, Tensor):
        m = mask_probs
    else:
        m = Tensor(np.asarray(mask_probs, dtype=np.float64))
    if m.data.shape != tuple(cfg.input_res):
        m = reshape(m, tuple(cfg.input_res))
    m = reshape(m, (1, 1, *cfg.input_res))
    down = _downstack(m, store, "mem.down")
    mixed = add(f_i, down)
    return conv2d(mixed, store["mem.light.w"], store["mem.light.b"], padding=1)


def decode(a_fused: Tensor, f_p: Tensor | None, is_conditional: bool,
           store: ParamStore, cfg: BackboneConfig) -> DecoderOutput:
    """Mask decoder; conditions on the encoded prompt only on the conditional
    frame, otherwise on the learned null-prompt embedding."""
    prompt = f_p if (is_conditional and f_p is not None) else store["prm.null"]
    x = add(a_fused, prompt)
    h = conv_transpose2x2(x, store["dec.up1.w"], store["dec.up1.b"])
    h = gelu(norm2d(h, store["dec.ln1.g"], store["dec.ln1.b"]))
    h = conv_transpose2x2(h, store["dec.up2.w"], store["dec.up2.b"])
    h = gelu(norm2d(h, store["dec.ln2.g"], store["dec.ln2.b"]))
    logits = conv2d(h, store["dec.head.w"], store["dec.head.b"], padding=1)

    c = cfg.feat_channels
    hw = cfg.feat_res[0] * cfg.feat_res[1]
    pooled = scale(sum_axis(reshape(x, (1, c, hw)), axis=2, keepdims=False), 1.0 / hw)  # [1, C]
    iou = sigmoid(add_bias(matmul(pooled, store["dec.iou.w"]), store["dec.iou.b"], axis=-1))
    obj = add_bias(matmul(pooled, store["dec.obj.w"]), store["dec.obj.b"], axis=-1)
    return DecoderOutput(mask_logits=logits, iou_pred=iou, obj_logit=obj)


# --- checkpoint format --------------------------------------------------------

CHECKPOINT_MAGIC = b"SCKP"
_CKPT_HEADER = struct.Struct("<4sII")


def save_checkpoint(store: ParamStore, manifest_extra: dict, path) -> None:
    """Named-tensor archive: header, JSON manifest, then f32 payloads in
    manifest order. Byte-deterministic for identical inputs."""
    names = sorted(store.names())
    manifest = {
        "tensors": [{"name": n, "shape": list(store[n].data.shape)} for n in names],
        **manifest_extra,
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    payload = b"".join(store[n].data.astype("<f4").tobytes() for n in names)
    try:
        Path(path).write_bytes(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, 1, len(blob)) + blob + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than checkpoint header")
    magic, version, blob_len = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: magic field is {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != 1:
        raise UnsupportedVersion(f"{path}: checkpoint version {version}")
    manifest = json.loads(raw[_CKPT_HEADER.size:_CKPT_HEADER.size + blob_len])
    store = ParamStore()
    off = _CKPT_HEADER.size + blob_len
    for spec in manifest["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + count * 4
        if end > len(raw):
            raise TruncatedFile(f"{path}: payload for {spec['name']} truncated")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        store.add(spec["name"], data.astype(np.float64))
        off = end
    return store, manifest
