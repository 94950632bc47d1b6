"""Training and bidirectional propagation.

Training follows the per-sequence recipe: sample a window of T consecutive
slices whose first (conditional) frame contains the object, optionally flip
the order, seed both banks with the conditional memory encoded from the
prompt mask, predict every frame, accumulate the loss over the window and
take one optimizer step. Memories pushed during the loop come from predicted
mask probabilities, never from ground truth.

Inference propagates from the conditional slice toward each end of the
volume; banks are reset (conditional memory retained) between directions and
the conditional slice's output is the user mask verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .backbone import (
    BackboneConfig,
    decode,
    encode_image,
    encode_memory,
    encode_prompt,
    init_backbone_params,
)
from .errors import (
    IndexOutOfRange,
    InsufficientSlices,
    ObjectAbsent,
    ShapeMismatch,
)
from .fusion import (
    AttentionStackConfig,
    FuserConfig,
    condition_frame,
    init_attention_params,
    init_fuser_params,
)
from .memory import BankPolicy, MemoryBank, MemoryEntry, bank_update
from .nn import (
    GradTape,
    ParamStore,
    Tensor,
    abs_t,
    adamw_step,
    add,
    const,
    cosine_lr,
    div,
    mean_all,
    mul,
    neg,
    pow_const,
    reshape,
    scale,
    sigmoid,
    softplus,
    sub,
    sum_all,
)
from .volume_io import MaskVolume, Volume, resize_slice


class AblationMode(str, Enum):
    M_O = "M_O"                        # single bank, 6 recent + 1 prompted
    M_R7 = "M_R7"                      # single bank, 7 recent
    M_R1 = "M_R1"                      # single bank, 1 recent
    M_O_plus_M_R7 = "M_O_plus_M_R7"    # dual: (6,1) + (7,0)
    M_O_plus_M_R1 = "M_O_plus_M_R1"    # dual: (6,1) + (1,0), the full model


_BANKS = {
    AblationMode.M_O: (BankPolicy(6, 1), None),
    AblationMode.M_R7: (BankPolicy(7, 0), None),
    AblationMode.M_R1: (BankPolicy(1, 0), None),
    AblationMode.M_O_plus_M_R7: (BankPolicy(6, 1), BankPolicy(7, 0)),
    AblationMode.M_O_plus_M_R1: (BankPolicy(6, 1), BankPolicy(1, 0)),
}


@dataclass(frozen=True)
class AblationConfig:
    mode: AblationMode = AblationMode.M_O_plus_M_R1

    @property
    def long_policy(self) -> BankPolicy:
        return _BANKS[AblationMode(self.mode)][0]

    @property
    def short_policy(self) -> BankPolicy | None:
        return _BANKS[AblationMode(self.mode)][1]

    @property
    def is_dual(self) -> bool:
        return self.short_policy is not None


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    stack: AttentionStackConfig = field(default_factory=AttentionStackConfig)
    fuser: FuserConfig = field(default_factory=FuserConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    prompt_every_frame: bool = False
    reset_between_directions: bool = True
    seed_short_with_conditional: bool = True

    def __post_init__(self):
        c = self.backbone.feat_channels
        if self.stack.channels != c or self.fuser.channels != c:
            raise ShapeMismatch("stack/fuser channels must equal backbone feat_channels")

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "stack": {"num_blocks": self.stack.num_blocks, "heads": self.stack.heads,
                      "channels": self.stack.channels},
            "fuser": {"channels": self.fuser.channels, "expansion": self.fuser.expansion,
                      "num_convnext_blocks": self.fuser.num_convnext_blocks,
                      "use_projection": self.fuser.use_projection},
            "ablation": AblationMode(self.ablation.mode).value,
            "prompt_every_frame": self.prompt_every_frame,
            "reset_between_directions": self.reset_between_directions,
            "seed_short_with_conditional": self.seed_short_with_conditional,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            backbone=BackboneConfig.from_dict(d["backbone"]),
            stack=AttentionStackConfig(**d["stack"]),
            fuser=FuserConfig(**d["fuser"]),
            ablation=AblationConfig(AblationMode(d["ablation"])),
            prompt_every_frame=d.get("prompt_every_frame", False),
            reset_between_directions=d.get("reset_between_directions", True),
            seed_short_with_conditional=d.get("seed_short_with_conditional", True),
        )


def init_params(mcfg: ModelConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_backbone_params(store, mcfg.backbone, rng)
    res = mcfg.backbone.feat_res
    init_attention_params(store, "att.long", mcfg.stack, mcfg.ablation.long_policy, rng, res)
    if mcfg.ablation.is_dual:
        init_attention_params(store, "att.short", mcfg.stack, mcfg.ablation.short_policy, rng, res)
        init_fuser_params(store, mcfg.fuser, rng)
    return store


def encoder_param_names(store: ParamStore) -> list[str]:
    return [n for n in store.names() if n.startswith("enc.")]


# --- loss ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    seq_len: int = 8
    lr_encoder: float = 1e-4
    lr_rest: float = 3e-4
    w_focal: float = 20.0
    w_dice: float = 1.0
    w_iou: float = 1.0
    w_ce: float = 1.0
    flip_prob: float = 0.5
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.seq_len < 2:
            raise ShapeMismatch("seq_len must be >= 2")
        ws = (self.w_focal, self.w_dice, self.w_iou, self.w_ce)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise ShapeMismatch("loss weights must be non-negative with at least one positive")


_FOCAL_GAMMA = 2.0
_FOCAL_ALPHA = 0.25
_DICE_EPS = 1e-7


def actual_iou(pred_bin: np.ndarray, gt_bin: np.ndarray) -> float:
    """IoU of binary masks; two empty masks count as 1."""
    inter = np.logical_and(pred_bin, gt_bin).sum()
    union = np.logical_or(pred_bin, gt_bin).sum()
    return 1.0 if union == 0 else float(inter / union)


def loss_step(logits: Tensor, gt_mask: np.ndarray, iou_pred: Tensor, obj_logit: Tensor,
              tcfg: TrainConfig) -> Tensor:
    """Per-frame loss: focal + soft-Dice + IoU regression MAE + presence BCE."""
    gt = np.asarray(gt_mask, dtype=np.float64)
    if logits.data.shape[-2:] != gt.shape:
        raise ShapeMismatch(f"loss_step: logits {logits.data.shape} vs gt {gt.shape}")
    z = reshape(logits, gt.shape)
    y = const(gt)
    one = const(np.ones_like(gt))
    p = sigmoid(z)

    pos = mul(mul(pow_const(sub(one, p), _FOCAL_GAMMA), softplus(neg(z))), y)
    negt = mul(mul(pow_const(p, _FOCAL_GAMMA), softplus(z)), sub(one, y))
    focal = mean_all(add(scale(pos, _FOCAL_ALPHA), scale(negt, 1.0 - _FOCAL_ALPHA)))

    inter = sum_all(mul(p, y))
    denom = add(sum_all(mul(p, p)), sum_all(mul(y, y)))
    dice = div(add(scale(inter, 2.0), const(_DICE_EPS)), add(denom, const(_DICE_EPS)))
    dice_loss = sub(const(1.0), dice)

    iou_target = actual_iou(sigmoid(logits).data > 0.5, gt > 0.5)
    iou_term = abs_t(sub(reshape(iou_pred, ()), const(iou_target)))

    presence = 1.0 if gt.any() else 0.0
    zo = reshape(obj_logit, ())
    ce = add(scale(softplus(neg(zo)), presence), scale(softplus(zo), 1.0 - presence))

    total = add(scale(focal, tcfg.w_focal), scale(dice_loss, tcfg.w_dice))
    total = add(total, scale(iou_term, tcfg.w_iou))
    return add(total, scale(ce, tcfg.w_ce))


# --- banks --------------------------------------------------------------------

@dataclass
class _BankPair:
    long: MemoryBank
    short: MemoryBank | None

    def push(self, entry: MemoryEntry) -> None:
        self.long = bank_update(self.long, entry)
        if self.short is not None:
            self.short = bank_update(self.short, entry)


def _seeded_banks(mcfg: ModelConfig, cond_entry: MemoryEntry) -> _BankPair:
    long = bank_update(MemoryBank(mcfg.ablation.long_policy), cond_entry)
    short = None
    if mcfg.ablation.is_dual:
        short = MemoryBank(mcfg.ablation.short_policy)
        if mcfg.seed_short_with_conditional:
            short = bank_update(short, cond_entry)
    return _BankPair(long, short)


def _frame_forward(slice2d, banks: _BankPair, f_p, is_cond: bool,
                   store: ParamStore, mcfg: ModelConfig):
    f_i = encode_image(slice2d, store, mcfg.backbone)
    fuser = mcfg.fuser if mcfg.ablation.is_dual else None
    a = condition_frame(f_i, banks.short, banks.long, mcfg.stack, fuser, store)
    out = decode(a, f_p, is_cond, store, mcfg.backbone)
    return f_i, out


# --- training -----------------------------------------------------------------

def _valid_starts(present_first: np.ndarray, d: int, t: int, flipped: bool) -> list[int]:
    """Window anchors whose conditional (first-after-flip) frame has the object."""
    if flipped:
        return [e for e in range(t - 1, d) if present_first[e]]
    return [s for s in range(0, d - t + 1) if present_first[s]]


def _sample_window(case, object_id: int, t: int, flipped: bool, rng) -> list[int] | None:
    d = case.volume.dims[0]
    present = np.array([(case.mask.labels[k] == object_id).any() for k in range(d)])
    starts = _valid_starts(present, d, t, flipped)
    if not starts:
        return None
    anchor = int(starts[rng.integers(0, len(starts))])
    if flipped:
        return list(range(anchor, anchor - t, -1))
    return list(range(anchor, anchor + t))


def train(dataset, tcfg: TrainConfig, mcfg: ModelConfig, *, params: ParamStore | None = None,
          loss_log: list | None = None, progress=None) -> ParamStore:
    """Optimize model parameters on labeled cases; returns the final-epoch
    checkpoint. One optimizer step per sampled sequence."""
    store = params if params is not None else init_params(mcfg, tcfg.seed)
    rng = np.random.default_rng(tcfg.seed + 1)
    enc_keys = set(encoder_param_names(store))
    all_keys = store.names()
    rest_keys = [k for k in all_keys if k not in enc_keys]
    enc_keys = [k for k in all_keys if k in enc_keys]
    total_steps = max(1, tcfg.epochs * len(dataset))
    step = 0
    t = tcfg.seq_len

    total = None
    for epoch in range(tcfg.epochs):
        for case in dataset:
            if len(case.mask.object_ids) != 1:
                raise InsufficientSlices("train expects single-object cases; expand views first")
            oid = case.mask.object_ids[0]
            flipped = bool(rng.random() < tcfg.flip_prob)
            window = _sample_window(case, oid, t, flipped, rng)
            if window is None:
                window = _sample_window(case, oid, t, not flipped, rng)
            if window is None:
                raise InsufficientSlices(
                    f"case (seed={case.spec.seed if case.spec else '?'}) has no "
                    f"length-{t} window with the object on its first slice")

            frames = [np.asarray(case.volume.voxels[k], dtype=np.float64) for k in window]
            gts = [(case.mask.labels[k] == oid).astype(np.float64) for k in window]

            store.zero_grad()
            with GradTape() as tape:
                prompt = gts[0]
                f_p = encode_prompt(prompt, store, mcfg.backbone)
                f_i0 = encode_image(frames[0], store, mcfg.backbone)
                cond_entry = MemoryEntry(
                    encode_memory(f_i0, prompt, store, mcfg.backbone), window[0], True)
                banks = _seeded_banks(mcfg, cond_entry)
                total = None
                for i, (frame, gt) in enumerate(zip(frames, gts)):
                    is_cond = (i == 0) or mcfg.prompt_every_frame
                    f_i, out = _frame_forward(frame, banks, f_p, is_cond, store, mcfg)
                    l = loss_step(out.mask_logits, gt, out.iou_pred, out.obj_logit, tcfg)
                    total = l if total is None else add(total, l)
                    if i > 0:
                        probs = sigmoid(reshape(out.mask_logits, tuple(mcfg.backbone.input_res)))
                        banks.push(MemoryEntry(
                            encode_memory(f_i, probs, store, mcfg.backbone), window[i], False))
            tape.backward(total)
            grads = store.grads()
            if enc_keys:
                adamw_step(store, grads, cosine_lr(step, total_steps, tcfg.lr_encoder),
                           weight_decay=tcfg.weight_decay, keys=enc_keys)
            adamw_step(store, grads, cosine_lr(step, total_steps, tcfg.lr_rest),
                       weight_decay=tcfg.weight_decay, keys=rest_keys)
            store.zero_grad()
            if loss_log is not None:
                loss_log.append(float(total.data))
            step += 1
        if progress is not None:
            progress(epoch, step, float(total.data) if total is not None else None)
    return store


# --- inference ----------------------------------------------------------------

@dataclass
class PropagationResult:
    """Per-slice probabilities plus quality heads for one propagated object."""

    probs: np.ndarray        # [D, H0, W0] float32
    obj_scores: np.ndarray   # [D] sigmoid presence score
    iou_preds: np.ndarray    # [D]
    direction: np.ndarray    # [D] int8: 0 conditional, 1 forward, 2 backward
    cond_idx: int
    object_id: int = 1
    threshold: float = 0.5

    def binary(self) -> np.ndarray:
        return self.probs > self.threshold

    def presence(self) -> np.ndarray:
        return self.binary().any(axis=(1, 2))

    def areas(self) -> np.ndarray:
        return self.binary().sum(axis=(1, 2)).astype(np.int64)

    def mask_volume(self) -> MaskVolume:
        labels = np.where(self.binary(), np.uint8(self.object_id), np.uint8(0))
        return MaskVolume(labels, object_ids=(self.object_id,))

    def save(self, path) -> None:
        np.savez(
            path,
            probs=self.probs.astype(np.float32),
            obj_scores=self.obj_scores,
            iou_preds=self.iou_preds,
            direction=self.direction,
            meta=np.array([self.cond_idx, self.object_id], dtype=np.int64),
            threshold=np.array([self.threshold]),
        )

    @staticmethod
    def load(path) -> "PropagationResult":
        with np.load(path) as z:
            return PropagationResult(
                probs=z["probs"],
                obj_scores=z["obj_scores"],
                iou_preds=z["iou_preds"],
                direction=z["direction"],
                cond_idx=int(z["meta"][0]),
                object_id=int(z["meta"][1]),
                threshold=float(z["threshold"][0]),
            )


def _prep_slices(volume: Volume, mcfg: ModelConfig) -> list[np.ndarray]:
    h0, w0 = mcfg.backbone.input_res
    out = []
    for k in range(volume.dims[0]):
        s = np.asarray(volume.voxels[k], dtype=np.float64)
        if s.shape != (h0, w0):
            s = resize_slice(s, (h0, w0))
        out.append(s)
    return out


def _propagate_one(slices, prompt_mask: np.ndarray, cond_idx: int, store: ParamStore,
                   mcfg: ModelConfig, object_id: int, f_i_cache: dict) -> PropagationResult:
    d = len(slices)
    h0, w0 = mcfg.backbone.input_res
    if not 0 <= cond_idx < d:
        raise IndexOutOfRange(f"cond_idx {cond_idx} outside volume of {d} slices")
    prompt = np.asarray(prompt_mask, dtype=np.float64)
    if prompt.shape != (h0, w0):
        prompt = resize_slice(prompt, (h0, w0), labels=True).astype(np.float64)
    prompt = (prompt > 0.5).astype(np.float64)

    probs = np.zeros((d, h0, w0), dtype=np.float32)
    obj_scores = np.zeros(d)
    iou_preds = np.zeros(d)
    direction = np.zeros(d, dtype=np.int8)

    probs[cond_idx] = prompt
    obj_scores[cond_idx] = 1.0 if prompt.any() else 0.0
    iou_preds[cond_idx] = 1.0

    def f_i_at(k):
        if k not in f_i_cache:
            f_i_cache[k] = encode_image(slices[k], store, mcfg.backbone)
        return f_i_cache[k]

    f_p = encode_prompt(prompt, store, mcfg.backbone)
    cond_entry = MemoryEntry(
        encode_memory(f_i_at(cond_idx), prompt, store, mcfg.backbone), cond_idx, True)

    banks = _seeded_banks(mcfg, cond_entry)
    runs = [(range(cond_idx + 1, d), 1), (range(cond_idx - 1, -1, -1), 2)]
    for run, tag in runs:
        if tag == 2 and mcfg.reset_between_directions:
            banks = _seeded_banks(mcfg, cond_entry)
        for k in run:
            f_i = f_i_at(k)
            fuser = mcfg.fuser if mcfg.ablation.is_dual else None
            a = condition_frame(f_i, banks.short, banks.long, mcfg.stack, fuser, store)
            out = decode(a, f_p, mcfg.prompt_every_frame, store, mcfg.backbone)
            p = sigmoid(reshape(out.mask_logits, (h0, w0)))
            probs[k] = p.data
            obj_scores[k] = float(sigmoid(out.obj_logit).data.ravel()[0])
            iou_preds[k] = float(out.iou_pred.data.ravel()[0])
            direction[k] = tag
            banks.push(MemoryEntry(encode_memory(f_i, p, store, mcfg.backbone), k, False))
    return PropagationResult(probs, obj_scores, iou_preds, direction, cond_idx, object_id)


def propagate(volume: Volume, prompt_mask: np.ndarray, cond_idx: int, store: ParamStore,
              mcfg: ModelConfig, object_id: int = 1) -> PropagationResult:
    """Bidirectional propagation of a single annotated slice."""
    slices = _prep_slices(volume, mcfg)
    return _propagate_one(slices, prompt_mask, cond_idx, store, mcfg, object_id, {})


def propagate_multi(volume: Volume, prompts: dict, store: ParamStore,
                    mcfg: ModelConfig) -> dict:
    """Propagate several objects; image encodings are computed once per slice
    and shared, banks and decoding stay independent per object."""
    if not prompts:
        raise IndexOutOfRange("propagate_multi needs at least one object")
    slices = _prep_slices(volume, mcfg)
    cache: dict = {}
    return {
        oid: _propagate_one(slices, mask, cond_idx, store, mcfg, oid, cache)
        for oid, (mask, cond_idx) in sorted(prompts.items())
    }


# --- initial-slice rules --------------------------------------------------------


class InitialSliceRule(str, Enum):
    M_MIDDLE = "M"
    L_LARGEST = "L"
    Q_QUARTERS = "Q"


def select_initial_slice(gt_mask: MaskVolume, object_id: int,
                         rule: InitialSliceRule) -> list[int]:
    """Conditional-slice indices for a rule; Q returns two, M and L one."""
    labels = gt_mask.labels
    present = [k for k in range(labels.shape[0]) if (labels[k] == object_id).any()]
    if not present:
        raise ObjectAbsent(f"object {object_id} absent from mask volume")
    rule = InitialSliceRule(rule)
    if rule == InitialSliceRule.M_MIDDLE:
        mid = (present[0] + present[-1]) // 2
        best = min(present, key=lambda k: (abs(k - mid), k))
        return [best]
    if rule == InitialSliceRule.L_LARGEST:
        areas = [(labels[k] == object_id).sum() for k in present]
        return [present[int(np.argmax(areas))]]
    n = len(present)
    return [present[int(0.25 * (n - 1))], present[int(0.75 * (n - 1))]]
