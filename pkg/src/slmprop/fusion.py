"""Dual memory-attention stacks and the dynamic attention fuser.

Each stack is L pre-norm transformer blocks (self-attention over frame
tokens, cross-attention into flattened bank tokens, pointwise MLP), with its
own parameters. The fuser sums the two attention maps and refines them with
two ConvNeXt-style blocks whose second MLP layers are zero-initialized, so a
fresh fuser is an exact passthrough of the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BothBanksEmpty, EmptyBank, ShapeMismatch
from .memory import BankPolicy, MemoryBank, bank_tokens
from .nn import (
    ParamStore,
    Tensor,
    add,
    conv2d,
    cross_attention,
    embedding_rows,
    layer_norm,
    mlp2,
    reshape,
    transpose,
)


@dataclass(frozen=True)
class AttentionStackConfig:
    num_blocks: int = 2
    heads: int = 4
    channels: int = 64

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ShapeMismatch("attention stack needs at least one block")
        if self.channels % self.heads:
            raise ShapeMismatch(f"channels {self.channels} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class FuserConfig:
    channels: int = 64
    expansion: int = 4
    num_convnext_blocks: int = 2
    use_projection: bool = False


def init_attention_params(store: ParamStore, prefix: str, cfg: AttentionStackConfig,
                          policy: BankPolicy, rng, feat_res: tuple[int, int] | None = None) -> None:
    c = cfg.channels
    std = 1.0 / np.sqrt(c)

    def proj(name):
        store.add(f"{name}.w", rng.normal(0.0, std, size=(c, c)))
        store.add(f"{name}.b", np.zeros(c))

    for i in range(cfg.num_blocks):
        b = f"{prefix}.blk{i}"
        for ln in ("ln1", "ln2", "ln3"):
            store.add(f"{b}.{ln}.g", np.ones(c))
            store.add(f"{b}.{ln}.b", np.zeros(c))
        for attn in ("self", "cross"):
            for p in ("q", "k", "v", "o"):
                proj(f"{b}.{attn}.{p}")
        store.add(f"{b}.mlp.w1", rng.normal(0.0, np.sqrt(2.0 / c), size=(c, 4 * c)))
        store.add(f"{b}.mlp.b1", np.zeros(4 * c))
        store.add(f"{b}.mlp.w2", rng.normal(0.0, np.sqrt(2.0 / (4 * c)), size=(4 * c, c)))
        store.add(f"{b}.mlp.b2", np.zeros(c))
    # temporal embeddings by recency rank; last row is the conditional slot
    store.add(f"{prefix}.temporal", rng.normal(0.0, 0.02, size=(policy.n_recent + 1, c)))
    # learned spatial position embedding shared by query and memory tokens
    if feat_res is not None:
        h, w = feat_res
        store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(h * w, c)))


def init_fuser_params(store: ParamStore, cfg: FuserConfig, rng) -> None:
    c = cfg.channels
    if cfg.use_projection:
        store.add("fuse.proj.w", rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c, 1, 1)))
        store.add("fuse.proj.b", np.zeros(c))
    for i in range(cfg.num_convnext_blocks):
        b = f"fuse.blk{i}"
        store.add(f"{b}.dw.w", rng.normal(0.0, np.sqrt(2.0 / 49), size=(c, 1, 7, 7)))
        store.add(f"{b}.dw.b", np.zeros(c))
        store.add(f"{b}.ln.g", np.ones(c))
        store.add(f"{b}.ln.b", np.zeros(c))
        store.add(f"{b}.mlp.w1", rng.normal(0.0, np.sqrt(2.0 / c), size=(c, cfg.expansion * c)))
        store.add(f"{b}.mlp.b1", np.zeros(cfg.expansion * c))
        # zero-init: a fresh block is an exact residual passthrough
        store.add(f"{b}.mlp.w2", np.zeros((cfg.expansion * c, c)))
        store.add(f"{b}.mlp.b2", np.zeros(c))


def _frame_tokens(f_i: Tensor) -> tuple[Tensor, tuple[int, int, int]]:
    _, c, h, w = f_i.data.shape
    return transpose(reshape(f_i, (1, c, h * w)), (0, 2, 1)), (c, h, w)


def _attn(store, name, heads, q, k, v):
    return cross_attention(
        q, k, v, heads,
        wq=store[f"{name}.q.w"], wk=store[f"{name}.k.w"],
        wv=store[f"{name}.v.w"], wo=store[f"{name}.o.w"],
        bq=store[f"{name}.q.b"], bk=store[f"{name}.k.b"],
        bv=store[f"{name}.v.b"], bo=store[f"{name}.o.b"],
    )


def _block(x: Tensor, mem: Tensor | None, store: ParamStore, name: str, heads: int) -> Tensor:
    h = layer_norm(x, store[f"{name}.ln1.g"], store[f"{name}.ln1.b"])
    x = add(x, _attn(store, f"{name}.self", heads, h, h, h))
    if mem is not None:
        h = layer_norm(x, store[f"{name}.ln2.g"], store[f"{name}.ln2.b"])
        x = add(x, _attn(store, f"{name}.cross", heads, h, mem, mem))
    h = layer_norm(x, store[f"{name}.ln3.g"], store[f"{name}.ln3.b"])
    return add(x, mlp2(h, store[f"{name}.mlp.w1"], store[f"{name}.mlp.b1"],
                       store[f"{name}.mlp.w2"], store[f"{name}.mlp.b2"]))


def _stack_forward(f_i: Tensor, bank: MemoryBank | None, cfg: AttentionStackConfig,
                   store: ParamStore, prefix: str) -> Tensor:
    """Run one attention stack; ``bank=None`` is the empty-memory bypass in
    which cross-attention is skipped but self-attention and MLP still apply."""
    x, (c, h, w) = _frame_tokens(f_i)
    pos_name = f"{prefix}.pos"
    pos = store[pos_name] if pos_name in store else None
    if pos is not None:
        x = add(x, reshape(pos, (1, h * w, c)))
    mem = None
    if bank is not None:
        tokens, ranks = bank_tokens(bank)
        table = store[f"{prefix}.temporal"]
        cond_row = table.data.shape[0] - 1
        idx = np.where(ranks < 0, cond_row, ranks)
        emb = reshape(embedding_rows(table, idx), (1, len(idx), c))
        mem = add(tokens, emb)
        if pos is not None:
            tile = np.tile(np.arange(h * w, dtype=np.intp), len(idx) // (h * w))
            mem = add(mem, reshape(embedding_rows(pos, tile), (1, len(idx), c)))
    for i in range(cfg.num_blocks):
        x = _block(x, mem, store, f"{prefix}.blk{i}", cfg.heads)
    return reshape(transpose(x, (0, 2, 1)), (1, c, h, w))


def memory_attention(f_i: Tensor, bank: MemoryBank, cfg: AttentionStackConfig,
                     store: ParamStore, prefix: str) -> Tensor:
    """Condition frame features on one memory bank; output shape equals input."""
    if len(bank) == 0:
        raise EmptyBank(f"memory_attention({prefix}) on an empty bank")
    return _stack_forward(f_i, bank, cfg, store, prefix)


def fuse(a_short: Tensor, a_long: Tensor, cfg: FuserConfig, store: ParamStore) -> Tensor:
    """Sum the two attention maps, then refine with ConvNeXt blocks."""
    if a_short.data.shape != a_long.data.shape:
        raise ShapeMismatch(f"fuse: {a_short.data.shape} vs {a_long.data.shape}")
    s = add(a_short, a_long)
    if cfg.use_projection:
        s = conv2d(s, store["fuse.proj.w"], store["fuse.proj.b"])
    for i in range(cfg.num_convnext_blocks):
        b = f"fuse.blk{i}"
        h = conv2d(s, store[f"{b}.dw.w"], store[f"{b}.dw.b"], padding=3,
                   groups=cfg.channels)
        t = transpose(h, (0, 2, 3, 1))
        t = layer_norm(t, store[f"{b}.ln.g"], store[f"{b}.ln.b"])
        t = mlp2(t, store[f"{b}.mlp.w1"], store[f"{b}.mlp.b1"],
                 store[f"{b}.mlp.w2"], store[f"{b}.mlp.b2"])
        s = add(s, transpose(t, (0, 3, 1, 2)))
    return s


def condition_frame(f_i: Tensor, m_short: MemoryBank | None, m_long: MemoryBank,
                    stack_cfg: AttentionStackConfig, fuser_cfg: FuserConfig | None,
                    store: ParamStore) -> Tensor:
    """Full dynamic-memory conditioning of one frame.

    With ``m_short=None`` (single-bank ablations) this reduces to one stack
    and the fuser is bypassed. An empty bank on exactly one side takes the
    residual-only bypass; both sides empty is an error.
    """
    if m_short is None:
        if len(m_long) == 0:
            raise BothBanksEmpty("single-bank mode with empty bank")
        return memory_attention(f_i, m_long, stack_cfg, store, "att.long")
    if len(m_short) == 0 and len(m_long) == 0:
        raise BothBanksEmpty("no memory exists yet")
    a_long = _stack_forward(f_i, m_long if len(m_long) else None, stack_cfg, store, "att.long")
    a_short = _stack_forward(f_i, m_short if len(m_short) else None, stack_cfg, store, "att.short")
    return fuse(a_short, a_long, fuser_cfg, store)
