"""Short/long memory banks: bounded FIFO of recent slice memories plus a
separately-capped store of prompted (conditional) memories.

Banks are immutable values; ``bank_update`` returns a new bank, which keeps
replay and oracle comparison trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyBank
from .nn import Tensor, concat, reshape, transpose


@dataclass(frozen=True)
class MemoryEntry:
    """One encoded slice memory."""

    feature: Tensor  # [1, C, H, W]
    slice_index: int
    is_conditional: bool = False


@dataclass(frozen=True)
class BankPolicy:
    """Capacities: n_recent non-conditional slots, m_prompted conditional slots."""

    n_recent: int
    m_prompted: int

    def __post_init__(self):
        if self.n_recent < 0 or self.m_prompted < 0 or self.n_recent + self.m_prompted < 1:
            raise ValueError(f"invalid bank policy {self}")


@dataclass(frozen=True)
class MemoryBank:
    policy: BankPolicy
    recent: tuple[MemoryEntry, ...] = field(default=())   # oldest first
    prompted: tuple[MemoryEntry, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.recent) + len(self.prompted)

    @property
    def entries(self) -> tuple[MemoryEntry, ...]:
        return self.recent + self.prompted


def bank_update(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    """Push one memory.

    Conditional entries go to the prompted store when it has capacity and are
    never evicted by non-conditional pushes; everything else is FIFO on the
    recent queue.
    """
    pol = bank.policy
    if entry.is_conditional and pol.m_prompted > 0:
        prompted = bank.prompted + (entry,)
        if len(prompted) > pol.m_prompted:
            prompted = prompted[len(prompted) - pol.m_prompted:]
        return replace(bank, prompted=prompted)
    if pol.n_recent == 0:
        return bank
    recent = bank.recent + (entry,)
    if len(recent) > pol.n_recent:
        recent = recent[len(recent) - pol.n_recent:]
    return replace(bank, recent=recent)


def bank_reset(bank: MemoryBank, keep_conditional: bool) -> MemoryBank:
    """Clear the recent queue; optionally retain the prompted entries."""
    return replace(bank, recent=(), prompted=bank.prompted if keep_conditional else ())


def bank_tokens(bank: MemoryBank) -> tuple[Tensor, np.ndarray]:
    """Flatten all entries to key/value tokens.

    Returns (tokens [1, Nk, C], rank ids [Nk]) where rank 0 is the most
    recent non-conditional entry and rank -1 marks prompted entries; the
    attention stack maps ranks onto its learned temporal embeddings.
    """
    if len(bank) == 0:
        raise EmptyBank("bank_tokens on an empty bank")
    toks = []
    ranks = []
    n = len(bank.recent)
    for i, e in enumerate(bank.recent):
        toks.append(_entry_tokens(e))
        ranks.append(np.full(toks[-1].data.shape[1], n - 1 - i, dtype=np.intp))
    for e in bank.prompted:
        toks.append(_entry_tokens(e))
        ranks.append(np.full(toks[-1].data.shape[1], -1, dtype=np.intp))
    tokens = toks[0] if len(toks) == 1 else concat(toks, axis=1)
    return tokens, np.concatenate(ranks)


def _entry_tokens(entry: MemoryEntry) -> Tensor:
    _, c, h, w = entry.feature.data.shape
    return transpose(reshape(entry.feature, (1, c, h * w)), (0, 2, 1))
