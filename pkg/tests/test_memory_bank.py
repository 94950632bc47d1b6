import numpy as np
import pytest

from slmprop.errors import EmptyBank
from slmprop.memory import BankPolicy, MemoryBank, MemoryEntry, bank_reset, bank_tokens, bank_update
from slmprop.nn import Tensor


def entry(idx, conditional=False, c=2, h=2, w=2, fill=None):
    data = np.full((1, c, h, w), float(idx) if fill is None else fill)
    return MemoryEntry(Tensor(data), idx, conditional)


def indices(bank):
    return [e.slice_index for e in bank.entries]


def test_short_bank_keeps_only_last():
    bank = MemoryBank(BankPolicy(1, 0))
    bank = bank_update(bank, entry(1))
    bank = bank_update(bank, entry(2))
    assert indices(bank) == [2]


def test_long_bank_retention_rule():
    bank = MemoryBank(BankPolicy(6, 1))
    bank = bank_update(bank, entry(0, conditional=True))
    for i in range(1, 9):
        bank = bank_update(bank, entry(i))
    # conditional survives; recents are the last six pushes
    assert indices(bank) == [3, 4, 5, 6, 7, 8, 0]


def test_long_bank_conditional_only():
    bank = bank_update(MemoryBank(BankPolicy(6, 1)), entry(5, conditional=True))
    assert indices(bank) == [5]
    tokens, ranks = bank_tokens(bank)
    assert tokens.data.shape == (1, 4, 2)
    assert list(ranks) == [-1] * 4


def test_conditional_goes_to_recent_when_no_prompted_capacity():
    bank = MemoryBank(BankPolicy(2, 0))
    bank = bank_update(bank, entry(0, conditional=True))
    bank = bank_update(bank, entry(1))
    bank = bank_update(bank, entry(2))
    assert indices(bank) == [1, 2]


def test_bank_tokens_counts():
    bank = MemoryBank(BankPolicy(7, 1))
    for i in range(7):
        bank = bank_update(bank, entry(i, c=4, h=16, w=16))
    tokens, ranks = bank_tokens(bank)
    assert tokens.data.shape == (1, 7 * 256, 4)
    # most recent entry has rank 0
    assert ranks[-256] == 0 and ranks[0] == 6

    single = bank_update(MemoryBank(BankPolicy(1, 0)), entry(0, c=4, h=16, w=16))
    toks, _ = bank_tokens(single)
    assert toks.data.shape == (1, 256, 4)


def test_bank_tokens_empty_raises():
    with pytest.raises(EmptyBank):
        bank_tokens(MemoryBank(BankPolicy(1, 0)))


def test_bank_reset():
    bank = MemoryBank(BankPolicy(6, 1))
    bank = bank_update(bank, entry(0, conditional=True))
    bank = bank_update(bank, entry(1))
    bank = bank_update(bank, entry(2))
    kept = bank_reset(bank, keep_conditional=True)
    assert indices(kept) == [0]
    empty = bank_reset(bank, keep_conditional=False)
    assert len(empty) == 0
    assert len(bank_reset(MemoryBank(BankPolicy(1, 0)), True)) == 0


def oracle_contents(policy, pushes):
    """Brute-force list-slicing model of the retention rules."""
    recent = []
    prompted = []
    for idx, cond in pushes:
        if cond and policy.m_prompted > 0:
            prompted = (prompted + [idx])[-policy.m_prompted:]
        elif policy.n_recent > 0:
            recent = (recent + [idx])[-policy.n_recent:]
    return recent + prompted


@pytest.mark.parametrize("policy", [BankPolicy(6, 1), BankPolicy(7, 0), BankPolicy(1, 0), BankPolicy(3, 2)])
def test_bank_matches_oracle_over_random_sequences(policy):
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(0, 20))
        pushes = [(i, bool(rng.random() < 0.2)) for i in range(n)]
        bank = MemoryBank(policy)
        for idx, cond in pushes:
            bank = bank_update(bank, entry(idx, conditional=cond, c=1, h=1, w=1))
        assert indices(bank) == oracle_contents(policy, pushes)


def test_conditional_survives_unbounded_pushes():
    bank = bank_update(MemoryBank(BankPolicy(2, 1)), entry(0, conditional=True))
    for i in range(1, 50):
        bank = bank_update(bank, entry(i))
    assert any(e.is_conditional for e in bank.entries)
    assert indices(bank) == [48, 49, 0]
