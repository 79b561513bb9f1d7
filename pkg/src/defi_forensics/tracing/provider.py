"""Chain-state access for the tracer.

:class:`ChainStateProvider` is the read-only surface the tracing algorithm needs.
:class:`FixtureProvider` answers it from a JSON chain fixture whose transactions carry
their native-coin transfers (external value plus internal calls) precomputed, so no
EVM execution is needed.

Block ``b`` state means the state *after* every transaction in block ``b``; genesis
allocations are applied before block 0's transactions.
"""

from __future__ import annotations

import abc
import json
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


def norm_address(address: str) -> str:
    return address.strip().lower()


@dataclass(frozen=True)
class Transfer:
    sender: str
    to: str
    amount: int

    def to_dict(self) -> dict:
        return {"from": self.sender, "to": self.to, "amount": self.amount}


@dataclass(frozen=True)
class TxRecord:
    tx_id: str
    block: int
    index: int
    sender: str
    fee_payer: str
    transfers: tuple[Transfer, ...] = ()

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "block": self.block,
            "index": self.index,
            "sender": self.sender,
            "fee_payer": self.fee_payer,
            "transfers": [t.to_dict() for t in self.transfers],
        }

    @classmethod
    def from_dict(cls, d: dict, block: int | None = None, index: int | None = None) -> "TxRecord":
        sender = norm_address(d["sender"])
        transfers = []
        for t in d.get("transfers", ()):
            amount = int(t["amount"])
            if amount < 0:
                raise ValueError(f"tx {d['tx_id']}: negative transfer amount")
            transfers.append(Transfer(norm_address(t["from"]), norm_address(t["to"]), amount))
        return cls(
            tx_id=str(d["tx_id"]),
            block=int(d["block"] if block is None else block),
            index=int(d["index"] if index is None else index),
            sender=sender,
            fee_payer=norm_address(d.get("fee_payer") or d["sender"]),
            transfers=tuple(transfers),
        )


class ChainStateProvider(abc.ABC):
    """Read-only archive-node style queries. Implementations must be safe for concurrent reads."""

    @abc.abstractmethod
    def height(self) -> int: ...

    @abc.abstractmethod
    def nonce_at(self, address: str, block: int) -> int: ...

    @abc.abstractmethod
    def balance_at(self, address: str, block: int) -> int: ...

    @abc.abstractmethod
    def transactions_of(self, block: int) -> Sequence[TxRecord]: ...

    def transaction(self, tx_id: str) -> TxRecord | None:
        """Look up one transaction; providers without an index may return None."""
        return None

    def balance_change_blocks(self, address: str, upto: int) -> Sequence[int] | None:
        """Blocks <= ``upto`` at which the balance of ``address`` changed, if known.

        Providers without a balance index return None and callers fall back to
        per-block queries.
        """
        return None


@dataclass
class Block:
    number: int
    timestamp: int
    txs: list[TxRecord] = field(default_factory=list)


@dataclass
class ChainFixture:
    genesis_allocations: dict[str, int]
    blocks: list[Block]

    @classmethod
    def from_dict(cls, raw: dict) -> "ChainFixture":
        alloc: dict[str, int] = {}
        for a in raw.get("genesis_allocations", ()):
            addr = norm_address(a["address"])
            alloc[addr] = alloc.get(addr, 0) + int(a["balance"])
        blocks = []
        for b in raw.get("blocks", ()):
            number = int(b["number"])
            txs = [TxRecord.from_dict(t, block=number, index=i)
                   for i, t in enumerate(b.get("txs", ()))]
            blocks.append(Block(number, int(b.get("timestamp", 0)), txs))
        blocks.sort(key=lambda blk: blk.number)
        numbers = [blk.number for blk in blocks]
        if len(numbers) != len(set(numbers)):
            raise ValueError("duplicate block numbers in fixture")
        return cls(alloc, blocks)

    @classmethod
    def load(cls, path: str | Path) -> "ChainFixture":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "genesis_allocations": [{"address": a, "balance": v}
                                    for a, v in sorted(self.genesis_allocations.items())],
            "blocks": [{"number": b.number, "timestamp": b.timestamp,
                        "txs": [t.to_dict() for t in b.txs]} for b in self.blocks],
        }


class _History:
    """Step function over blocks: value after block ``blocks[i]`` is ``values[i]``."""

    __slots__ = ("blocks", "values")

    def __init__(self) -> None:
        self.blocks: list[int] = []
        self.values: list[int] = []

    def set(self, block: int, value: int) -> None:
        if self.blocks and self.blocks[-1] == block:
            self.values[-1] = value
        else:
            self.blocks.append(block)
            self.values.append(value)

    def at(self, block: int) -> int:
        i = bisect_right(self.blocks, block)
        return self.values[i - 1] if i else 0


class FixtureProvider(ChainStateProvider):
    """In-memory provider over a :class:`ChainFixture`.

    All indexes are built eagerly in the constructor and never mutated afterwards, so
    concurrent reads need no locking.
    """

    def __init__(self, fixture: ChainFixture):
        self.fixture = fixture
        self._blocks = {b.number: b for b in fixture.blocks}
        self._height = max(self._blocks, default=0)
        self._txs = {t.tx_id: t for b in fixture.blocks for t in b.txs}
        nonce: dict[str, _History] = defaultdict(_History)
        balance: dict[str, _History] = defaultdict(_History)
        current_nonce: dict[str, int] = defaultdict(int)
        current_bal: dict[str, int] = defaultdict(int)
        for addr, value in fixture.genesis_allocations.items():
            current_bal[addr] += value
            balance[addr].set(0, current_bal[addr])
        for blk in fixture.blocks:
            for tx in blk.txs:
                current_nonce[tx.sender] += 1
                nonce[tx.sender].set(blk.number, current_nonce[tx.sender])
                for t in tx.transfers:
                    if t.amount == 0 or t.sender == t.to:
                        continue
                    current_bal[t.sender] -= t.amount
                    current_bal[t.to] += t.amount
                    balance[t.sender].set(blk.number, current_bal[t.sender])
                    balance[t.to].set(blk.number, current_bal[t.to])
        self._nonce = dict(nonce)
        self._balance = dict(balance)

    @classmethod
    def load(cls, path: str | Path) -> "FixtureProvider":
        return cls(ChainFixture.load(path))

    def height(self) -> int:
        return self._height

    def nonce_at(self, address: str, block: int) -> int:
        h = self._nonce.get(norm_address(address))
        return h.at(block) if h else 0

    def balance_at(self, address: str, block: int) -> int:
        h = self._balance.get(norm_address(address))
        return h.at(block) if h else 0

    def transactions_of(self, block: int) -> Sequence[TxRecord]:
        b = self._blocks.get(block)
        return tuple(b.txs) if b else ()

    def transaction(self, tx_id: str) -> TxRecord | None:
        return self._txs.get(tx_id)

    def balance_change_blocks(self, address: str, upto: int) -> Sequence[int] | None:
        h = self._balance.get(norm_address(address))
        if h is None:
            return ()
        return h.blocks[:bisect_right(h.blocks, upto)]

    def timestamp_of(self, block: int) -> int | None:
        b = self._blocks.get(block)
        return b.timestamp if b else None

    def addresses(self) -> Iterable[str]:
        return sorted(set(self._nonce) | set(self._balance))
