"""Pre-incident source-of-funds tracing.

``one_hop_trace`` finds the transaction that first funded an address: binary-search
the last block where the address has sent nothing (nonce 0), binary-search the first
block before that where its balance is positive, then take the first transaction of
that block carrying a positive native transfer to it. ``trace_to_source`` repeats the
hop backwards until it reaches a labeled entity, and ``link_adversaries`` groups
incidents whose traces share an intermediate address.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .provider import ChainStateProvider, TxRecord, norm_address

log = logging.getLogger(__name__)

KINDS = ("centralized_exchange", "mixer", "bridge", "mining_pool", "genesis", "unknown")
DEFAULT_MAX_HOPS = 10
GENESIS = "genesis"


class TraceError(Exception):
    pass


class NeverActive(TraceError):
    pass


class ActiveAtGenesis(TraceError):
    pass


class NoBalanceBeforeActivity(TraceError):
    pass


class FundingTxNotFound(TraceError):
    pass


class GenesisFunded(TraceError):
    """The address holds a genesis allocation and received nothing else at block 0."""

    def __init__(self, address: str, amount: int):
        super().__init__(f"{address} is funded by a genesis allocation of {amount}")
        self.address = address
        self.amount = amount


@dataclass(frozen=True)
class TraceHop:
    to: str
    funding_tx: str
    sender: str
    block: int
    amount: int

    def to_dict(self) -> dict:
        return {"to": self.to, "funding_tx": self.funding_tx, "from": self.sender,
                "block": self.block, "amount": self.amount}

    @classmethod
    def from_dict(cls, d: dict) -> "TraceHop":
        return cls(d["to"], d["funding_tx"], d["from"], int(d["block"]), int(d["amount"]))


@dataclass(frozen=True)
class FundingSource:
    kind: str
    entity: str | None
    hops: int
    path: tuple[TraceHop, ...]
    note: str | None = None

    @property
    def target(self) -> str | None:
        return self.path[0].to if self.path else None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "entity": self.entity, "hops": self.hops,
                "path": [h.to_dict() for h in self.path], "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "FundingSource":
        return cls(d["kind"], d.get("entity"), int(d["hops"]),
                   tuple(TraceHop.from_dict(h) for h in d.get("path", ())), d.get("note"))


@dataclass(frozen=True)
class Label:
    name: str
    kind: str


@dataclass
class LabelRegistry:
    entries: dict[str, Label] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.entries = {norm_address(a): lab for a, lab in self.entries.items()}
        for a, lab in self.entries.items():
            if lab.kind not in KINDS or lab.kind in ("genesis", "unknown"):
                raise ValueError(f"label for {a}: unsupported kind {lab.kind!r}")

    def get(self, address: str) -> Label | None:
        return self.entries.get(norm_address(address))

    def __contains__(self, address: str) -> bool:
        return norm_address(address) in self.entries

    @classmethod
    def load_csv(cls, path: str | Path) -> "LabelRegistry":
        entries: dict[str, Label] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                addr = norm_address(row["address"])
                if addr in entries:
                    raise ValueError(f"duplicate label for {addr}")
                entries[addr] = Label(row["name"].strip(), row["kind"].strip())
        return cls(entries)


# binary searches -----------------------------------------------------------------

def _first_true(lo: int, hi: int, pred: Callable[[int], bool]) -> int:
    """Smallest b in (lo, hi] with pred(b), given not pred(lo) and pred(hi)."""
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def find_first_activity(provider: ChainStateProvider, target: str) -> int:
    """Last block at which ``target`` has sent no transaction."""
    target = norm_address(target)
    head = provider.height()
    if provider.nonce_at(target, 0) > 0:
        raise ActiveAtGenesis(f"{target} has a non-zero nonce at block 0")
    if provider.nonce_at(target, head) == 0:
        raise NeverActive(f"{target} has not sent a transaction by block {head}")
    b_first = _first_true(0, head, lambda b: provider.nonce_at(target, b) > 0) - 1
    assert provider.nonce_at(target, b_first) == 0 < provider.nonce_at(target, b_first + 1)
    return b_first


def find_funding_block(provider: ChainStateProvider, target: str, b_first: int,
                       verify_prefix: bool = True) -> int:
    """First block at or before ``b_first`` where ``target`` holds a positive balance.

    Binary search assumes the balance is zero on a prefix and positive afterwards. An
    externally owned account cannot lose balance before its first transaction, but
    fixtures (and contracts) can: with ``verify_prefix`` the result is checked against
    every earlier block and replaced by a forward scan when an earlier positive
    balance exists.
    """
    target = norm_address(target)

    def positive(b: int) -> bool:
        return provider.balance_at(target, b) > 0

    if not positive(b_first):
        raise NoBalanceBeforeActivity(f"{target} has zero balance at block {b_first}")
    if positive(0):
        return 0
    candidate = _first_true(0, b_first, positive)
    if not (positive(candidate) and not positive(candidate - 1)):
        log.debug("boundary check failed for %s at %d", target, candidate)
        return _scan_first_positive(positive, b_first)
    if verify_prefix:
        changes = provider.balance_change_blocks(target, candidate - 2)
        probe = range(1, candidate - 1) if changes is None else changes
        earlier = any(positive(b) for b in probe)
    else:
        earlier = False
    if earlier:
        log.debug("non-monotone balance prefix for %s before %d", target, candidate)
        return _scan_first_positive(positive, candidate)
    return candidate


def _scan_first_positive(positive: Callable[[int], bool], upto: int) -> int:
    return next(b for b in range(upto + 1) if positive(b))


def _first_transfer_to(tx: TxRecord, target: str):
    return next((t for t in tx.transfers if t.to == target and t.amount > 0 and t.sender != target),
                None)


def one_hop_trace(provider: ChainStateProvider, target: str,
                  verify_prefix: bool = True) -> TraceHop:
    target = norm_address(target)
    b_first = find_first_activity(provider, target)
    b_funding = find_funding_block(provider, target, b_first, verify_prefix)
    for tx in provider.transactions_of(b_funding):
        t = _first_transfer_to(tx, target)
        if t is not None:
            return TraceHop(target, tx.tx_id, t.sender, b_funding, t.amount)
    if b_funding == 0:
        raise GenesisFunded(target, provider.balance_at(target, 0))
    raise FundingTxNotFound(f"no native transfer to {target} in block {b_funding}")


# multi-hop tracing ---------------------------------------------------------------

def trace_to_source(provider: ChainStateProvider, registry: LabelRegistry, target: str,
                    max_hops: int = DEFAULT_MAX_HOPS, verify_prefix: bool = True) -> FundingSource:
    """Follow first-funding hops backwards from ``target`` until a labeled source.

    A hop from a labeled mixer is terminal only when the withdrawal's fee was paid by a
    third party (a relayer), i.e. by an address not already on the traced chain.
    Otherwise the fee payer is taken to be linked to the withdrawer and tracing
    continues from the fee payer.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    target = norm_address(target)
    path: list[TraceHop] = []
    on_path = {target}
    current = target

    def unknown(note: str) -> FundingSource:
        return FundingSource("unknown", None, len(path), tuple(path), note)

    while len(path) < max_hops:
        try:
            hop = one_hop_trace(provider, current, verify_prefix)
        except GenesisFunded as g:
            path.append(TraceHop(current, GENESIS, GENESIS, 0, g.amount))
            return FundingSource("genesis", None, len(path), tuple(path))
        except TraceError as exc:
            return unknown(f"{type(exc).__name__}: {exc}")
        path.append(hop)
        label = registry.get(hop.sender)
        next_addr = hop.sender
        if label is not None and label.kind == "mixer":
            tx = _lookup_tx(provider, hop)
            if tx.fee_payer not in on_path:
                return FundingSource("mixer", label.name, len(path), tuple(path))
            if tx.fee_payer == current:
                return unknown(f"self-paid withdrawal from mixer {label.name}")
            next_addr = tx.fee_payer
        elif label is not None:
            return FundingSource(label.kind, label.name, len(path), tuple(path))
        if next_addr in on_path:
            return unknown(f"trace revisits {next_addr}")
        on_path.add(next_addr)
        current = next_addr
    return unknown(f"no labeled source within {max_hops} hops")


def _lookup_tx(provider: ChainStateProvider, hop: TraceHop) -> TxRecord:
    tx = provider.transaction(hop.funding_tx)
    if tx is None:
        tx = next(t for t in provider.transactions_of(hop.block) if t.tx_id == hop.funding_tx)
    return tx


# linked adversaries --------------------------------------------------------------

@dataclass(frozen=True)
class LinkMember:
    incident_id: str
    adversary: str
    hops: int


@dataclass(frozen=True)
class LinkCluster:
    suspect: str
    members: tuple[LinkMember, ...]

    @property
    def incidents(self) -> frozenset[str]:
        return frozenset(m.incident_id for m in self.members)

    def to_dict(self) -> dict:
        return {"suspect": self.suspect,
                "members": [{"incident_id": m.incident_id, "adversary": m.adversary,
                             "hops": m.hops} for m in self.members]}


def path_distances(source: FundingSource, k: int,
                   exclude: frozenset[str] = frozenset()) -> dict[str, int]:
    """Funder addresses within ``k`` hops of the adversary, mapped to hop distance.

    The terminal labeled entity (exchange, mixer, ...) and anything in ``exclude`` are
    left out: sharing a hot wallet or a mixer links nobody.
    """
    out: dict[str, int] = {}
    terminal = len(source.path) if source.kind not in ("unknown", "genesis") else None
    for i, hop in enumerate(source.path[:k], start=1):
        if hop.sender == GENESIS or hop.sender in exclude or i == terminal:
            continue
        out.setdefault(hop.sender, i)
    return out


def link_adversaries(sources: Iterable[tuple[str, FundingSource]], k: int = 3,
                     exclude: Iterable[str] = ()) -> list[LinkCluster]:
    """Group incidents whose traces pass through a common address within ``k`` hops.

    One cluster is reported per shared address. A cluster is suppressed when another
    cluster covers the same incidents through an address that is nearer on every
    member's trace, which removes the upstream echoes of one suspect.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sources = list(sources)
    excluded = frozenset(norm_address(a) for a in exclude)
    dists = [path_distances(src, k, excluded) for _, src in sources]
    by_addr: dict[str, list[int]] = {}
    for idx, d in enumerate(dists):
        for addr in d:
            by_addr.setdefault(addr, []).append(idx)

    candidates = {}
    for addr, idxs in by_addr.items():
        incidents = {sources[i][0] for i in idxs}
        if len(incidents) >= 2:
            candidates[addr] = idxs

    def dominated(addr: str) -> bool:
        idxs = candidates[addr]
        inc = {sources[i][0] for i in idxs}
        for other, oidxs in candidates.items():
            if other == addr or not inc <= {sources[i][0] for i in oidxs}:
                continue
            if all(other in dists[i] and dists[i][other] < dists[i][addr] for i in idxs):
                return True
        return False

    out = []
    for addr in sorted(candidates):
        if dominated(addr):
            continue
        members = sorted(
            (LinkMember(sources[i][0], sources[i][1].target or "", dists[i][addr])
             for i in candidates[addr]),
            key=lambda m: (m.incident_id, m.adversary),
        )
        out.append(LinkCluster(addr, tuple(members)))
    out.sort(key=lambda c: (-len(c.incidents), c.suspect))
    return out
