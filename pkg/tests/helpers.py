"""Shared fixture builders and brute-force oracles for the test suite."""

from __future__ import annotations

import random
from collections import defaultdict

from defi_forensics.clones import Cluster, SimilarityMatrix


# chains --------------------------------------------------------------------------

def tx(tx_id, sender, transfers=(), fee_payer=None):
    d = {"tx_id": tx_id, "sender": sender,
         "transfers": [{"from": f, "to": t, "amount": a} for f, t, a in transfers]}
    if fee_payer is not None:
        d["fee_payer"] = fee_payer
    return d


def chain(blocks: dict[int, list[dict]], genesis=(), head: int | None = None) -> dict:
    """Build fixture JSON from {block_number: [tx, ...]}; ``head`` adds an empty tip block."""
    numbers = sorted(blocks)
    if head is not None and head not in blocks:
        numbers.append(head)
    return {
        "genesis_allocations": [{"address": a, "balance": v} for a, v in genesis],
        "blocks": [{"number": n, "timestamp": 1_600_000_000 + 12 * n, "txs": blocks.get(n, [])}
                   for n in sorted(numbers)],
    }


def random_chain(rng: random.Random, max_blocks: int = 1000, max_addresses: int = 50) -> dict:
    """Random fixture with internal transfers, third-party drains and sponsored senders.

    Balances never go negative. A handful of addresses act as contracts: they never
    send transactions but forward value inside other senders' transactions.
    """
    n_blocks = rng.randint(20, max_blocks)
    n_addr = rng.randint(6, max_addresses)
    addrs = [f"0x{i:040x}" for i in range(1, n_addr + 1)]
    contracts = set(rng.sample(addrs, max(1, n_addr // 10)))
    eoas = [a for a in addrs if a not in contracts]
    funders = rng.sample(eoas, max(1, len(eoas) // 6))
    bal = defaultdict(int)
    genesis = []
    for f in funders:
        v = rng.randint(10_000, 1_000_000)
        genesis.append((f, v))
        bal[f] += v

    blocks: dict[int, list[dict]] = {}
    n_txs = rng.randint(n_blocks // 8 + 5, n_blocks // 3 + 10)
    block_ids = sorted(rng.choice(range(n_blocks + 1)) for _ in range(n_txs))
    sent = defaultdict(int)
    counter = 0
    for b in block_ids:
        counter += 1
        tid = f"t{counter}"
        roll = rng.random()
        rich = [a for a in eoas if bal[a] > 1]
        if roll < 0.08 or not rich:
            # sponsored / feeless sender with no value movement
            sender = rng.choice(eoas)
            t = tx(tid, sender)
        elif roll < 0.18:
            # third party drains an address that has not sent anything yet
            victims = [a for a in addrs if bal[a] > 0 and sent[a] == 0]
            if not victims:
                continue
            victim = rng.choice(victims)
            sender = rng.choice(eoas)
            dest = rng.choice(addrs)
            if dest == victim:
                continue
            amount = bal[victim]
            bal[victim] -= amount
            bal[dest] += amount
            t = tx(tid, sender, [(victim, dest, amount)])
        else:
            sender = rng.choice(rich)
            out = []
            for _ in range(rng.choice((1, 1, 1, 2, 3))):
                if bal[sender] <= 1:
                    break
                amount = rng.choice((0, rng.randint(1, bal[sender] // 2 or 1)))
                dest = rng.choice(addrs)
                if dest == sender:
                    continue
                if rng.random() < 0.25:
                    via = rng.choice(sorted(contracts))
                    if via in (sender, dest):
                        continue
                    out += [(sender, via, amount), (via, dest, amount)]
                else:
                    out.append((sender, dest, amount))
                bal[sender] -= amount
                bal[dest] += amount
            fee_payer = rng.choice(eoas) if rng.random() < 0.1 else None
            t = tx(tid, sender, out, fee_payer)
        sent[t["sender"]] += 1
        blocks.setdefault(b, []).append(t)
    return chain(blocks, genesis, head=n_blocks)


class ReplayOracle:
    """Linear-scan answers computed straight from the fixture JSON."""

    def __init__(self, fixture: dict):
        self.fixture = fixture
        self.blocks = sorted(fixture["blocks"], key=lambda b: b["number"])
        self.head = self.blocks[-1]["number"] if self.blocks else 0
        genesis = defaultdict(int)
        for a in fixture["genesis_allocations"]:
            genesis[a["address"].lower()] += a["balance"]
        self.genesis = genesis

    def _walk(self, target):
        """Yield (block, nonce_after, balance_after) for every block 0..head."""
        by_number = {b["number"]: b for b in self.blocks}
        nonce, balance = 0, self.genesis.get(target, 0)
        for n in range(self.head + 1):
            for t in by_number.get(n, {"txs": []})["txs"]:
                if t["sender"].lower() == target:
                    nonce += 1
                for tr in t["transfers"]:
                    if tr["amount"] == 0 or tr["from"] == tr["to"]:
                        continue
                    if tr["from"].lower() == target:
                        balance -= tr["amount"]
                    if tr["to"].lower() == target:
                        balance += tr["amount"]
            yield n, nonce, balance

    def one_hop(self, target: str):
        """("ok", tx_id, from, block) or (error_name,)."""
        target = target.lower()
        history = list(self._walk(target))
        if history[0][1] > 0:
            return ("ActiveAtGenesis",)
        first_send = next((n for n, nonce, _ in history if nonce > 0), None)
        if first_send is None:
            return ("NeverActive",)
        b_first = first_send - 1
        if history[b_first][2] <= 0:
            return ("NoBalanceBeforeActivity",)
        b_funding = next(n for n, _, bal in history[:b_first + 1] if bal > 0)
        block = next((b for b in self.blocks if b["number"] == b_funding), {"txs": []})
        for t in block["txs"]:
            for tr in t["transfers"]:
                if tr["to"].lower() == target and tr["amount"] > 0 and tr["from"].lower() != target:
                    return ("ok", t["tx_id"], tr["from"].lower(), b_funding)
        return ("GenesisFunded",) if b_funding == 0 else ("FundingTxNotFound",)

    def first_activity(self, target: str) -> int | None:
        target = target.lower()
        for n, nonce, _ in self._walk(target):
            if nonce > 0:
                return n - 1
        return None


# clustering ----------------------------------------------------------------------

def random_matrix(rng: random.Random, k: int, levels=(0.0, 0.3, 0.5, 0.8, 0.9, 1.0)):
    ids = tuple(f"c{i:03d}" for i in range(k))
    rows = [[1.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            rows[i][j] = rows[j][i] = rng.choice(levels)
    return SimilarityMatrix(ids, tuple(map(tuple, rows)))


def components_oracle(matrix: SimilarityMatrix, threshold: float) -> set[frozenset[str]]:
    """Connected components by repeated BFS over an explicit adjacency list."""
    k = len(matrix)
    adj = {i: [j for j in range(k) if j != i and matrix.scores[i][j] >= threshold]
           for i in range(k)}
    seen, comps = set(), set()
    for start in range(k):
        if start in seen:
            continue
        stack, comp = [start], set()
        while stack:
            v = stack.pop()
            if v in comp:
                continue
            comp.add(v)
            stack.extend(adj[v])
        seen |= comp
        if len(comp) > 1:
            comps.add(frozenset(matrix.ids[i] for i in comp))
    return comps


def membership(clusters: list[Cluster]) -> set[frozenset[str]]:
    return {c.members for c in clusters}


# bytecode corpora ----------------------------------------------------------------

DEFINED_OPS = [b for b in range(256) if b not in (0xFE,) and not 0x60 <= b <= 0x7F]


def program(rng: random.Random, length: int) -> list[int]:
    """Opcode skeleton: byte values, PUSH opcodes included, immediates filled later."""
    return [rng.choice(DEFINED_OPS + list(range(0x60, 0x80))) for _ in range(length)]


def assemble(rng: random.Random, ops: list[int]) -> bytes:
    """Emit ``ops`` with fresh random PUSH immediates and a random metadata trailer.

    Two assemblies of the same skeleton differ in bytes but normalize identically.
    """
    out = bytearray()
    for op in ops:
        out.append(op)
        if 0x60 <= op <= 0x7F:
            out += rng.randbytes(op - 0x5F)
    body = b"\xa1\x64ipfs\x58\x22" + rng.randbytes(34)
    return bytes(out) + body + len(body).to_bytes(2, "big")


def write_corpus(tmp_path, rng: random.Random, family_sizes, singletons: int,
                 category: str, program_len: int = 80) -> list[dict]:
    """Families of exact clones (one incident per member) plus unrelated singletons."""
    entries = []
    groups = [(f"{category}-fam{i}", size) for i, size in enumerate(family_sizes)]
    groups += [(f"{category}-solo{i}", 1) for i in range(singletons)]
    for name, size in groups:
        skeleton = program(rng, program_len)
        for j in range(size):
            sid = f"{name}-{j}"
            path = tmp_path / f"{sid}.hex"
            path.write_text("0x" + assemble(rng, skeleton).hex())
            entries.append({"source_id": sid, "bytecode_path": path.name,
                            "incident_id": f"inc-{sid}", "category": category})
    return entries


# linked adversaries --------------------------------------------------------------

EXCHANGE = "0xexchange"


class LinkedChain:
    """Builds fixtures where suspects fund adversaries through fresh intermediaries.

    Every suspect and every unlinked adversary is funded by one labeled exchange, so
    the exchange itself must never link anything.
    """

    def __init__(self) -> None:
        self.blocks: dict[int, list[dict]] = {}
        self.block = 1
        self.counter = 0
        self.adversaries: list[tuple[str, str]] = []  # (incident_id, address)
        self.fresh = 0

    def _send(self, sender, to, amount):
        self.counter += 1
        self.blocks.setdefault(self.block, []).append(
            tx(f"tx{self.counter}", sender, [(sender, to, amount)]))
        self.block += 1

    def _addr(self, prefix):
        self.fresh += 1
        return f"0x{prefix}{self.fresh:04d}"

    def suspect(self, name: str, members: list[tuple[str, int]]) -> None:
        """``members`` are (incident_id, hop distance of the suspect from the adversary)."""
        self._send(EXCHANGE, name, 10**12)
        for incident, hops in members:
            self.adversary(incident, funder=name, hops=hops)

    def adversary(self, incident: str, funder: str = EXCHANGE, hops: int = 1) -> str:
        chain = [funder] + [self._addr("mid") for _ in range(hops - 1)] + [self._addr("adv")]
        for a, b in zip(chain, chain[1:]):
            self._send(a, b, 10**6)
        self._send(chain[-1], self._addr("sink"), 1)
        self.adversaries.append((incident, chain[-1]))
        return chain[-1]

    def fixture(self) -> dict:
        return chain(self.blocks, genesis=[(EXCHANGE, 10**15)], head=self.block + 5)


def shared_funder_chain() -> LinkedChain:
    """Shared funders at hops 1-3 for five groups, and one pair sharing at hops 8/9."""
    c = LinkedChain()
    c.suspect("0xsuspect1", [("wildcredit", 2), ("defisaver", 2), ("dodo", 1),
                             ("visorfinance", 2), ("makerdao", 1)])
    c.suspect("0xsuspect2", [("buccaneerfi-1", 3), ("infinitytoken", 1)])
    c.suspect("0xsuspect3", [("sodafinance", 2), ("buccaneerfi-2", 1)])
    c.suspect("0xsuspect4", [("bzx", 2), ("forcedao", 1)])
    c.suspect("0xsuspect5", [("pancakehunny", 2), ("boggedfinance", 1)])
    c.suspect("0xsuspect6", [("makerdao", 8), ("badgerdao", 9)])
    for incident in ("cream", "alpha", "harvest"):
        c.adversary(incident)
    return c


NEAR_LINKS = {
    frozenset({"wildcredit", "defisaver", "dodo", "visorfinance", "makerdao"}),
    frozenset({"buccaneerfi-1", "infinitytoken"}),
    frozenset({"sodafinance", "buccaneerfi-2"}),
    frozenset({"bzx", "forcedao"}),
    frozenset({"pancakehunny", "boggedfinance"}),
}
FAR_LINK = frozenset({"makerdao", "badgerdao"})


def linked_pairs_oracle(sources, k: int) -> set[frozenset[str]]:
    """Incident pairs whose traces share a non-terminal funder within ``k`` hops."""
    reach = []
    for incident, src in sources:
        terminal = len(src.path) if src.kind not in ("unknown", "genesis") else None
        addrs = {h.sender for i, h in enumerate(src.path[:k], 1)
                 if i != terminal and h.sender != "genesis"}
        reach.append((incident, addrs))
    pairs = set()
    for i, (a, ra) in enumerate(reach):
        for b, rb in reach[i + 1:]:
            if a != b and ra & rb:
                pairs.add(frozenset({a, b}))
    return pairs


# incidents -----------------------------------------------------------------------

REENTRANCY = {"layer": "SC", "cause": "Untrusted or unsafe calls", "incident_type": "Reentrancy"}
ORACLE = {"layer": "PRO", "cause": "Unsafe dependency",
          "incident_type": "On-chain oracle manipulation"}


def incident(id: str = "inc-1", **overrides) -> dict:
    raw = {
        "id": id,
        "chain": "Ethereum",
        "date": "2021-05-10",
        "taxonomy": [REENTRANCY],
        "protocol_type": "lending",
        "loss_usd": 1000,
        "audit_status": "Audited",
        "supports_pause": False,
    }
    raw.update(overrides)
    return raw


def records(raws):
    from defi_forensics.incidents import records_from_dicts

    return records_from_dicts(raws)


def pause_fixture() -> list[dict]:
    """51 pause-capable incidents spread 1/24/11/7/8 over the delay buckets, plus
    unpaused and non-pausable noise that must not be counted."""
    hour = 3600
    delays = [30 * 60] + [5 * hour] * 24 + [10 * hour] * 11 + [20 * hour] * 7 + [40 * hour] * 8
    raws = [incident(f"p{i:02d}", supports_pause=True, pause_delay=d)
            for i, d in enumerate(delays)]
    raws += [incident(f"n{i}", supports_pause=False) for i in range(5)]
    return raws


def atomicity_fixture(total: int = 184, non_atomic: int = 103) -> list[dict]:
    """``non_atomic`` records with a separate earlier deploy; the rest split between
    batched deploy-and-exploit and exploits without a contract."""
    raws = []
    for i in range(total):
        stamps = {"f": 10_000 + i, "l": 10_500 + i}
        extra = {}
        if i < non_atomic:
            stamps["d"] = 1_000 + i
            extra["deploy_tx"] = "d"
        elif i % 2:
            extra["deploy_tx"] = "f"  # deployed and exploited in one transaction
        raws.append(incident(f"a{i:03d}", first_malicious_tx="f", last_malicious_tx="l",
                             tx_timestamps=stamps, **extra))
    return raws


# CLI workspace -------------------------------------------------------------------

def cli_workspace(root) -> dict[str, list[str]]:
    """Write one input set per subcommand under ``root`` and return argv lists
    (without ``--out``) that exercise every command."""
    import json
    import numpy as np

    rng = random.Random(99)
    corpus = root / "corpus"
    corpus.mkdir()
    entries = write_corpus(corpus, rng, [4, 3], 5, "vulnerable")
    entries += write_corpus(corpus, rng, [3], 4, "adversarial")
    (corpus / "manifest.json").write_text(json.dumps(entries))

    linked = shared_funder_chain()
    (root / "chain.json").write_text(json.dumps(linked.fixture()))
    (root / "labels.csv").write_text(f"address,name,kind\n{EXCHANGE},Exchange,centralized_exchange\n")
    (root / "targets.csv").write_text(
        "incident_id,address\n" + "".join(f"{i},{a}\n" for i, a in linked.adversaries))

    gen = np.random.default_rng(5)
    m = 100 * np.cumprod(1 + gen.normal(0, 0.01, 400))
    t = 10 * np.cumprod(1 + 0.0002 + 1.2 * np.diff(m, prepend=100) / np.r_[100, m[:-1]]
                        + gen.normal(0, 0.002, 400))
    for name, prices in (("token", t), ("btc", m), ("eth", m * 0.05 + 3)):
        (root / f"{name}.csv").write_text(
            "tick,price\n" + "".join(f"{i},{float(p)!r}\n" for i, p in enumerate(prices)))

    dataset = pause_fixture() + atomicity_fixture(20, 11)
    (root / "incidents.json").write_text(json.dumps(dataset))

    commands = {
        "disasm": ["disasm", "--file", str(corpus / f"{entries[0]['source_id']}.hex"),
                   "--format", "json"],
        "clone": ["clone", "--manifest", str(corpus / "manifest.json"), "--threshold", "1.0"],
        "trace": ["trace", "--chain", str(root / "chain.json"), "--labels",
                  str(root / "labels.csv"), "--targets", str(root / "targets.csv")],
        "car": ["car", "--token", str(root / "token.csv"), "--btc", str(root / "btc.csv"),
                "--eth", str(root / "eth.csv"), "--event-tick", "250"],
    }
    for analysis in ("monthly", "protocol", "pause", "timeframes", "atomicity", "sem"):
        commands[f"stats-{analysis}"] = ["stats", "--analysis", analysis,
                                         "--dataset", str(root / "incidents.json")]
    commands["stats-audit"] = ["stats", "--analysis", "audit",
                               "--audit-counts", "563,23,213,33"]
    return commands
