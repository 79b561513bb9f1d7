"""Incident taxonomy and the per-incident record schema.

The taxonomy ships as ``data/taxonomy.csv``: one (layer, cause, type) triple per row
across the five system layers. Records are loaded from JSON (or CSV) and validated in
one pass so that every violation is reported at once.

Money is held as integer cents. Optional facts that were not observed stay ``None``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from datetime import date
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

TAXONOMY_VERSION = "1"
STUDY_PERIOD = (date(2018, 4, 30), date(2022, 4, 30))

CHAINS = ("Ethereum", "BSC")
PROTOCOL_TYPES = ("yield", "bridge", "lending", "dex", "stablecoin", "dao", "payment",
                  "derivatives", "insurance", "other")
AUDIT_STATUSES = ("Audited", "PartiallyAudited", "NotAudited")


class Layer(str, enum.Enum):
    NET = "NET"
    CON = "CON"
    SC = "SC"
    PRO = "PRO"
    AUX = "AUX"


@dataclass(frozen=True)
class TaxonomyEntry:
    layer: Layer
    cause: str
    incident_type: str

    def to_dict(self) -> dict:
        return {"layer": self.layer.value, "cause": self.cause, "incident_type": self.incident_type}


@lru_cache(maxsize=1)
def taxonomy_table() -> tuple[TaxonomyEntry, ...]:
    text = resources.files("defi_forensics").joinpath("data/taxonomy.csv").read_text()
    return tuple(TaxonomyEntry(Layer(r["layer"]), r["cause"], r["incident_type"])
                 for r in csv.DictReader(io.StringIO(text)))


@lru_cache(maxsize=1)
def _taxonomy_set() -> frozenset[tuple[str, str, str]]:
    return frozenset((e.layer.value, e.cause, e.incident_type) for e in taxonomy_table())


def validate_taxonomy(entry: TaxonomyEntry | tuple) -> bool:
    if isinstance(entry, TaxonomyEntry):
        key = (entry.layer.value, entry.cause, entry.incident_type)
    else:
        layer, cause, kind = entry
        key = (getattr(layer, "value", layer), cause, kind)
    return key in _taxonomy_set()


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


def _cents(value: Any) -> int:
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        raise ValueError(f"not a monetary amount: {value!r}") from None
    if not d.is_finite():
        raise ValueError(f"not a monetary amount: {value!r}")
    return int((d * 100).to_integral_value(ROUND_HALF_UP))


def _usd(cents: int) -> int | float:
    """JSON form of a cent amount: an integer when whole dollars, else a 2-dp float.

    Floats print with the shortest round-tripping repr, so the two decimals survive.
    """
    if cents % 100 == 0:
        return cents // 100
    return cents / 100


@dataclass(frozen=True)
class IncidentRecord:
    id: str
    chain: str
    date: date
    taxonomy: tuple[TaxonomyEntry, ...]
    protocol_type: str
    loss_cents: int
    audit_status: str
    supports_pause: bool
    tvl_cents: int | None = None
    car: float | None = None
    disclosed_within_20d: bool | None = None
    reimbursed_within_20d: bool | None = None
    pause_delay: int | None = None  # seconds
    adversary_addresses: tuple[str, ...] = ()
    victim_contracts: tuple[str, ...] = ()
    deploy_tx: str | None = None
    first_malicious_tx: str | None = None
    last_malicious_tx: str | None = None
    tx_timestamps: dict[str, int] = field(default_factory=dict, compare=True, hash=False)

    @property
    def loss_usd(self) -> Decimal:
        return Decimal(self.loss_cents) / 100

    @property
    def tvl_usd(self) -> Decimal | None:
        return None if self.tvl_cents is None else Decimal(self.tvl_cents) / 100

    @property
    def layers(self) -> frozenset[Layer]:
        return frozenset(t.layer for t in self.taxonomy)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "chain": self.chain,
            "date": self.date.isoformat(),
            "taxonomy": [t.to_dict() for t in self.taxonomy],
            "protocol_type": self.protocol_type,
            "loss_usd": _usd(self.loss_cents),
            "tvl_usd": None if self.tvl_cents is None else _usd(self.tvl_cents),
            "car": self.car,
            "audit_status": self.audit_status,
            "disclosed_within_20d": self.disclosed_within_20d,
            "reimbursed_within_20d": self.reimbursed_within_20d,
            "supports_pause": self.supports_pause,
            "pause_delay": self.pause_delay,
            "adversary_addresses": list(self.adversary_addresses),
            "victim_contracts": list(self.victim_contracts),
            "deploy_tx": self.deploy_tx,
            "first_malicious_tx": self.first_malicious_tx,
            "last_malicious_tx": self.last_malicious_tx,
            "tx_timestamps": dict(self.tx_timestamps),
        }


_REQUIRED = ("id", "chain", "date", "taxonomy", "protocol_type", "loss_usd",
             "audit_status", "supports_pause")


def _opt_bool(raw: dict, key: str, problems: list[str], rid: str) -> bool | None:
    v = raw.get(key)
    if v is None or isinstance(v, bool):
        return v
    problems.append(f"{rid}: {key} must be a boolean or null")
    return None


def record_from_dict(raw: dict, *, permissive: bool = False,
                     period: tuple[date, date] | None = STUDY_PERIOD) -> tuple[IncidentRecord | None, list[str]]:
    """Build one record, returning it together with every violation found.

    ``permissive`` downgrades unknown taxonomy triples from errors to accepted entries.
    ``period=None`` lifts the date-range restriction for data outside the study period.
    """
    rid = str(raw.get("id", "<no id>"))
    problems: list[str] = []
    missing = [k for k in _REQUIRED if raw.get(k) is None]
    if missing:
        return None, [f"{rid}: missing field(s) {', '.join(missing)}"]

    chain = raw["chain"]
    if chain not in CHAINS:
        problems.append(f"{rid}: unknown chain {chain!r}")
    try:
        day = date.fromisoformat(str(raw["date"]))
    except ValueError:
        problems.append(f"{rid}: bad date {raw['date']!r}")
        day = None
    if day and period and not period[0] <= day <= period[1]:
        problems.append(f"{rid}: date {day} outside {period[0]}..{period[1]}")

    entries = []
    if not raw["taxonomy"]:
        problems.append(f"{rid}: taxonomy list is empty")
    for t in raw["taxonomy"]:
        try:
            entry = TaxonomyEntry(Layer(t["layer"]), t["cause"], t["incident_type"])
        except (KeyError, ValueError, TypeError):
            problems.append(f"{rid}: malformed taxonomy entry {t!r}")
            continue
        if not validate_taxonomy(entry) and not permissive:
            problems.append(f"{rid}: unknown taxonomy triple "
                            f"({entry.layer.value}, {entry.cause!r}, {entry.incident_type!r})")
        entries.append(entry)

    if raw["protocol_type"] not in PROTOCOL_TYPES:
        problems.append(f"{rid}: unknown protocol_type {raw['protocol_type']!r}")
    if raw["audit_status"] not in AUDIT_STATUSES:
        problems.append(f"{rid}: unknown audit_status {raw['audit_status']!r}")
    if not isinstance(raw["supports_pause"], bool):
        problems.append(f"{rid}: supports_pause must be a boolean")

    loss = tvl = None
    try:
        loss = _cents(raw["loss_usd"])
        if loss < 0:
            problems.append(f"{rid}: negative loss_usd")
        if raw.get("tvl_usd") is not None:
            tvl = _cents(raw["tvl_usd"])
            if tvl < 0:
                problems.append(f"{rid}: negative tvl_usd")
    except ValueError as exc:
        problems.append(f"{rid}: {exc}")

    car = raw.get("car")
    if car is not None and not isinstance(car, (int, float, Decimal)):
        problems.append(f"{rid}: car must be numeric")
    delay = raw.get("pause_delay")
    if delay is not None and (not isinstance(delay, int) or isinstance(delay, bool) or delay < 0):
        problems.append(f"{rid}: pause_delay must be a non-negative integer of seconds")

    stamps = raw.get("tx_timestamps") or {}
    if not isinstance(stamps, dict) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in stamps.values()):
        problems.append(f"{rid}: tx_timestamps must map tx ids to integer timestamps")
        stamps = {}
    first, last = raw.get("first_malicious_tx"), raw.get("last_malicious_tx")
    if first in stamps and last in stamps and stamps[first] > stamps[last]:
        problems.append(f"{rid}: first malicious tx is later than the last one")

    disclosed = _opt_bool(raw, "disclosed_within_20d", problems, rid)
    reimbursed = _opt_bool(raw, "reimbursed_within_20d", problems, rid)
    if problems:
        return None, problems
    return IncidentRecord(
        id=rid, chain=chain, date=day, taxonomy=tuple(entries),
        protocol_type=raw["protocol_type"], loss_cents=loss,
        audit_status=raw["audit_status"], supports_pause=raw["supports_pause"],
        tvl_cents=tvl, car=None if car is None else float(car),
        disclosed_within_20d=disclosed, reimbursed_within_20d=reimbursed,
        pause_delay=delay,
        adversary_addresses=tuple(raw.get("adversary_addresses") or ()),
        victim_contracts=tuple(raw.get("victim_contracts") or ()),
        deploy_tx=raw.get("deploy_tx"), first_malicious_tx=first, last_malicious_tx=last,
        tx_timestamps={str(k): int(v) for k, v in stamps.items()},
    ), []


def records_from_dicts(raws: Iterable[dict], **kw) -> list[IncidentRecord]:
    records, problems = [], []
    seen = set()
    for raw in raws:
        if not isinstance(raw, dict):
            problems.append(f"record is not an object: {raw!r}")
            continue
        rec, errs = record_from_dict(raw, **kw)
        problems.extend(errs)
        if rec is not None:
            if rec.id in seen:
                problems.append(f"{rec.id}: duplicate id")
            seen.add(rec.id)
            records.append(rec)
    if problems:
        raise ValidationError(problems)
    return records


def load_dataset(path: str | Path, *, permissive: bool = False,
                 period: tuple[date, date] | None = STUDY_PERIOD) -> list[IncidentRecord]:
    """Load and validate a dataset; ``.csv`` files go through :func:`load_csv`."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path, permissive=permissive, period=period)
    try:
        raw = json.loads(path.read_text(), parse_float=Decimal)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of records")
    return records_from_dicts(raw, permissive=permissive, period=period)


def dumps_dataset(records: Iterable[IncidentRecord]) -> str:
    payload = [r.to_dict() for r in records]
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


# CSV import ----------------------------------------------------------------------

_CSV_LISTS = ("adversary_addresses", "victim_contracts")


def _csv_bool(text: str) -> bool | None:
    text = text.strip().lower()
    if text == "":
        return None
    if text in ("true", "yes", "1"):
        return True
    if text in ("false", "no", "0"):
        return False
    return text  # type: ignore[return-value]  # rejected by validation


def _csv_row(row: dict) -> dict:
    out: dict[str, Any] = {}
    for k, v in row.items():
        v = (v or "").strip()
        out[k] = v if v != "" else None
    out["taxonomy"] = []
    for triple in filter(None, (row.get("taxonomy") or "").split(";")):
        parts = [p.strip() for p in triple.split("|")]
        if len(parts) == 3:
            out["taxonomy"].append(dict(zip(("layer", "cause", "incident_type"), parts)))
        else:
            out["taxonomy"].append({"raw": triple})
    for key in _CSV_LISTS:
        out[key] = [a.strip() for a in (row.get(key) or "").split(";") if a.strip()]
    stamps = {}
    for pair in filter(None, (row.get("tx_timestamps") or "").split(";")):
        tx, _, ts = pair.partition("=")
        stamps[tx.strip()] = int(ts)
    out["tx_timestamps"] = stamps
    for key in ("supports_pause", "disclosed_within_20d", "reimbursed_within_20d"):
        out[key] = _csv_bool(row.get(key) or "")
    for key in ("loss_usd", "tvl_usd"):
        if out.get(key) is not None:
            out[key] = Decimal(out[key])
    if out.get("car") is not None:
        out["car"] = float(out["car"])
    if out.get("pause_delay") is not None:
        out["pause_delay"] = int(out["pause_delay"])
    return out


def load_csv(path: str | Path, **kw) -> list[IncidentRecord]:
    """One incident per row. ``taxonomy`` holds ``LAYER|cause|type`` triples separated by
    ``;``; list columns are ``;``-separated; ``tx_timestamps`` is ``tx=unix;...``."""
    try:
        with open(path, newline="") as fh:
            rows = [_csv_row(r) for r in csv.DictReader(fh)]
    except (OSError, ValueError, InvalidOperation) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return records_from_dicts(rows, **kw)
