"""Statistics over a loaded incident dataset.

Aggregation is exact (integer cents, :class:`fractions.Fraction` shares); rounding for
display happens only in :func:`round_pct` and the table writers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

from .incidents import PROTOCOL_TYPES, IncidentRecord, Layer

HOUR = 3600
PAUSE_BUCKETS = (
    ("<=1h", 1 * HOUR),
    ("<=6h", 6 * HOUR),
    ("<=12h", 12 * HOUR),
    ("<=24h", 24 * HOUR),
    ("<=48h", 48 * HOUR),
)
PAUSE_REST = ">48h/never"

AUDIT_ORDINAL = {"NotAudited": 0.0, "PartiallyAudited": 0.5, "Audited": 1.0}


class EmptyDataset(ValueError):
    pass


class InvalidCounts(ValueError):
    pass


class MissingTimestamps(ValueError):
    pass


class MissingFeature(ValueError):
    pass


def round_pct(value, places: int = 2) -> Decimal:
    """Round half away from zero; ``value`` may be a Fraction, Decimal, int or float."""
    if isinstance(value, Fraction):
        d = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        d = Decimal(str(value))
    return d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


# monthly -------------------------------------------------------------------------

@dataclass(frozen=True)
class MonthlyStat:
    month: str  # YYYY-MM
    incident_count: int
    total_loss_cents: int

    @property
    def total_loss_usd(self) -> Decimal:
        return Decimal(self.total_loss_cents) / 100


def _months(start: date, end: date):
    y, m = start.year, start.month
    while (y, m) <= (end.year, end.month):
        yield y, m
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)


def monthly_stats(dataset: Sequence[IncidentRecord]) -> list[MonthlyStat]:
    if not dataset:
        raise EmptyDataset("no incidents to aggregate")
    counts: dict[tuple[int, int], list[int]] = {}
    for r in dataset:
        slot = counts.setdefault((r.date.year, r.date.month), [0, 0])
        slot[0] += 1
        slot[1] += r.loss_cents
    start = min(r.date for r in dataset)
    end = max(r.date for r in dataset)
    return [MonthlyStat(f"{y:04d}-{m:02d}", *counts.get((y, m), (0, 0)))
            for y, m in _months(start, end)]


# per protocol type ---------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolTypeStat:
    protocol_type: str
    loss_cents: int
    pct_loss: Fraction
    count: int
    pct_count: Fraction
    layer_pcts: dict[str, Fraction]


def protocol_type_stats(dataset: Sequence[IncidentRecord],
                        types: Sequence[str] = PROTOCOL_TYPES) -> list[ProtocolTypeStat]:
    """Loss and frequency per protocol type, plus the share of each type's incidents
    that involve each layer. Shares are exact percentages (0-100)."""
    total_loss = sum(r.loss_cents for r in dataset)
    total_count = len(dataset)
    out = []
    for t in types:
        rows = [r for r in dataset if r.protocol_type == t]
        loss = sum(r.loss_cents for r in rows)
        layer_pcts = {
            layer.value: (Fraction(100 * sum(layer in r.layers for r in rows), len(rows))
                          if rows else Fraction(0))
            for layer in Layer
        }
        out.append(ProtocolTypeStat(
            t, loss,
            Fraction(100 * loss, total_loss) if total_loss else Fraction(0),
            len(rows),
            Fraction(100 * len(rows), total_count) if total_count else Fraction(0),
            layer_pcts,
        ))
    return out


# audits --------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditEffectiveness:
    audited_rate: Fraction
    unaudited_rate: Fraction
    ratio: Fraction | None

    def as_percentages(self, places: int = 2) -> dict[str, Decimal | None]:
        return {
            "audited_rate": round_pct(100 * self.audited_rate, places),
            "unaudited_rate": round_pct(100 * self.unaudited_rate, places),
            "ratio": None if self.ratio is None else round_pct(self.ratio, places),
        }


def audit_effectiveness(audited_total: int, audited_attacked: int,
                        unaudited_total: int, unaudited_attacked: int) -> AuditEffectiveness:
    """Attack rates of audited vs non-audited protocols; ``ratio`` is unaudited/audited."""
    for total, attacked in ((audited_total, audited_attacked),
                            (unaudited_total, unaudited_attacked)):
        if total <= 0 or attacked < 0 or attacked > total:
            raise InvalidCounts(f"need 0 <= attacked <= total and total > 0, got {attacked}/{total}")
    a = Fraction(audited_attacked, audited_total)
    u = Fraction(unaudited_attacked, unaudited_total)
    return AuditEffectiveness(a, u, u / a if a else None)


# emergency pause -----------------------------------------------------------------

def pause_bucket(delay: int | None) -> str:
    """Bucket label for one pause delay in seconds; upper edges are inclusive.

    A zero delay falls into the first bucket.
    """
    if delay is None:
        return PAUSE_REST
    for label, bound in PAUSE_BUCKETS:
        if delay <= bound:
            return label
    return PAUSE_REST


def pause_buckets(dataset: Sequence[IncidentRecord]) -> dict[str, int]:
    """Counts per delay bucket over incidents whose protocol supports an emergency pause."""
    counts = {label: 0 for label, _ in PAUSE_BUCKETS}
    counts[PAUSE_REST] = 0
    for r in dataset:
        if r.supports_pause:
            counts[pause_bucket(r.pause_delay)] += 1
    return counts


# rescue and incident time frames -------------------------------------------------

@dataclass(frozen=True)
class TimeFrames:
    rescue: int
    incident: int
    atomic: bool


def time_frames(record: IncidentRecord) -> TimeFrames:
    ts = record.tx_timestamps
    first = record.first_malicious_tx
    if first is None or first not in ts:
        raise MissingTimestamps(f"{record.id}: first malicious tx or its timestamp missing")
    last = record.last_malicious_tx or first
    if last not in ts:
        raise MissingTimestamps(f"{record.id}: no timestamp for last malicious tx {last}")
    incident = ts[last] - ts[first]
    deploy = record.deploy_tx
    if deploy is None or deploy == first:
        rescue, atomic = 0, True
    else:
        if deploy not in ts:
            raise MissingTimestamps(f"{record.id}: no timestamp for deploy tx {deploy}")
        rescue, atomic = ts[first] - ts[deploy], False
    if rescue < 0 or incident < 0:
        raise ValueError(f"{record.id}: negative time frame")
    return TimeFrames(rescue, incident, atomic)


@dataclass(frozen=True)
class AtomicitySummary:
    total: int
    non_atomic_count: int
    skipped: int

    @property
    def non_atomic_pct(self) -> Fraction:
        return Fraction(100 * self.non_atomic_count, self.total) if self.total else Fraction(0)


def atomicity_summary(dataset: Sequence[IncidentRecord]) -> AtomicitySummary:
    """Count attacks with a positive rescue time frame.

    Records without the timestamps needed for :func:`time_frames` are skipped and counted
    separately rather than assumed atomic.
    """
    total = non_atomic = skipped = 0
    for r in dataset:
        try:
            tf = time_frames(r)
        except MissingTimestamps:
            skipped += 1
            continue
        total += 1
        non_atomic += tf.rescue > 0
    return AtomicitySummary(total, non_atomic, skipped)


# SEM feature preparation ---------------------------------------------------------

@dataclass(frozen=True)
class Extrema:
    log_tvl: tuple[float, float]
    log_loss: tuple[float, float]
    pause_delay: tuple[float, float]
    car: tuple[float, float]


def _span(values) -> tuple[float, float]:
    values = list(values)
    return (min(values), max(values)) if values else (0.0, 0.0)


def _log_usd(cents: int) -> float:
    return math.log1p(cents / 100)


def dataset_extrema(dataset: Sequence[IncidentRecord]) -> Extrema:
    return Extrema(
        log_tvl=_span(_log_usd(r.tvl_cents) for r in dataset if r.tvl_cents is not None),
        log_loss=_span(_log_usd(r.loss_cents) for r in dataset),
        pause_delay=_span(r.pause_delay for r in dataset if r.pause_delay is not None),
        car=_span(r.car for r in dataset if r.car is not None),
    )


def _minmax(x: float, span: tuple[float, float]) -> float:
    lo, hi = span
    if hi <= lo:
        return 0.0
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


@dataclass(frozen=True)
class SemFeatures:
    PD1: float
    PD2: float
    A1: float
    RD1: float
    RD2: float
    H1: float
    H2: float

    FIELDS = ("PD1", "PD2", "A1", "RD1", "RD2", "H1", "H2")

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in self.FIELDS)


def prepare_sem_features(record: IncidentRecord, extrema: Extrema) -> SemFeatures:
    """Encode one incident's observed variables.

    Monetary values are ``log(1 + usd)`` then min-max scaled over the dataset. A
    protocol without a pause, or one that never paused, gets the slowest reaction
    (``RD1 = 1``).
    """
    missing = [name for name, v in (("tvl_usd", record.tvl_cents), ("car", record.car),
                                    ("disclosed_within_20d", record.disclosed_within_20d))
               if v is None]
    if missing:
        raise MissingFeature(f"{record.id}: missing {', '.join(missing)}")
    if record.supports_pause and record.pause_delay is not None:
        rd1 = _minmax(record.pause_delay, extrema.pause_delay)
    else:
        rd1 = 1.0
    return SemFeatures(
        PD1=AUDIT_ORDINAL[record.audit_status],
        PD2=1.0 if record.supports_pause else 0.0,
        A1=_minmax(_log_usd(record.tvl_cents), extrema.log_tvl),
        RD1=rd1,
        RD2=1.0 if record.disclosed_within_20d else 0.0,
        H1=_minmax(record.car, extrema.car),
        H2=_minmax(_log_usd(record.loss_cents), extrema.log_loss),
    )


def sem_feature_table(dataset: Sequence[IncidentRecord]) -> tuple[list[tuple[str, SemFeatures]], list[str]]:
    """Features for every complete record, plus the ids of records that were skipped."""
    ext = dataset_extrema(dataset)
    rows, skipped = [], []
    for r in dataset:
        try:
            rows.append((r.id, prepare_sem_features(r, ext)))
        except MissingFeature:
            skipped.append(r.id)
    return rows, skipped
