"""Command-line front end.

Every subcommand reads files, runs one analysis and writes its artifact atomically.
Exit status is 0 on success, 1 on data or validation errors (a JSON error manifest is
printed to stderr) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from . import __version__, analytics, clones, eventstudy, evm, incidents
from .tracing import (
    DEFAULT_MAX_HOPS,
    FixtureProvider,
    FundingSource,
    LabelRegistry,
    link_adversaries,
    norm_address,
    trace_to_source,
)

COMMANDS = ("disasm", "clone", "trace", "link", "car", "stats")
ANALYSES = ("monthly", "protocol", "audit", "pause", "timeframes", "atomicity", "sem")


class DataError(Exception):
    pass


# output helpers ------------------------------------------------------------------

def write_atomic(path: str | Path | None, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename; ``None`` or ``-`` means stdout."""
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    if isinstance(v, Fraction):
        return float(v)
    if isinstance(v, Decimal):
        return float(v) if v != v.to_integral_value() else int(v)
    return v


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, default=_num) + "\n"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, Fraction):
        return str(analytics.round_pct(v))
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def _usd(cents: int) -> str:
    return str(Decimal(cents) / 100)


# subcommands ---------------------------------------------------------------------

def cmd_disasm(args) -> list[tuple[str | None, str]]:
    if args.hex is not None:
        code = evm.decode_hex(args.hex, "inline")
    else:
        code = evm.load_bytecode_file(args.file)
    stream = evm.disassemble(code) if args.keep_metadata else evm.normalize(code)
    if args.format == "json":
        text = to_json({"source_id": stream.source_id, "opcodes": list(stream.opcodes),
                        "stripped_metadata_len": stream.stripped_metadata_len,
                        "invalid_count": stream.invalid_count,
                        "immediate_len": stream.immediate_len})
    else:
        text = "".join(op + "\n" for op in stream.opcodes)
    return [(args.out, text)]


def cmd_clone(args):
    entries = clones.load_manifest(args.manifest)
    reports, membership = clones.analyze_corpus(
        entries, args.threshold, args.n, per_incident=not args.raw, exact=args.exact,
        workers=args.workers)
    if args.format == "json":
        text = to_json([dict(zip(clones.CloneReport.CSV_COLUMNS, r.row())) for r in reports])
    else:
        text = to_csv(clones.CloneReport.CSV_COLUMNS, (r.row() for r in reports))
    out = [(args.out, text)]
    if args.clusters:
        out.append((args.clusters, to_json(
            {cat: [c.to_dict() for c in cs] for cat, cs in sorted(membership.items())})))
    return out


def _read_targets(path) -> list[tuple[str | None, str]]:
    with open(path, newline="") as fh:
        return [(row.get("incident_id") or None, norm_address(row["address"]))
                for row in csv.DictReader(fh)]


def cmd_trace(args):
    provider = FixtureProvider.load(args.chain)
    registry = LabelRegistry.load_csv(args.labels) if args.labels else LabelRegistry()
    targets = [(None, norm_address(a)) for a in args.address or ()]
    if args.targets:
        targets += _read_targets(args.targets)
    if not targets:
        raise DataError("no target addresses given (use --address or --targets)")

    def run(t):
        return trace_to_source(provider, registry, t[1], args.max_hops,
                               verify_prefix=not args.no_verify_prefix)

    with ThreadPoolExecutor(max(1, args.workers)) as pool:
        sources = list(pool.map(run, targets))

    if args.format == "csv":
        rows = ((inc, addr, s.kind, s.entity, s.hops,
                 " <- ".join([addr] + [h.sender for h in s.path]))
                for (inc, addr), s in zip(targets, sources))
        text = to_csv(("incident_id", "address", "kind", "entity", "hops", "path"), rows)
    elif len(targets) == 1 and not args.targets:
        text = to_json(sources[0].to_dict())
    else:
        text = to_json([{"incident_id": inc, "address": addr, "source": s.to_dict()}
                        for (inc, addr), s in zip(targets, sources)])
    return [(args.out, text)]


def cmd_link(args):
    raw = json.loads(Path(args.traces).read_text())
    if not isinstance(raw, list):
        raise DataError("trace file must hold a list of {incident_id, address, source}")
    sources = []
    for item in raw:
        if item.get("incident_id") is None:
            raise DataError(f"trace for {item.get('address')} has no incident_id")
        sources.append((str(item["incident_id"]), FundingSource.from_dict(item["source"])))
    exclude = LabelRegistry.load_csv(args.labels).entries if args.labels else ()
    clusters = link_adversaries(sources, args.k, exclude)
    if args.format == "csv":
        rows = ((c.suspect, m.incident_id, m.adversary, m.hops)
                for c in clusters for m in c.members)
        text = to_csv(("suspect", "incident_id", "adversary", "hops"), rows)
    else:
        text = to_json([c.to_dict() for c in clusters])
    return [(args.out, text)]


def cmd_car(args):
    g = args.granularity
    token = eventstudy.PriceSeries.load_csv(args.token, g)
    if args.market:
        market = eventstudy.PriceSeries.load_csv(args.market, g)
        mret = None
    elif args.btc and args.eth:
        btc = eventstudy.PriceSeries.load_csv(args.btc, g)
        eth = eventstudy.PriceSeries.load_csv(args.eth, g)
        market = eventstudy.market_proxy(btc, eth)
        mret = (eventstudy.market_proxy_returns(btc, eth, args.returns)
                if args.proxy == "returns" else None)
    else:
        raise DataError("give --market, or both --btc and --eth")
    study = eventstudy.event_study(token, market, args.event_tick, args.window,
                                   args.event_length, args.returns, mret)
    result = study.to_dict()
    if args.format == "csv":
        text = to_csv(tuple(result), [tuple(result.values())])
    else:
        text = to_json(result)
    out = [(args.out, text)]
    if args.curve:
        out.append((args.curve, to_csv(("tick", "abnormal_return", "cumulative"),
                                       study.curve_rows())))
    return out


def _stats_rows(args):
    """Return (header, rows, json_payload) for the chosen analysis."""
    if args.analysis == "audit":
        if not args.audit_counts:
            raise DataError("--audit-counts AUDITED,ATTACKED,UNAUDITED,ATTACKED is required")
        res = analytics.audit_effectiveness(*args.audit_counts)
        pct = res.as_percentages()
        header = ("audited_rate_pct", "unaudited_rate_pct", "ratio")
        return header, [tuple(pct.values())], pct

    data = incidents.load_dataset(args.dataset, permissive=args.permissive,
                                  period=None if args.any_date else incidents.STUDY_PERIOD)
    if args.analysis == "monthly":
        stats = analytics.monthly_stats(data)
        rows = [(s.month, s.incident_count, _usd(s.total_loss_cents)) for s in stats]
        header = ("month", "incidents", "total_loss_usd")
    elif args.analysis == "protocol":
        stats = analytics.protocol_type_stats(data)
        layers = [layer.value for layer in incidents.Layer]
        header = ("protocol_type", "loss_usd", "pct_loss", "incidents", "pct_incidents",
                  *(f"{l}_layer_pct" for l in layers))
        rows = [(s.protocol_type, _usd(s.loss_cents), s.pct_loss, s.count, s.pct_count,
                 *(s.layer_pcts[l] for l in layers)) for s in stats]
    elif args.analysis == "pause":
        counts = analytics.pause_buckets(data)
        header, rows = ("bucket", "protocols"), list(counts.items())
    elif args.analysis == "timeframes":
        header = ("id", "rescue_s", "incident_s", "atomic")
        rows = []
        for r in data:
            try:
                tf = analytics.time_frames(r)
            except analytics.MissingTimestamps:
                continue
            rows.append((r.id, tf.rescue, tf.incident, tf.atomic))
    elif args.analysis == "atomicity":
        s = analytics.atomicity_summary(data)
        header = ("attacks", "non_atomic", "non_atomic_pct", "skipped")
        rows = [(s.total, s.non_atomic_count, s.non_atomic_pct, s.skipped)]
    else:  # sem
        feats, _skipped = analytics.sem_feature_table(data)
        header = ("id", *analytics.SemFeatures.FIELDS)
        rows = [(rid, *f.row()) for rid, f in feats]
    payload = [dict(zip(header, (_cell(v) if isinstance(v, Fraction) else v for v in row)))
               for row in rows]
    return header, rows, payload


def cmd_stats(args):
    header, rows, payload = _stats_rows(args)
    text = to_json(payload) if args.format == "json" else to_csv(header, rows)
    return [(args.out, text)]


# parser --------------------------------------------------------------------------

def _counts(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated integers")
    try:
        return tuple(int(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise argparse.ArgumentTypeError("expected four comma-separated integers") from None


def _threshold(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("threshold must lie in (0, 1]")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="defi-forensics", description=__doc__.splitlines()[0])
    n_rows = len(incidents.taxonomy_table())
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__} (taxonomy table v{incidents.TAXONOMY_VERSION}, "
                           f"{n_rows} rows)")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    def add(name, help_, fmt=("csv", "json"), default="json"):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=fmt, default=default)
        return sp

    sp = add("disasm", "disassemble one contract to newline-delimited mnemonics",
             fmt=("text", "json"), default="text")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--hex", help="inline hex bytecode")
    src.add_argument("--file", help="hex text file")
    sp.add_argument("--keep-metadata", action="store_true", help="do not strip the CBOR trailer")

    sp = add("clone", "cluster a bytecode corpus and report detectable clones", default="csv")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--threshold", type=_threshold, default=clones.DEFAULT_THRESHOLD)
    sp.add_argument("--n", type=_positive, default=clones.DEFAULT_N, help="gram width")
    sp.add_argument("--raw", action="store_true", help="skip the one-contract-per-incident restriction")
    sp.add_argument("--exact", action="store_true", help="compare opcode tuples instead of fingerprints")
    sp.add_argument("--clusters", help="also write cluster membership JSON here")
    sp.add_argument("--workers", type=_positive, default=1)

    sp = add("trace", "trace the pre-incident source of funds of addresses")
    sp.add_argument("--chain", required=True, help="chain fixture JSON")
    sp.add_argument("--labels", help="label registry CSV (address,name,kind)")
    sp.add_argument("--address", action="append", help="target address (repeatable)")
    sp.add_argument("--targets", help="CSV with incident_id,address columns")
    sp.add_argument("--max-hops", type=_positive, default=DEFAULT_MAX_HOPS)
    sp.add_argument("--no-verify-prefix", action="store_true",
                    help="trust the balance binary search without checking earlier blocks")
    sp.add_argument("--workers", type=_positive, default=1)

    sp = add("link", "link incidents whose traces share a funder")
    sp.add_argument("--traces", required=True, help="output of `trace --targets`")
    sp.add_argument("--k", type=_positive, default=3, help="hop horizon")
    sp.add_argument("--labels", help="label registry; labeled addresses never link incidents")

    sp = add("car", "CAPM event study: minimal cumulative abnormal return")
    sp.add_argument("--token", required=True, help="token price CSV (tick,price)")
    sp.add_argument("--market", help="market price CSV; overrides --btc/--eth")
    sp.add_argument("--btc")
    sp.add_argument("--eth")
    sp.add_argument("--proxy", choices=("price", "returns"), default="price",
                    help="average BTC/ETH prices (default) or their returns")
    sp.add_argument("--event-tick", type=int, required=True)
    sp.add_argument("--window", type=_positive, default=eventstudy.ESTIMATION_WINDOW)
    sp.add_argument("--event-length", type=_positive, default=eventstudy.DEFAULT_EVENT_LENGTH)
    sp.add_argument("--returns", choices=("simple", "log"), default="simple")
    sp.add_argument("--granularity", type=_positive, default=eventstudy.DEFAULT_GRANULARITY_S,
                    help="tick duration in seconds")
    sp.add_argument("--curve", help="also write the per-tick AR/CAR CSV here")

    sp = add("stats", "incident dataset statistics", default="csv")
    sp.add_argument("--analysis", choices=ANALYSES, required=True)
    sp.add_argument("--dataset", help="incident dataset (JSON or CSV)")
    sp.add_argument("--permissive", action="store_true", help="accept unknown taxonomy triples")
    sp.add_argument("--any-date", action="store_true", help="lift the study-period date check")
    sp.add_argument("--audit-counts", type=_counts,
                    help="AUDITED_TOTAL,AUDITED_ATTACKED,UNAUDITED_TOTAL,UNAUDITED_ATTACKED")
    return p


HANDLERS = {"disasm": cmd_disasm, "clone": cmd_clone, "trace": cmd_trace,
            "link": cmd_link, "car": cmd_car, "stats": cmd_stats}

DATA_ERRORS = (DataError, OSError, ValueError, KeyError, json.JSONDecodeError,
               incidents.ValidationError, incidents.ParseError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "stats" and args.analysis != "audit" and not args.dataset:
        parser.error("stats --analysis %s requires --dataset" % args.analysis)
    try:
        outputs = HANDLERS[args.command](args)
    except DATA_ERRORS as exc:
        manifest = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, incidents.ValidationError):
            manifest["violations"] = exc.violations
        sys.stderr.write(json.dumps(manifest, indent=2) + "\n")
        return 1
    for path, text in outputs:
        write_atomic(path, text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
