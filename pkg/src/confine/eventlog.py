"""Event log model, CSV/XES ingestion and organizational partitioning.

The CSV layout ``case,timestamp,activity,org`` is the canonical interchange
format; the XES reader exists to ingest public logs and only looks at
``concept:name`` and ``time:timestamp``.
"""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

__all__ = [
    "Event",
    "CaseView",
    "EventLog",
    "LogParseError",
    "LogSchemaError",
    "PartitionError",
    "parse_timestamp",
    "format_timestamp",
    "parse_log",
    "parse_csv",
    "parse_xes",
    "serialize_log",
    "partition_by_org",
]

CSV_COLUMNS = ("case", "timestamp", "activity", "org")


class LogParseError(ValueError):
    """A row or element of the input could not be interpreted."""


class LogSchemaError(LogParseError):
    """The input is structurally valid but misses required columns."""


class PartitionError(ValueError):
    """An activity has no organization assigned in the partition map."""


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime.

    Minute precision and finer is accepted; naive values are taken as UTC,
    zoned values are converted to UTC.
    """
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise LogParseError(f"bad timestamp {text!r}: {exc}") from None
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    """Serialize a UTC instant canonically, milliseconds by default.

    Sub-millisecond values keep six fractional digits so that
    parse(format(ts)) == ts always holds.
    """
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    base = ts.strftime("%Y-%m-%dT%H:%M:%S")
    if ts.microsecond % 1000 == 0:
        return f"{base}.{ts.microsecond // 1000:03d}Z"
    return f"{base}.{ts.microsecond:06d}Z"


@dataclass(frozen=True, slots=True)
class Event:
    """One observed activity execution.

    seq_hint is the 0-based record position within the event's source file;
    it only breaks ordering ties and carries no domain meaning.
    """

    case_ref: str
    activity: str
    timestamp: datetime
    org: str = ""
    seq_hint: int = 0

    def __post_init__(self) -> None:
        if not self.case_ref:
            raise ValueError("event requires a non-empty case_ref")
        if not self.activity:
            raise ValueError("event requires a non-empty activity")


def _order_key(ev: Event) -> tuple[datetime, str, int]:
    # Total order inside a case: timestamp, then org, then source position.
    return (ev.timestamp, ev.org, ev.seq_hint)


@dataclass(frozen=True, slots=True)
class CaseView:
    """The (possibly partial) event sequence of one case, kept sorted."""

    case_ref: str
    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        for ev in self.events:
            if ev.case_ref != self.case_ref:
                raise ValueError(
                    f"event of case {ev.case_ref!r} placed in view {self.case_ref!r}"
                )
        ordered = tuple(sorted(self.events, key=_order_key))
        object.__setattr__(self, "events", ordered)

    @property
    def activities(self) -> tuple[str, ...]:
        return tuple(ev.activity for ev in self.events)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class EventLog:
    """A set of case views, keyed and iterated in sorted case_ref order."""

    cases: dict[str, CaseView] = field(default_factory=dict)
    source_org: str | None = None

    def __post_init__(self) -> None:
        for ref, view in self.cases.items():
            if ref != view.case_ref:
                raise ValueError(f"case {view.case_ref!r} keyed as {ref!r}")
        ordered = {ref: self.cases[ref] for ref in sorted(self.cases)}
        object.__setattr__(self, "cases", ordered)

    @classmethod
    def from_events(cls, events: list[Event] | tuple[Event, ...], source_org: str | None = None) -> "EventLog":
        by_case: dict[str, list[Event]] = {}
        for ev in events:
            by_case.setdefault(ev.case_ref, []).append(ev)
        cases = {ref: CaseView(ref, tuple(evs)) for ref, evs in by_case.items()}
        return cls(cases=cases, source_org=source_org)

    def case_refs(self) -> list[str]:
        """Sorted references of all cases, possibly empty."""
        return list(self.cases)

    def events(self) -> list[Event]:
        return [ev for view in self.cases.values() for ev in view.events]

    def event_count(self) -> int:
        return sum(len(view) for view in self.cases.values())

    def activities(self) -> set[str]:
        return {ev.activity for view in self.cases.values() for ev in view.events}

    def __len__(self) -> int:
        return len(self.cases)


# ---------------------------------------------------------------------------
# parsing and serialization


def parse_csv(text: str, source_org: str | None = None) -> EventLog:
    """Parse the canonical CSV layout into an EventLog.

    Columns may appear in any order, extra columns are ignored. The record
    position inside the file becomes each event's seq_hint.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise LogSchemaError("empty input, expected a header row") from None
    header = [h.strip() for h in header]
    missing = [col for col in CSV_COLUMNS if col not in header]
    if missing:
        raise LogSchemaError(f"missing required column(s): {', '.join(missing)}")
    idx = {col: header.index(col) for col in CSV_COLUMNS}

    events: list[Event] = []
    for seq, row in enumerate(reader):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue  # ignore blank lines
        line_no = seq + 2  # 1-based, after the header
        if len(row) < len(header):
            raise LogParseError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        case_ref = row[idx["case"]].strip()
        activity = row[idx["activity"]].strip()
        org = row[idx["org"]].strip()
        if not case_ref:
            raise LogParseError(f"line {line_no}: empty case reference")
        if not activity:
            raise LogParseError(f"line {line_no}: empty activity")
        try:
            ts = parse_timestamp(row[idx["timestamp"]])
        except LogParseError as exc:
            raise LogParseError(f"line {line_no}: {exc}") from None
        events.append(Event(case_ref, activity, ts, org, seq_hint=len(events)))
    return EventLog.from_events(events, source_org=source_org)


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_xes(text: str | bytes, source_org: str | None = None) -> EventLog:
    """Parse the XES subset: trace/event concept:name plus time:timestamp.

    Every other attribute is ignored. Events missing either required
    attribute raise a parse error naming the element.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise LogParseError(f"bad XES document: {exc}") from None

    events: list[Event] = []
    seq = 0
    for trace in root:
        if _local_name(trace.tag) != "trace":
            continue
        case_ref = None
        for child in trace:
            if _local_name(child.tag) == "string" and child.get("key") == "concept:name":
                case_ref = child.get("value")
                break
        if not case_ref:
            raise LogParseError("trace without a concept:name attribute")
        for child in trace:
            if _local_name(child.tag) != "event":
                continue
            activity = None
            stamp = None
            for attr in child:
                key = attr.get("key")
                if key == "concept:name" and _local_name(attr.tag) == "string":
                    activity = attr.get("value")
                elif key == "time:timestamp":
                    stamp = attr.get("value")
            if not activity or stamp is None:
                raise LogParseError(
                    f"event #{seq} of case {case_ref!r} lacks concept:name or time:timestamp"
                )
            events.append(Event(case_ref, activity, parse_timestamp(stamp), "", seq_hint=seq))
            seq += 1
    return EventLog.from_events(events, source_org=source_org)


def parse_log(path: str | Path, fmt: str | None = None, source_org: str | None = None) -> EventLog:
    """Read a log file, picking the parser from ``fmt`` or the suffix."""
    p = Path(path)
    if fmt is None:
        fmt = "xes" if p.suffix.lower() == ".xes" else "csv"
    data = p.read_text(encoding="utf-8")
    if fmt == "csv":
        return parse_csv(data, source_org=source_org)
    if fmt == "xes":
        return parse_xes(data, source_org=source_org)
    raise ValueError(f"unknown log format {fmt!r}")


def event_row(ev: Event) -> list[str]:
    return [ev.case_ref, format_timestamp(ev.timestamp), ev.activity, ev.org]


def serialize_log(log: EventLog) -> str:
    """Canonical CSV text for a log.

    Rows are written in source order (seq_hint first) so that serializing a
    parsed log reproduces its original record order and the
    parse -> serialize -> parse round trip is the identity.
    """
    rows = sorted(log.events(), key=lambda ev: (ev.seq_hint, ev.timestamp, ev.org, ev.case_ref))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for ev in rows:
        writer.writerow(event_row(ev))
    return out.getvalue()


def partition_by_org(log: EventLog, activity_to_org: dict[str, str]) -> dict[str, EventLog]:
    """Split a log into one sub-log per organization.

    Events are kept verbatim (the org field is not rewritten), so for each
    case the concatenation of the sub-log views re-sorts to the original
    view. Every activity of the log must be mapped.
    """
    seen_orgs = sorted(set(activity_to_org.values()))
    buckets: dict[str, list[Event]] = {org: [] for org in seen_orgs}
    for view in log.cases.values():
        for ev in view.events:
            org = activity_to_org.get(ev.activity)
            if org is None:
                raise PartitionError(f"activity {ev.activity!r} is not mapped to any organization")
            buckets[org].append(ev)
    return {
        org: EventLog.from_events(evs, source_org=org) for org, evs in buckets.items()
    }
