"""Access log parsing and identifier anonymization.

Turns raw log lines into (timestamp, host, request) records. Three wire
formats are supported: Apache Common Log Format, Apache Combined Log
Format, and a bare 3-column CSV ``timestamp,host,request``. Malformed
lines are reported as :class:`ParseError` so streaming callers can count
and skip them instead of dying on dirty input.
"""

from __future__ import annotations

import calendar
import hmac
import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

FORMATS = ("apache-common", "apache-combined", "triple-csv")

_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}

# host ident user [timestamp] "request" status size <tail>
_CLF_RE = re.compile(
    r'^(?P<host>\S+) (?P<ident>\S+) (?P<user>\S+) \[(?P<ts>[^\]]+)\] '
    r'"(?P<request>[^"]*)" (?P<status>\d{3}|-) (?P<size>\d+|-)(?P<tail>.*)$'
)
_COMBINED_TAIL_RE = re.compile(r'^ "[^"]*" "[^"]*"\s*$')
_CLF_TS_RE = re.compile(
    r'^(\d{2})/([A-Za-z]{3})/(\d{4}):(\d{2}):(\d{2}):(\d{2}) ([+-])(\d{2})(\d{2})$'
)


class ParseError(ValueError):
    """A log line that does not conform to the selected format."""


@dataclass(frozen=True)
class LogEntry:
    """One parsed access-log record: who asked for what, when."""

    timestamp: int
    host_id: str
    request_id: str


@dataclass
class ParseStats:
    """Running tallies for a parsed stream."""

    total: int = 0
    parsed: int = 0
    malformed: int = 0


def _clf_timestamp(text: str) -> int:
    m = _CLF_TS_RE.match(text)
    if m is None:
        raise ParseError(f"unparsable timestamp: {text!r}")
    day, mon, year, hh, mm, ss = m.group(1), m.group(2), m.group(3), m.group(4), m.group(5), m.group(6)
    month = _MONTHS.get(mon)
    if month is None:
        raise ParseError(f"unknown month: {mon!r}")
    offset = (int(m.group(8)) * 3600 + int(m.group(9)) * 60)
    if m.group(7) == "-":
        offset = -offset
    epoch = calendar.timegm((int(year), month, int(day), int(hh), int(mm), int(ss))) - offset
    if epoch < 0:
        raise ParseError(f"timestamp before epoch: {text!r}")
    return epoch


def _request_path(request_field: str, strip_query: bool) -> str:
    parts = request_field.split(" ")
    if len(parts) >= 2:
        path = parts[1]
    else:
        path = parts[0]
    if strip_query:
        path = path.split("?", 1)[0]
    if not path:
        raise ParseError(f"empty request path in {request_field!r}")
    return path


def _parse_apache(raw: str, fmt: str, strip_query: bool) -> LogEntry:
    m = _CLF_RE.match(raw)
    if m is None:
        raise ParseError("line does not match Apache log format")
    if fmt == "apache-combined" and not _COMBINED_TAIL_RE.match(m.group("tail")):
        raise ParseError("missing referer/user-agent fields")
    return LogEntry(
        timestamp=_clf_timestamp(m.group("ts")),
        host_id=m.group("host"),
        request_id=_request_path(m.group("request"), strip_query),
    )


def _parse_csv(raw: str, strip_query: bool) -> LogEntry:
    parts = raw.rstrip("\r\n").split(",")
    if len(parts) != 3:
        raise ParseError(f"expected 3 comma-separated fields, got {len(parts)}")
    ts_text, host, request = (p.strip() for p in parts)
    try:
        ts = int(ts_text)
    except ValueError:
        raise ParseError(f"unparsable timestamp: {ts_text!r}") from None
    if ts < 0:
        raise ParseError("negative timestamp")
    if not host or not request:
        raise ParseError("empty host or request field")
    if strip_query:
        request = request.split("?", 1)[0]
        if not request:
            raise ParseError("empty request after query strip")
    return LogEntry(timestamp=ts, host_id=host, request_id=request)


def parse_line(raw: str, fmt: str, strip_query: bool = True) -> LogEntry:
    """Parse one log line.

    Raises :class:`ParseError` for malformed lines and ``ValueError`` for an
    unknown ``fmt`` (a configuration mistake, checked once at startup by
    stream readers). Query strings are stripped from request paths by
    default so parameterized requests map to one row identity.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown log format: {fmt!r} (expected one of {FORMATS})")
    if fmt == "triple-csv":
        return _parse_csv(raw, strip_query)
    return _parse_apache(raw, fmt, strip_query)


def anonymize(entry: LogEntry, salt: bytes) -> LogEntry:
    """Replace host and request identifiers with keyed-hash digests.

    The same (salt, identifier) pair always maps to the same digest, so
    equality of identifiers is preserved and the window/correlation
    machinery is unaffected. Timestamps pass through unchanged.
    """
    if not salt:
        raise ValueError("anonymization salt must be non-empty")
    return LogEntry(
        timestamp=entry.timestamp,
        host_id=_digest(entry.host_id, salt),
        request_id=_digest(entry.request_id, salt),
    )


def _digest(identifier: str, salt: bytes) -> str:
    return hmac.new(salt, identifier.encode("utf-8", "surrogatepass"), hashlib.sha256).hexdigest()


_CSV_HEADER = ("timestamp", "host", "request")


def iter_entries(
    lines: Iterable[str],
    fmt: str,
    strip_query: bool = True,
    salt: bytes | None = None,
    stats: ParseStats | None = None,
) -> Iterator[LogEntry]:
    """Parse a line stream, skipping (and counting) malformed lines.

    For ``triple-csv`` input an optional leading header row is consumed
    silently. When ``salt`` is given, every yielded entry is anonymized.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown log format: {fmt!r} (expected one of {FORMATS})")
    if stats is None:
        stats = ParseStats()
    first = True
    for raw in lines:
        if not raw.strip():
            continue
        if first and fmt == "triple-csv":
            first = False
            fields = tuple(p.strip().lower() for p in raw.split(","))
            if fields == _CSV_HEADER:
                continue
        first = False
        stats.total += 1
        try:
            entry = parse_line(raw, fmt, strip_query=strip_query)
        except ParseError:
            stats.malformed += 1
            continue
        stats.parsed += 1
        if salt is not None:
            entry = anonymize(entry, salt)
        yield entry
