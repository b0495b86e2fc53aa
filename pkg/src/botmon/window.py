"""Sliding event-time windows over log entries.

The engine owns the request-host count matrix of the current window and,
on each slide, emits a :class:`WindowDelta` describing exactly which
request rows were appended, removed, or changed and which host columns
appeared or vanished. The delta is the sole input the incremental
correlation update needs; reconstructing the new matrix from the old one
plus the delta is exact in integer arithmetic.

Windows are driven by log timestamps, not wall clock, so replayed files
and live tails behave identically. A window is closed only once the
event-time watermark (max timestamp seen minus the reorder slack) passes
its end, which guarantees that tolerated late arrivals can never land in
an already-emitted window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .logs import LogEntry

Row = dict[str, int]
Rows = dict[str, Row]


@dataclass
class WindowConfig:
    """Window geometry: length, slide step, fixed or sliding mode."""

    window_len: int
    step: int | None = None
    mode: str = "sliding"
    reorder_slack: int = 5

    def __post_init__(self) -> None:
        if self.mode not in ("sliding", "fixed"):
            raise ValueError(f"mode must be 'sliding' or 'fixed', got {self.mode!r}")
        if self.window_len <= 0:
            raise ValueError("window_len must be positive")
        if self.mode == "fixed":
            if self.step is None:
                self.step = self.window_len
            elif self.step != self.window_len:
                raise ValueError("fixed mode requires step == window_len")
        elif self.step is None:
            # default slide step: 10% of the window length
            self.step = max(1, self.window_len // 10)
        if not 0 < self.step <= self.window_len:
            raise ValueError("need 0 < step <= window_len")
        if self.reorder_slack < 0:
            raise ValueError("reorder_slack must be >= 0")


class CountMatrix:
    """Sparse integer request-host count matrix with stable index maps.

    Rows are requests, columns are hosts, entry (i, j) counts how often
    host j issued request i inside the current window. Indices are
    assigned in first-seen order and never reused within a run; an id that
    disappears and later returns gets a fresh index.
    """

    def __init__(self) -> None:
        self.rows: Rows = {}
        self.row_index: dict[str, int] = {}
        self.col_index: dict[str, int] = {}
        self._col_support: dict[str, int] = {}  # nonzero cells per host
        self._next_row = 0
        self._next_col = 0

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.col_index)

    def hosts(self) -> list[str]:
        return sorted(self.col_index, key=self.col_index.__getitem__)

    def requests(self) -> list[str]:
        return sorted(self.row_index, key=self.row_index.__getitem__)

    def add(self, request_id: str, host_id: str, amount: int) -> None:
        row = self.rows.get(request_id)
        if row is None:
            row = self.rows[request_id] = {}
            self.row_index[request_id] = self._next_row
            self._next_row += 1
        old = row.get(host_id, 0)
        new = old + amount
        if new < 0:
            raise ValueError(f"count underflow for ({request_id!r}, {host_id!r})")
        if new == 0:
            if old != 0:
                del row[host_id]
                self._drop_cell(host_id)
            if not row:
                del self.rows[request_id]
                del self.row_index[request_id]
        else:
            row[host_id] = new
            if old == 0:
                if host_id not in self.col_index:
                    self.col_index[host_id] = self._next_col
                    self._next_col += 1
                    self._col_support[host_id] = 0
                self._col_support[host_id] += 1

    def _drop_cell(self, host_id: str) -> None:
        self._col_support[host_id] -= 1
        if self._col_support[host_id] == 0:
            del self._col_support[host_id]
            del self.col_index[host_id]

    def copy_rows(self) -> Rows:
        return {req: dict(row) for req, row in self.rows.items()}

    def to_dense(self, request_order: list[str] | None = None, host_order: list[str] | None = None):
        """Materialize as a dense array (used by oracles and tests)."""
        import numpy as np

        reqs = request_order if request_order is not None else self.requests()
        hosts = host_order if host_order is not None else self.hosts()
        col = {h: j for j, h in enumerate(hosts)}
        out = np.zeros((len(reqs), len(hosts)), dtype=np.float64)
        for i, req in enumerate(reqs):
            for host, count in self.rows.get(req, {}).items():
                out[i, col[host]] = count
        return out


@dataclass
class WindowDelta:
    """Row and column changes produced by one window slide.

    ``removed_rows`` holds the old values of rows that vanish,
    ``added_rows`` the new values of rows that appear, and
    ``changed_rows`` the difference old - new for rows present on both
    sides. All blocks are sparse host-keyed mappings; removed hosts may
    appear in removed/changed blocks (their old counts) and added hosts in
    added/changed blocks.
    """

    removed_rows: Rows = field(default_factory=dict)
    changed_rows: Rows = field(default_factory=dict)
    added_rows: Rows = field(default_factory=dict)
    added_hosts: list[str] = field(default_factory=list)
    removed_hosts: list[str] = field(default_factory=list)
    n_before: int = 0
    n_after: int = 0
    window_start: int = 0
    window_end: int = 0

    @property
    def n_minus(self) -> int:
        return len(self.removed_rows)

    @property
    def n_plus(self) -> int:
        return len(self.added_rows)

    @property
    def n_changed(self) -> int:
        return len(self.changed_rows)

    @property
    def size(self) -> int:
        return self.n_plus + self.n_minus + self.n_changed

    def is_empty(self) -> bool:
        return self.size == 0 and not self.added_hosts and not self.removed_hosts


def _hosts_of(rows: Rows) -> set[str]:
    hosts: set[str] = set()
    for row in rows.values():
        hosts.update(row)
    return hosts


def diff_counts(old: Rows, new: Rows, window_start: int = 0, window_end: int = 0) -> WindowDelta:
    """Classify every differing request row between two count matrices.

    Reference implementation of the delta contract; the engine produces
    identical deltas incrementally, and tests cross-check the two paths.
    """
    delta = WindowDelta(
        n_before=len(old),
        n_after=len(new),
        window_start=window_start,
        window_end=window_end,
    )
    for req, old_row in old.items():
        new_row = new.get(req)
        if new_row is None:
            delta.removed_rows[req] = dict(old_row)
        elif new_row != old_row:
            dc = {}
            for host in old_row.keys() | new_row.keys():
                d = old_row.get(host, 0) - new_row.get(host, 0)
                if d != 0:
                    dc[host] = d
            delta.changed_rows[req] = dc
    for req, new_row in new.items():
        if req not in old:
            delta.added_rows[req] = dict(new_row)
    old_hosts = _hosts_of(old)
    new_hosts = _hosts_of(new)
    delta.added_hosts = sorted(new_hosts - old_hosts)
    delta.removed_hosts = sorted(old_hosts - new_hosts)
    return delta


class SlidingWindowEngine:
    """Single-writer sliding window over a log entry stream.

    ``push_entry`` buffers entries; ``advance_window`` closes every window
    whose end the watermark has passed and returns one delta per slide.
    The first completed window is reported as a delta from an empty matrix
    (everything added); callers that need a from-scratch state can read
    :attr:`counts` right after.
    """

    def __init__(self, config: WindowConfig) -> None:
        self.config = config
        self.counts = CountMatrix()
        self.stale_dropped = 0
        self._pending: list[LogEntry] = []  # ts >= current window end, unsorted
        self._active: list[LogEntry] = []   # inside current window, sorted by ts
        self._start: int | None = None      # current window start, None before first close
        self._origin: int | None = None     # first window start, aligned to window_len
        self._max_ts: int | None = None
        self._materialized = False
        self._n_before = 0
        self._hosts_before: set[str] = set()

    @property
    def window_bounds(self) -> tuple[int, int] | None:
        if not self._materialized:
            return None
        return self._start, self._start + self.config.window_len

    def push_entry(self, entry: LogEntry) -> bool:
        """Buffer one entry. Returns False when dropped as stale."""
        if self._max_ts is not None and entry.timestamp < self._max_ts - self.config.reorder_slack:
            self.stale_dropped += 1
            return False
        if self._max_ts is None or entry.timestamp > self._max_ts:
            self._max_ts = entry.timestamp
        if self._origin is None:
            # windows are aligned to multiples of the window length, so the
            # first entry at t=5 with a 100s window starts window [0, 100)
            self._origin = (entry.timestamp // self.config.window_len) * self.config.window_len
        self._pending.append(entry)
        return True

    def advance_window(self, now: int) -> WindowDelta | None:
        """Close the next due window, if any, and return its delta.

        ``now`` is event time; the watermark is ``now - reorder_slack``.
        Returns None while no window boundary is due. Call repeatedly
        until None to drain a backlog.
        """
        if self._origin is None:
            return None
        watermark = now - self.config.reorder_slack
        if not self._materialized:
            first_end = self._origin + self.config.window_len
            if watermark < first_end:
                return None
            return self._close(self._origin, first_end)
        next_start = self._start + self.config.step
        next_end = next_start + self.config.window_len
        if watermark < next_end:
            return None
        return self._close(next_start, next_end)

    def flush(self) -> Iterator[WindowDelta]:
        """Drain every window completed by the data already seen.

        For finite inputs: ignores the reorder slack (no more data can
        arrive) and closes all windows ending at or before the last
        timestamp.
        """
        if self._max_ts is None:
            return
        while True:
            delta = self.advance_window(self._max_ts + self.config.reorder_slack)
            if delta is None:
                return
            yield delta

    def _close(self, start: int, end: int) -> WindowDelta:
        old_start = self._start
        touched: dict[str, Row] = {}

        def snapshot(req: str) -> None:
            if req not in touched:
                touched[req] = dict(self.counts.rows.get(req, ()))

        # retire entries that fall before the new window start
        keep_active: list[LogEntry] = []
        for e in self._active:
            if e.timestamp < start:
                snapshot(e.request_id)
                self.counts.add(e.request_id, e.host_id, -1)
            else:
                keep_active.append(e)
        self._active = keep_active

        # admit pending entries that fall inside the new window
        still_pending: list[LogEntry] = []
        entering: list[LogEntry] = []
        for e in self._pending:
            if e.timestamp >= end:
                still_pending.append(e)
            elif e.timestamp < start:
                # predates the first window (only possible before the
                # first close, when nothing was ever emitted)
                if old_start is not None:
                    raise AssertionError("late entry survived the watermark")
                self.stale_dropped += 1
            else:
                entering.append(e)
        self._pending = still_pending
        entering.sort(key=lambda e: e.timestamp)
        for e in entering:
            snapshot(e.request_id)
            self.counts.add(e.request_id, e.host_id, 1)
        self._active.extend(entering)
        self._active.sort(key=lambda e: e.timestamp)

        n_before = 0 if old_start is None else self._n_before
        delta = WindowDelta(
            n_before=n_before,
            n_after=self.counts.n_rows,
            window_start=start,
            window_end=end,
        )
        for req, old_row in touched.items():
            new_row = self.counts.rows.get(req)
            if not old_row:
                if new_row:
                    delta.added_rows[req] = dict(new_row)
            elif new_row is None:
                delta.removed_rows[req] = old_row
            elif new_row != old_row:
                dc = {}
                for host in old_row.keys() | new_row.keys():
                    d = old_row.get(host, 0) - new_row.get(host, 0)
                    if d != 0:
                        dc[host] = d
                delta.changed_rows[req] = dc
        old_hosts = self._hosts_before
        new_hosts = set(self.counts.col_index)
        delta.added_hosts = sorted(new_hosts - old_hosts)
        delta.removed_hosts = sorted(old_hosts - new_hosts)

        self._start = start
        self._materialized = True
        self._n_before = self.counts.n_rows
        self._hosts_before = new_hosts
        return delta
