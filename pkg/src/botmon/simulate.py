"""Labeled synthetic traffic: human-like background plus scripted bots.

Bot hosts follow one of four visit patterns (repeat one link, sample a
list, cycle a list, or crawl a link graph) with truncated-Gaussian
inter-arrival times around a human-like mean. A generated bot session can
be injected into background traffic duplicated under fresh host ids with
identical timing, which is what produces the perfectly correlated host
columns a detector is supposed to catch. Every host in the merged stream
carries a gold label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .logs import LogEntry

MODES = ("single_request", "random_list", "fixed_list", "random_walk")

# human-like mean interval between page requests, in seconds
DEFAULT_MEAN_INTERVAL = 39.0


@dataclass
class SimConfig:
    """One simulated bot session."""

    mode: str
    link_list: list[str] = field(default_factory=list)
    mean_interval: float = DEFAULT_MEAN_INTERVAL
    interval_stddev: float = 10.0
    duration: float = 3600.0
    rate_multiplier: float = 1.0
    seed: int | None = None
    start_time: int = 0
    host_id: str = "bot-0"
    asset_fanout: int = 0
    relink_period: float = 7200.0  # single_request: how long one link is kept

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mean_interval <= 0:
            raise ValueError("mean_interval must be positive")
        if self.rate_multiplier <= 0:
            raise ValueError("rate_multiplier must be positive")
        if self.mode in ("single_request", "random_list", "fixed_list") and not self.link_list:
            raise ValueError(f"mode {self.mode!r} requires a non-empty link_list")


@dataclass
class GoldLabel:
    host_id: str
    is_bot: bool
    botnet_id: int | None
    first_request_ts: int


def _truncated_gauss(rng: np.random.Generator, mean: float, stddev: float) -> float:
    """Positive Gaussian draw; non-positive samples are redrawn."""
    for _ in range(1000):
        gap = rng.normal(mean, stddev)
        if gap > 0.0:
            return gap
    return mean  # pathological stddev/mean ratio; fall back to the mean


def simulate_bot(
    config: SimConfig, site_graph: dict[str, list[str]] | None = None
) -> tuple[list[LogEntry], GoldLabel]:
    """Generate one bot host's visit stream plus its gold label."""
    if config.mode == "random_walk" and not site_graph:
        raise ValueError("random_walk mode requires a site_graph")
    rng = np.random.default_rng(config.seed)
    mean = config.mean_interval / config.rate_multiplier
    stddev = config.interval_stddev / config.rate_multiplier

    entries: list[LogEntry] = []
    t = float(config.start_time)
    end = config.start_time + config.duration

    if config.mode == "single_request":
        current = config.link_list[int(rng.integers(len(config.link_list)))]
        picked_at = t
    elif config.mode == "fixed_list":
        cursor = 0
    elif config.mode == "random_walk":
        nodes = sorted(site_graph)
        current = nodes[int(rng.integers(len(nodes)))]

    while t < end:
        if config.mode == "single_request":
            if t - picked_at >= config.relink_period:
                current = config.link_list[int(rng.integers(len(config.link_list)))]
                picked_at = t
            request = current
        elif config.mode == "random_list":
            request = config.link_list[int(rng.integers(len(config.link_list)))]
        elif config.mode == "fixed_list":
            request = config.link_list[cursor % len(config.link_list)]
            cursor += 1
        else:  # random_walk
            request = current
            out = site_graph.get(current, [])
            if out:
                current = out[int(rng.integers(len(out)))]
            else:
                current = nodes[int(rng.integers(len(nodes)))]
        ts = int(t)
        entries.append(LogEntry(timestamp=ts, host_id=config.host_id, request_id=request))
        for i in range(config.asset_fanout):
            entries.append(
                LogEntry(timestamp=ts, host_id=config.host_id, request_id=f"{request}::a{i}")
            )
        t += _truncated_gauss(rng, mean, stddev)

    first_ts = entries[0].timestamp if entries else config.start_time
    return entries, GoldLabel(config.host_id, True, None, first_ts)


def zipf_weights(size: int, shape: float) -> np.ndarray:
    ranks = np.arange(1, size + 1, dtype=np.float64)
    w = ranks**-shape
    return w / w.sum()


def background_traffic(
    n_hosts: int,
    duration: float,
    seed=None,
    pool_size: int = 200,
    zipf_shape: float = 1.2,
    mean_interval: float = DEFAULT_MEAN_INTERVAL,
    session_len: float | None = None,
    start_time: int = 0,
    host_prefix: str = "host",
) -> tuple[list[LogEntry], list[GoldLabel]]:
    """Independent human-like hosts over a Zipf-popular request pool.

    Every host draws requests with Zipf-shaped preference weights over its
    own private ranking of the pool. A single shared popularity ranking
    would make all count columns proportional to one profile, i.e. a huge
    genuinely-correlated component that any correlation detector must
    flag; per-host rankings keep the background signal-free while
    preserving realistic per-host sparsity. All entries are time-sorted.
    """
    rng = np.random.default_rng(seed)
    pool = [f"/page/{i:04d}" for i in range(pool_size)]
    weights = zipf_weights(pool_size, zipf_shape)
    if session_len is None or session_len >= duration:
        session_len = duration
    entries: list[LogEntry] = []
    labels: list[GoldLabel] = []
    for h in range(n_hosts):
        host = f"{host_prefix}-{h:04d}"
        ranking = rng.permutation(pool_size)  # this host's favorites
        offset = float(rng.uniform(0.0, duration - session_len)) if duration > session_len else 0.0
        t = start_time + offset
        session_end = t + session_len
        first_ts = None
        while t < session_end:
            ts = int(t)
            request = pool[int(ranking[int(rng.choice(pool_size, p=weights))])]
            entries.append(LogEntry(timestamp=ts, host_id=host, request_id=request))
            if first_ts is None:
                first_ts = ts
            t += float(rng.exponential(mean_interval))
        if first_ts is not None:
            labels.append(GoldLabel(host, False, None, first_ts))
    entries.sort(key=lambda e: (e.timestamp, e.host_id, e.request_id))
    return entries, labels


def inject_traffic(
    background: list[LogEntry],
    bot_streams: list[list[LogEntry]],
    duplication: int,
    seed=None,
    jitter: int = 0,
) -> tuple[list[LogEntry], list[GoldLabel]]:
    """Mix duplicated bot sessions into background traffic.

    ``duplication`` of zero injects nothing. Otherwise each bot stream is
    planted as the template plus ``duplication`` copies, all under fresh
    synthetic host ids (re-drawn on collision with background hosts) and
    with identical timing, so the planted columns are exactly equal; a
    non-zero ``jitter`` offsets each copied entry by a uniform number of
    seconds in [-jitter, jitter] to weaken the correlation on purpose.
    Labels cover exactly the injected hosts, one botnet id per stream.
    """
    rng = np.random.default_rng(seed)
    taken = {e.host_id for e in background}
    merged = list(background)
    labels: list[GoldLabel] = []
    if duplication > 0:
        for botnet_id, stream in enumerate(bot_streams):
            if not stream:
                continue
            for instance in range(duplication + 1):
                host = f"bot-{botnet_id:02d}-{instance:03d}"
                while host in taken:
                    host = f"bot-{botnet_id:02d}-{instance:03d}-{int(rng.integers(1 << 30)):08x}"
                taken.add(host)
                first_ts = None
                for e in stream:
                    ts = e.timestamp
                    if jitter > 0:
                        ts = max(0, ts + int(rng.integers(-jitter, jitter + 1)))
                    merged.append(LogEntry(timestamp=ts, host_id=host, request_id=e.request_id))
                    if first_ts is None or ts < first_ts:
                        first_ts = ts
                labels.append(GoldLabel(host, True, botnet_id, first_ts))
    merged.sort(key=lambda e: (e.timestamp, e.host_id, e.request_id))
    return merged, labels


def write_stream_csv(entries: list[LogEntry], path, header: bool = True) -> None:
    """Write entries in the triple-csv wire format."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write("timestamp,host,request\n")
        for e in entries:
            fh.write(f"{e.timestamp},{e.host_id},{e.request_id}\n")


def write_labels_csv(labels: list[GoldLabel], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["host_id", "is_bot", "botnet_id", "first_request_ts"])
        for lab in labels:
            writer.writerow(
                [
                    lab.host_id,
                    int(lab.is_bot),
                    "" if lab.botnet_id is None else lab.botnet_id,
                    lab.first_request_ts,
                ]
            )


def read_labels_csv(path) -> list[GoldLabel]:
    labels = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(
                GoldLabel(
                    host_id=row["host_id"],
                    is_bot=bool(int(row["is_bot"])),
                    botnet_id=int(row["botnet_id"]) if row["botnet_id"] else None,
                    first_request_ts=int(row["first_request_ts"]),
                )
            )
    return labels


def labeled_scenario(
    n_background: int,
    duration: float,
    bot_groups: list[dict],
    seed=None,
    background_session: float | None = None,
    pool_size: int = 200,
    link_list: list[str] | None = None,
) -> tuple[list[LogEntry], list[GoldLabel]]:
    """Background plus one or more injected botnets, fully labeled.

    Each entry of ``bot_groups`` describes one botnet:
    ``{"hosts": int, "start": int, "duration": float, "mode": str,
    "rate": float, "jitter": int}`` (mode/rate/jitter optional).
    """
    rng = np.random.default_rng(seed)
    background, bg_labels = background_traffic(
        n_background,
        duration,
        seed=rng,
        pool_size=pool_size,
        session_len=background_session,
    )
    if link_list is None:
        link_list = [f"/item/{i:03d}" for i in range(40)]
    merged = background
    labels = list(bg_labels)
    for idx, group in enumerate(bot_groups):
        template, _ = simulate_bot(
            SimConfig(
                mode=group.get("mode", "random_list"),
                link_list=link_list,
                duration=group["duration"],
                start_time=group["start"],
                rate_multiplier=group.get("rate", 1.0),
                seed=rng,
                host_id="template",
            )
        )
        merged, group_labels = inject_traffic(
            merged,
            [template],
            duplication=group["hosts"] - 1,
            seed=rng,
            jitter=group.get("jitter", 0),
        )
        for lab in group_labels:
            labels.append(GoldLabel(lab.host_id, True, idx, lab.first_request_ts))
    merged.sort(key=lambda e: (e.timestamp, e.host_id, e.request_id))
    return merged, labels
