"""Stream-to-alert orchestration.

Fans parsed entries out to one detection lane per configured window
length. Each lane owns a window engine and a detector; the first usable
window seeds the correlation state from scratch, every later slide goes
through the incremental update. Lanes are independent, so a monitor can
watch the same stream at several time scales at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import correlation
from .detector import BotnetAlert, DetectionParams, Detector
from .logs import LogEntry
from .window import SlidingWindowEngine, WindowConfig, WindowDelta


@dataclass
class LaneStats:
    window_len: int
    windows: int = 0
    alerts: int = 0
    degenerate: int = 0
    stale_dropped: int = 0


@dataclass
class MonitorStats:
    entries: int = 0
    lanes: list[LaneStats] = field(default_factory=list)

    @property
    def total_alerts(self) -> int:
        return sum(lane.alerts for lane in self.lanes)


class DetectionLane:
    """One window geometry: engine plus detector plus state bootstrap."""

    def __init__(
        self,
        window_config: WindowConfig,
        params: DetectionParams,
        seed: int = 0,
        sigma_tol: float = correlation.DEFAULT_SIGMA_TOL,
        reanchor_period: int = correlation.DEFAULT_REANCHOR_PERIOD,
        diag_sink: Callable[[dict], None] | None = None,
        detector_factory: Callable[..., Detector] | None = None,
    ) -> None:
        self.engine = SlidingWindowEngine(window_config)
        factory = detector_factory or Detector
        self.detector = factory(
            params, window_config.window_len, seed=seed, diag_sink=diag_sink
        )
        self.sigma_tol = sigma_tol
        self.reanchor_period = reanchor_period
        self.stats = LaneStats(window_len=window_config.window_len)

    def _handle(self, delta: WindowDelta) -> BotnetAlert | None:
        self.stats.windows += 1
        if self.detector.state is None:
            if self.engine.counts.n_rows < 2:
                self.stats.degenerate += 1
                return None
            self.detector.state = correlation.init_state(
                self.engine.counts,
                sigma_tol=self.sigma_tol,
                reanchor_period=self.reanchor_period,
            )
            alert = self.detector.evaluate_current(delta.window_end)
        else:
            alert = self.detector.process_slide(delta)
        if alert is not None:
            self.stats.alerts += 1
        return alert

    def push(self, entry: LogEntry) -> Iterable[BotnetAlert]:
        if not self.engine.push_entry(entry):
            return
        while True:
            delta = self.engine.advance_window(entry.timestamp)
            if delta is None:
                return
            alert = self._handle(delta)
            if alert is not None:
                yield alert

    def finish(self) -> Iterable[BotnetAlert]:
        for delta in self.engine.flush():
            alert = self._handle(delta)
            if alert is not None:
                yield alert
        self.stats.degenerate += self.detector.degenerate_slides
        self.stats.stale_dropped = self.engine.stale_dropped


def run_monitor(
    entries: Iterable[LogEntry],
    window_configs: list[WindowConfig],
    params: DetectionParams,
    seed: int = 0,
    alert_sink: Callable[[BotnetAlert], None] | None = None,
    diag_sink: Callable[[dict], None] | None = None,
    sigma_tol: float = correlation.DEFAULT_SIGMA_TOL,
    reanchor_period: int = correlation.DEFAULT_REANCHOR_PERIOD,
    detector_factory: Callable[..., Detector] | None = None,
) -> MonitorStats:
    """Drive a full stream through every lane; returns run statistics."""
    lanes = [
        DetectionLane(
            cfg,
            params,
            seed=seed,
            sigma_tol=sigma_tol,
            reanchor_period=reanchor_period,
            diag_sink=diag_sink,
            detector_factory=detector_factory,
        )
        for cfg in window_configs
    ]
    stats = MonitorStats()
    for entry in entries:
        stats.entries += 1
        for lane in lanes:
            for alert in lane.push(entry):
                if alert_sink is not None:
                    alert_sink(alert)
    for lane in lanes:
        for alert in lane.finish():
            if alert_sink is not None:
                alert_sink(alert)
        stats.lanes.append(lane.stats)
    return stats
