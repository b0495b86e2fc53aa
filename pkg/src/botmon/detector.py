"""Per-slide detection: estimate, score hosts, group and merge botnets.

After each window slide the correlation state is updated and the
principal weight estimated on the active-host submatrix. A warning
verdict turns the principal eigenvector into per-host loading scores
rho_j = mu_j * sqrt(lambda_raw) (the correlation between host j and the
principal component, so |rho| stays in [0, 1] up to estimation error).
Hosts above the first knee of the descending score list and above the
alarm threshold are flagged as one group; groups from different windows
are merged whenever they share at least two hosts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .correlation import CorrelationState, DegenerateWindowError, apply_slide
from .lanczos import PrincipalEstimate, estimate_principal
from .window import WindowDelta


@dataclass
class DetectionParams:
    """Thresholds and size schedule for the estimation loop.

    ``omega`` is the principal-weight alarm threshold and must exceed 1/2:
    only then is a bracketed normalized eigenvalue above it necessarily
    the largest one. The k fractions are taken of the active host count
    and rounded up.
    """

    omega: float = 0.65
    eps1: float = 1e-10
    eps2: float = 0.01
    k_l_frac: float = 0.10
    k_u_frac: float = 0.80
    k_s_frac: float = 0.01
    c: int = 25
    knee_theta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.5 < self.omega <= 1.0:
            raise ValueError(f"omega must be in (0.5, 1], got {self.omega}")
        if not 0.0 < self.eps1 < self.eps2 < 1.0:
            raise ValueError("need 0 < eps1 < eps2 < 1")
        if not 0.0 < self.k_l_frac <= self.k_u_frac <= 1.0:
            raise ValueError("need 0 < k_l_frac <= k_u_frac <= 1")
        if self.k_s_frac <= 0.0:
            raise ValueError("k_s_frac must be positive")
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if not 0.0 < self.knee_theta < 1.0:
            raise ValueError("knee_theta must be in (0, 1)")


@dataclass
class BotnetAlert:
    """One flagged host group for one window."""

    window_end: int
    window_len: int
    principal_weight: float
    error_bound: float
    k_used: int
    botnet_id: int
    hosts: list[tuple[str, float]]  # (host_id, rho), rho descending

    def to_json(self) -> str:
        return json.dumps(
            {
                "window_end": self.window_end,
                "window_len_secs": self.window_len,
                "principal_weight": self.principal_weight,
                "error_bound": self.error_bound,
                "k_used": self.k_used,
                "botnet_id": self.botnet_id,
                "hosts": [{"id": h, "rho": r} for h, r in self.hosts],
            }
        )


def host_scores(
    estimate: PrincipalEstimate, hosts: list[str], active: np.ndarray
) -> list[tuple[str, float]]:
    """Loading score per host, sorted descending.

    The eigenvector lives on the active submatrix; inactive hosts score
    zero. Scores use the raw-scale eigenvalue so a score is the
    correlation of the host's column with the principal component.
    """
    root = math.sqrt(max(estimate.lambda_raw, 0.0))
    scores = np.zeros(len(hosts))
    scores[np.flatnonzero(active)] = estimate.eigvec * root
    ranked = sorted(zip(hosts, scores.tolist()), key=lambda item: -item[1])
    return ranked


def knee_cutoff(
    scores: list[tuple[str, float]], omega: float, knee_theta: float
) -> list[tuple[str, float]]:
    """Hosts above the first sharp relative drop and above omega.

    The knee is the first index i where (rho_i - rho_{i+1}) relative to
    rho_i is at least ``knee_theta``; everything up to and including i is
    kept, then the omega filter prunes weak scores. Without a knee only
    the omega filter applies.
    """
    if not scores:
        return []
    knee_end = len(scores)
    for i in range(len(scores) - 1):
        top = max(scores[i][1], 1e-12)
        if (scores[i][1] - scores[i + 1][1]) / top >= knee_theta:
            knee_end = i + 1
            break
    return [(h, r) for h, r in scores[:knee_end] if r >= omega]


class BotnetRegistry:
    """Stable group identities across windows.

    A new flagged group joins an existing botnet when they share at least
    two hosts; a group bridging several botnets collapses them all into
    the oldest id. Retired ids are never reissued.
    """

    def __init__(self) -> None:
        self.groups: dict[int, set[str]] = {}
        self._next_id = 0

    def assign(self, new_group: set[str]) -> int:
        if not new_group:
            raise ValueError("cannot assign an empty host group")
        overlapping = sorted(
            gid for gid, hosts in self.groups.items() if len(hosts & new_group) >= 2
        )
        if not overlapping:
            gid = self._next_id
            self._next_id += 1
            self.groups[gid] = set(new_group)
            return gid
        survivor = overlapping[0]
        merged = set(new_group)
        for gid in overlapping:
            merged |= self.groups.pop(gid)
        self.groups[survivor] = merged
        return survivor


def merge_botnets(registry: BotnetRegistry, new_group: set[str]) -> int:
    """Merge a flagged host set into the cross-window botnet history."""
    return registry.assign(new_group)


class Detector:
    """Single-window-length detection lane.

    Owns one correlation state, one botnet registry, and the per-slide
    loop: update statistics, estimate the principal weight, emit an alert
    when the warning verdict produces a non-empty flagged set. A failed
    slide (for example the window draining below two rows) leaves the
    previous state intact.
    """

    def __init__(
        self,
        params: DetectionParams,
        window_len: int,
        seed: int = 0,
        diag_sink: Callable[[dict], None] | None = None,
    ) -> None:
        self.params = params
        self.window_len = window_len
        self.seed = seed
        self.state: CorrelationState | None = None
        self.registry = BotnetRegistry()
        self.diag_sink = diag_sink
        self.degenerate_slides = 0
        self.last_estimate: PrincipalEstimate | None = None

    def _slide_seed(self, window_end: int) -> list[int]:
        return [self.seed, self.window_len, window_end]

    def process_slide(self, delta: WindowDelta) -> BotnetAlert | None:
        if self.state is None:
            raise RuntimeError("detector state not initialized; seed it from the first window")
        try:
            new_state = apply_slide(self.state, delta)
        except DegenerateWindowError:
            self.degenerate_slides += 1
            self._diag(delta.window_end, None, None, note="degenerate-window")
            return None
        self.state = new_state
        return self._evaluate(delta.window_end)

    def evaluate_current(self, window_end: int) -> BotnetAlert | None:
        """Run detection on the state as-is (used for the first window)."""
        return self._evaluate(window_end)

    def _estimate(self, sub: np.ndarray, window_end: int) -> PrincipalEstimate:
        return estimate_principal(sub, self.params, seed=self._slide_seed(window_end))

    def _evaluate(self, window_end: int) -> BotnetAlert | None:
        state = self.state
        active_idx = np.flatnonzero(state.active)
        sub = state.corr[np.ix_(active_idx, active_idx)]
        estimate = self._estimate(sub, window_end)
        self.last_estimate = estimate
        alert = None
        if estimate.verdict == "warn":
            ranked = host_scores(estimate, state.hosts, state.active)
            flagged = knee_cutoff(ranked, self.params.omega, self.params.knee_theta)
            if flagged:
                botnet_id = self.registry.assign({h for h, _ in flagged})
                alert = BotnetAlert(
                    window_end=window_end,
                    window_len=self.window_len,
                    principal_weight=estimate.lambda_norm,
                    error_bound=estimate.error_norm,
                    k_used=estimate.k_used,
                    botnet_id=botnet_id,
                    hosts=flagged,
                )
        self._diag(window_end, estimate, alert)
        return alert

    def _diag(
        self,
        window_end: int,
        estimate: PrincipalEstimate | None,
        alert: BotnetAlert | None,
        note: str = "",
    ) -> None:
        if self.diag_sink is None:
            return
        record = {
            "window_end": window_end,
            "window_len_secs": self.window_len,
            "verdict": estimate.verdict if estimate else "skipped",
            "principal_weight": estimate.lambda_norm if estimate else None,
            "error_bound": estimate.error_norm if estimate else None,
            "k_used": estimate.k_used if estimate else 0,
            "m": self.state.m if self.state else 0,
            "m_active": self.state.m_active if self.state else 0,
            "n": self.state.n if self.state else 0,
            "slide_ops": self.state.last_slide_ops if self.state else 0,
            "estimate_ops": estimate.ops if estimate else 0,
            "alerted": alert is not None,
        }
        if note:
            record["note"] = note
        self.diag_sink(record)
