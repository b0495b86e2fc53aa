"""Incremental correlation statistics over a sliding window.

Maintains, per window, the column means, the raw count matrix, the
centered scatter matrix, the per-host standard deviations, and the
host-host correlation matrix. After a window slide the state is updated
from the :class:`~botmon.window.WindowDelta` alone, touching only the
affected rows plus one rank-one mean correction, at cost
O(m^2 * (added + removed + changed)) instead of the O(n * m^2) full
recomputation.

Derivation sketch for the scatter update. Write the centered scatter
C = Xc^T Xc with Xc = X - 1 b^T. Splitting the new window's rows into
retained rows (old rows minus the change block D, D = old - new) and
appended rows A, and writing db = b_new - b_old, s_rem for the column
sums of the mean-centered removed rows Rc, and Nc for the new-centered
changed rows:

    C_new = C_old
            - Rc^T Rc + s_rem db^T + db s_rem^T
            - (Nc^T D + D^T Nc) - D^T D
            + (n_old - n_removed) db db^T
            + Ac^T Ac                       (Ac = appended rows - b_new)

Every term involves only touched rows, so the cost is proportional to
the delta size. Standard deviations are updated from the diagonal of the
same expression. The correlation matrix is the scatter rescaled by the
inverse standard deviations; columns whose deviation falls below the
tolerance are masked out entirely (zero rows/columns, zero diagonal)
to keep the rescale well defined.

Column means are carried as exact integer column sums (n * b), so the
mean update is drift-free; the scatter and deviation updates accumulate
rounding at machine precision per slide, which the periodic re-anchor
(full recomputation every ``reanchor_period`` slides) bounds.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .window import CountMatrix, Rows, WindowDelta

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_TOL = 1e-12
DEFAULT_REANCHOR_PERIOD = 128

# test hook: perturb one correlation update term to prove the
# verification suites actually detect a broken update path
_FAULT_INJECTION = False


def set_fault_injection(enabled: bool) -> None:
    global _FAULT_INJECTION
    _FAULT_INJECTION = enabled


class DegenerateWindowError(ValueError):
    """Window has fewer than two request rows; sample statistics undefined."""


@dataclass
class CorrelationState:
    """Live statistics of the current window.

    ``scatter`` is the centered scatter matrix (n-1 times the covariance);
    ``corr`` is derived from it and is bitwise symmetric by construction.
    ``sums`` carries the exact integer column sums, so ``means`` never
    drifts. ``raw_rows`` mirrors the window's sparse count matrix and is
    what re-anchoring recomputes from.
    """

    hosts: list[str]
    host_index: dict[str, int]
    n: int
    sums: np.ndarray
    means: np.ndarray
    sigma: np.ndarray
    scatter: np.ndarray
    corr: np.ndarray
    active: np.ndarray
    raw_rows: Rows
    max_count: float
    sigma_tol: float = DEFAULT_SIGMA_TOL
    reanchor_period: int = DEFAULT_REANCHOR_PERIOD
    slides_since_anchor: int = 0
    op_count: int = 0
    last_slide_ops: int = 0
    # scratch fields valid during one slide
    _means_prev: np.ndarray | None = None
    _delta_means: np.ndarray | None = None
    _var_resync: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.hosts)

    @property
    def m_active(self) -> int:
        return int(self.active.sum())

    def sigma_threshold(self) -> float:
        return self.sigma_tol * max(1.0, self.max_count)

    def centered(self, request_order: list[str] | None = None) -> np.ndarray:
        """Materialize the centered matrix X - 1 b^T for the current window."""
        reqs = request_order if request_order is not None else sorted(self.raw_rows)
        out = np.zeros((len(reqs), self.m), dtype=np.float64)
        for i, req in enumerate(reqs):
            for host, count in self.raw_rows[req].items():
                j = self.host_index.get(host)
                if j is not None:
                    out[i, j] = count
        out -= self.means
        return out

    def copy(self) -> "CorrelationState":
        return CorrelationState(
            hosts=list(self.hosts),
            host_index=dict(self.host_index),
            n=self.n,
            sums=self.sums.copy(),
            means=self.means.copy(),
            sigma=self.sigma.copy(),
            scatter=self.scatter.copy(),
            corr=self.corr.copy(),
            active=self.active.copy(),
            raw_rows={req: dict(row) for req, row in self.raw_rows.items()},
            max_count=self.max_count,
            sigma_tol=self.sigma_tol,
            reanchor_period=self.reanchor_period,
            slides_since_anchor=self.slides_since_anchor,
            op_count=self.op_count,
            last_slide_ops=self.last_slide_ops,
        )

    def to_blob(self) -> bytes:
        """Serialize for snapshot tests.

        Layout: n and m as little-endian uint64, then means (m), sigma (m)
        and the correlation matrix row-major (m*m), all little-endian
        float64.
        """
        head = struct.pack("<QQ", self.n, self.m)
        body = np.concatenate([self.means, self.sigma, self.corr.reshape(-1)])
        return head + body.astype("<f8").tobytes()

    @staticmethod
    def blob_fields(blob: bytes) -> tuple[int, int, np.ndarray, np.ndarray, np.ndarray]:
        n, m = struct.unpack_from("<QQ", blob)
        data = np.frombuffer(blob, dtype="<f8", offset=16)
        means = data[:m].copy()
        sigma = data[m:2 * m].copy()
        corr = data[2 * m:2 * m + m * m].reshape(m, m).copy()
        return n, m, means, sigma, corr


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    """Force bitwise symmetry: keep the upper triangle, mirror it down."""
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def _rows_to_dense(rows: Rows, host_index: dict[str, int], order: list[str]) -> np.ndarray:
    out = np.zeros((len(order), len(host_index)), dtype=np.float64)
    for i, req in enumerate(order):
        for host, value in rows[req].items():
            j = host_index.get(host)
            if j is not None:
                out[i, j] = value
    return out


def from_counts(
    rows: Rows,
    host_order: list[str] | None = None,
    sigma_tol: float = DEFAULT_SIGMA_TOL,
    reanchor_period: int = DEFAULT_REANCHOR_PERIOD,
) -> CorrelationState:
    """Build the full state from scratch (cost O(n m^2)).

    This is the authoritative from-scratch semantics that the incremental
    path is verified against, and the routine re-anchoring falls back to.
    """
    n = len(rows)
    if n < 2:
        raise DegenerateWindowError(f"need at least 2 request rows, got {n}")
    if host_order is None:
        seen: dict[str, None] = {}
        for row in rows.values():
            for host in row:
                seen.setdefault(host)
        host_order = sorted(seen)
    host_index = {h: j for j, h in enumerate(host_order)}
    m = len(host_order)

    dense = _rows_to_dense(rows, host_index, sorted(rows))
    max_count = float(dense.max()) if dense.size else 0.0
    sums = dense.sum(axis=0)
    means = sums / n
    centered = dense - means
    scatter = _mirror_upper(centered.T @ centered)
    var = np.diag(scatter) / (n - 1)
    sigma = np.sqrt(np.maximum(var, 0.0))

    state = CorrelationState(
        hosts=list(host_order),
        host_index=host_index,
        n=n,
        sums=sums,
        means=means,
        sigma=sigma,
        scatter=scatter,
        corr=np.zeros((m, m)),
        active=np.zeros(m, dtype=bool),
        raw_rows={req: dict(row) for req, row in rows.items()},
        max_count=max_count,
        sigma_tol=sigma_tol,
        reanchor_period=reanchor_period,
    )
    state.active = sigma > state.sigma_threshold()
    state.corr = _rescale_correlation(state)
    state.op_count += n * m * m
    return state


def init_state(
    counts: CountMatrix,
    sigma_tol: float = DEFAULT_SIGMA_TOL,
    reanchor_period: int = DEFAULT_REANCHOR_PERIOD,
) -> CorrelationState:
    """From-scratch initialization off a window engine's count matrix."""
    return from_counts(
        counts.copy_rows(),
        host_order=counts.hosts(),
        sigma_tol=sigma_tol,
        reanchor_period=reanchor_period,
    )


def _rescale_correlation(state: CorrelationState) -> np.ndarray:
    """corr = scatter / ((n-1) sigma_i sigma_j) over active columns."""
    inv = np.zeros(state.m)
    act = state.active
    inv[act] = 1.0 / state.sigma[act]
    denom_inv = np.outer(inv, inv) / (state.n - 1)
    corr = state.scatter * denom_inv
    corr[~act, :] = 0.0
    corr[:, ~act] = 0.0
    state.op_count += 2 * state.m * state.m
    return corr


def align_columns(state: CorrelationState, delta: WindowDelta) -> None:
    """Reshape the state's columns before applying row updates.

    Removed hosts lose their entries everywhere (their counts are zero in
    the new window, so dropping the column first is exact); added hosts
    get zero-valued columns that the row updates then fill.
    """
    if not delta.added_hosts and not delta.removed_hosts:
        return
    removed = set(delta.removed_hosts)
    kept = [h for h in state.hosts if h not in removed]
    new_hosts = kept + list(delta.added_hosts)
    keep_idx = np.array([state.host_index[h] for h in kept], dtype=np.intp)
    m_new = len(new_hosts)

    def grow_vec(v: np.ndarray) -> np.ndarray:
        out = np.zeros(m_new, dtype=v.dtype)
        out[: len(keep_idx)] = v[keep_idx]
        return out

    scatter = np.zeros((m_new, m_new))
    if len(keep_idx):
        scatter[: len(keep_idx), : len(keep_idx)] = state.scatter[np.ix_(keep_idx, keep_idx)]
    state.sums = grow_vec(state.sums)
    state.means = grow_vec(state.means)
    state.sigma = grow_vec(state.sigma)
    state.active = np.concatenate(
        [state.active[keep_idx], np.zeros(len(delta.added_hosts), dtype=bool)]
    )
    state.scatter = scatter
    state.corr = np.zeros((m_new, m_new))
    state.hosts = new_hosts
    state.host_index = {h: j for j, h in enumerate(new_hosts)}
    state.op_count += m_new * m_new


def _colsum(rows: Rows, state: CorrelationState) -> np.ndarray:
    out = np.zeros(state.m)
    for row in rows.values():
        for host, value in row.items():
            j = state.host_index.get(host)
            if j is not None:
                out[j] += value
    return out


def update_means(state: CorrelationState, delta: WindowDelta) -> np.ndarray:
    """Mean update: n_new * b_new = n_old * b_old + column-sum corrections.

    The change block carries old - new, so its column sums are subtracted.
    Sums stay exact (integer-valued floats), means are re-derived each
    slide.
    """
    n_new = state.n - delta.n_minus + delta.n_plus
    if n_new < 2:
        raise DegenerateWindowError(f"slide would leave {n_new} rows in the window")
    if delta.size == 0:
        state._means_prev = state.means
        state._delta_means = np.zeros(state.m)
        return state.means
    sums_new = (
        state.sums
        + _colsum(delta.added_rows, state)
        - _colsum(delta.removed_rows, state)
        - _colsum(delta.changed_rows, state)
    )
    state._means_prev = state.means
    state.means = sums_new / n_new
    state._delta_means = state.means - state._means_prev
    state.sums = sums_new
    state.n = n_new
    state.op_count += state.m * (delta.size + 2)
    return state.means


def update_centered(state: CorrelationState, delta: WindowDelta) -> None:
    """Apply row edits so that centered() reflects the post-slide window.

    Retained changed rows become old - D (then centered at the new mean on
    materialization), removed rows disappear, appended rows are inserted.
    """
    for req in delta.removed_rows:
        state.raw_rows.pop(req, None)
    for req, dc in delta.changed_rows.items():
        row = state.raw_rows[req]
        for host, diff in dc.items():
            new_val = row.get(host, 0) - diff
            if new_val == 0:
                row.pop(host, None)
            else:
                row[host] = new_val
                if new_val > state.max_count:
                    state.max_count = float(new_val)
        if not row:
            del state.raw_rows[req]
    for req, row in delta.added_rows.items():
        state.raw_rows[req] = dict(row)
        top = max(row.values(), default=0)
        if top > state.max_count:
            state.max_count = float(top)
    state.op_count += state.m * (delta.n_plus + delta.n_changed)


def _slide_blocks(state: CorrelationState, delta: WindowDelta):
    """Dense per-block views of the delta over the aligned column order.

    Must run after update_means and update_centered: the removed block is
    centered at the previous mean, while the changed and appended blocks
    use the post-slide raw rows and new mean.
    """
    b_prev = state._means_prev
    db = state._delta_means
    if b_prev is None or db is None:
        raise RuntimeError("update_means must run before the scatter updates")
    rem_ids = sorted(delta.removed_rows)
    chg_ids = sorted(delta.changed_rows)
    add_ids = sorted(delta.added_rows)
    rem_c = _rows_to_dense(delta.removed_rows, state.host_index, rem_ids) - b_prev
    dc = _rows_to_dense(delta.changed_rows, state.host_index, chg_ids)
    new_chg = {req: state.raw_rows[req] for req in chg_ids}
    chg_new_c = _rows_to_dense(new_chg, state.host_index, chg_ids) - state.means
    add_c = _rows_to_dense(delta.added_rows, state.host_index, add_ids) - state.means
    return rem_c, dc, chg_new_c, add_c, db


def _column_variance_scaled(state: CorrelationState, j: int) -> float:
    """Exact (n-1)*variance of one column, scanned from the raw counts."""
    host = state.hosts[j]
    mean = state.means[j]
    total = 0.0
    nonzero = 0
    for row in state.raw_rows.values():
        value = row.get(host)
        if value is not None:
            total += (value - mean) ** 2
            nonzero += 1
    total += (state.n - nonzero) * mean * mean
    state.op_count += state.n
    return total


def update_stddevs(state: CorrelationState, delta: WindowDelta) -> np.ndarray:
    """Per-column deviation update from the touched rows only.

    Evaluates the diagonal of the scatter correction. Negative results are
    clamped to zero. Counts are integers, so any non-constant column has
    a scaled variance of at least 1/2; updated values falling below a
    noise floor far under that can only be cancellation residue of a
    became-constant column and are recomputed exactly, which keeps the
    active mask in lockstep with the from-scratch path.
    """
    if delta.size == 0:
        return state.sigma
    n_new = state.n  # update_means already committed the new row count
    n_old = n_new + delta.n_minus - delta.n_plus
    rem_c, dc, chg_new_c, add_c, db = _slide_blocks(state, delta)
    s_rem = rem_c.sum(axis=0)

    diag_corr = (
        -np.einsum("ij,ij->j", rem_c, rem_c)
        + 2.0 * s_rem * db
        + (n_old - delta.n_minus) * db * db
        - 2.0 * np.einsum("ij,ij->j", chg_new_c, dc)
        - np.einsum("ij,ij->j", dc, dc)
        + np.einsum("ij,ij->j", add_c, add_c)
    )
    var_scaled = (n_old - 1) * state.sigma**2 + diag_corr
    noise_floor = 1e-8 * max(1.0, state.max_count) ** 2
    suspicious = np.flatnonzero(var_scaled < noise_floor)
    state._var_resync = []
    for j in suspicious:
        var_scaled[j] = _column_variance_scaled(state, int(j))
        state._var_resync.append((int(j), float(var_scaled[j])))
    clamped = var_scaled < 0.0
    if clamped.any():
        logger.debug(
            "clamped %d negative variance value(s) to zero (min %.3e)",
            int(clamped.sum()),
            float(var_scaled.min()),
        )
        var_scaled = np.maximum(var_scaled, 0.0)
    state.sigma = np.sqrt(var_scaled / (n_new - 1))
    state.active = state.sigma > state.sigma_threshold()
    state.op_count += state.m * (2 * delta.size + 6)
    return state.sigma


def update_correlation(state: CorrelationState, delta: WindowDelta) -> np.ndarray:
    """Scatter and correlation update from the delta blocks.

    Applies the correction matrix built from the mean-shift rank-one term,
    the appended-row Gram term, the removed-row terms, and the changed-row
    cross terms (which reuse the already-updated centered rows), then
    rescales by the new deviations. Only active columns carry correlation
    values; masked columns are zeroed, diagonal included.
    """
    if delta.size == 0 and not _FAULT_INJECTION:
        state._means_prev = None
        state._delta_means = None
        return state.corr
    n_new = state.n
    n_old = n_new + delta.n_minus - delta.n_plus
    rem_c, dc, chg_new_c, add_c, db = _slide_blocks(state, delta)
    s_rem = rem_c.sum(axis=0)

    correction = (
        -rem_c.T @ rem_c
        + np.outer(s_rem, db)
        + np.outer(db, s_rem)
        + (n_old - delta.n_minus) * np.outer(db, db)
        - chg_new_c.T @ dc
        - dc.T @ chg_new_c
        - dc.T @ dc
        + add_c.T @ add_c
    )
    if _FAULT_INJECTION:
        correction[0, 0] += 1e-3
    state.scatter = _mirror_upper(state.scatter + correction)
    # columns whose variance was recomputed exactly get their scatter
    # diagonal pinned to the same value (see update_stddevs)
    for j, var_exact in state._var_resync:
        state.scatter[j, j] = var_exact
    state._var_resync = []
    state.corr = _rescale_correlation(state)
    state.op_count += state.m * state.m * (delta.n_minus + 2 * delta.n_changed + delta.n_plus + 4)
    state._means_prev = None
    state._delta_means = None
    return state.corr


def apply_slide(state: CorrelationState, delta: WindowDelta) -> CorrelationState:
    """Run one full incremental update; returns a new state.

    The input state is never mutated, so a failed slide (for example a
    window shrinking below two rows) leaves the caller's state intact.
    Every ``reanchor_period`` slides the state is recomputed from the raw
    counts to flush accumulated floating-point drift.
    """
    work = state.copy()
    ops_before = work.op_count
    align_columns(work, delta)
    update_means(work, delta)
    update_centered(work, delta)
    update_stddevs(work, delta)
    update_correlation(work, delta)
    work.slides_since_anchor += 1
    work.last_slide_ops = work.op_count - ops_before
    if work.slides_since_anchor >= work.reanchor_period:
        anchored = from_counts(
            work.raw_rows,
            host_order=work.hosts,
            sigma_tol=work.sigma_tol,
            reanchor_period=work.reanchor_period,
        )
        anchored.op_count = work.op_count
        anchored.last_slide_ops = work.last_slide_ops
        return anchored
    return work
