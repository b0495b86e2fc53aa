import math

import numpy as np
import pytest

from botmon import correlation as C
from botmon.verify import mutate_rows, random_rows
from botmon.window import WindowDelta, diff_counts


def rows_from_dense(matrix, hosts=None) -> dict:
    arr = np.asarray(matrix)
    hosts = hosts or [f"h{j}" for j in range(arr.shape[1])]
    rows = {}
    for i in range(arr.shape[0]):
        row = {hosts[j]: int(arr[i, j]) for j in range(arr.shape[1]) if arr[i, j]}
        rows[f"q{i:03d}"] = row
    return rows


def slide(state, old_rows, new_rows):
    return C.apply_slide(state, diff_counts(old_rows, new_rows)), new_rows


class TestInitState:
    def test_two_by_two_perfectly_correlated(self):
        state = C.from_counts(rows_from_dense([[1, 2], [3, 4]]))
        assert state.means.tolist() == [2.0, 3.0]
        assert np.allclose(state.sigma, [math.sqrt(2), math.sqrt(2)])
        assert np.allclose(state.corr, [[1, 1], [1, 1]])

    def test_three_row_hand_example(self):
        state = C.from_counts(rows_from_dense([[1, 1], [2, 3], [3, 2]]))
        assert state.means.tolist() == [2.0, 2.0]
        assert state.sigma.tolist() == [1.0, 1.0]
        assert np.allclose(state.corr, [[1.0, 0.5], [0.5, 1.0]])

    def test_constant_column_is_inactive(self):
        state = C.from_counts(rows_from_dense([[1, 2, 5], [3, 2, 7], [4, 2, 1]]))
        assert state.active.tolist() == [True, False, True]
        assert state.corr[1].tolist() == [0.0, 0.0, 0.0]
        assert state.corr[1, 1] == 0.0

    def test_single_row_rejected(self):
        with pytest.raises(C.DegenerateWindowError):
            C.from_counts(rows_from_dense([[1, 2]]))


class TestUpdateMeans:
    def test_append_one_row(self):
        state = C.from_counts(rows_from_dense([[1, 2], [3, 4]]))
        delta = WindowDelta(added_rows={"qX": {"h0": 5, "h1": 6}}, n_before=2, n_after=3)
        C.align_columns(state, delta)
        b = C.update_means(state, delta)
        assert b.tolist() == [3.0, 4.0]

    def test_empty_delta_keeps_means_bitwise(self):
        state = C.from_counts(rows_from_dense([[1, 1], [2, 3], [3, 2]]))
        before = state.means.copy()
        C.update_means(state, WindowDelta(n_before=3, n_after=3))
        assert np.array_equal(state.means, before)

    def test_shrinking_below_two_rows_rejected(self):
        state = C.from_counts(rows_from_dense([[1, 2], [3, 4]]))
        delta = WindowDelta(removed_rows={"q000": {"h0": 1, "h1": 2}}, n_before=2, n_after=1)
        with pytest.raises(C.DegenerateWindowError):
            C.update_means(state, delta)


def run_pipeline_steps(state, delta):
    C.align_columns(state, delta)
    C.update_means(state, delta)
    C.update_centered(state, delta)
    C.update_stddevs(state, delta)
    C.update_correlation(state, delta)
    return state


class TestUpdateCentered:
    def test_empty_delta_is_identity(self):
        rows = rows_from_dense([[1, 1], [2, 3], [3, 2]])
        state = C.from_counts(rows)
        before = state.centered()
        C.update_means(state, WindowDelta(n_before=3, n_after=3))
        C.update_centered(state, WindowDelta(n_before=3, n_after=3))
        assert np.array_equal(state.centered(), before)

    def test_column_sums_vanish_after_any_slide(self):
        rng = np.random.default_rng(5)
        rows = random_rows(20, 6, rng)
        state = C.from_counts(rows)
        new = mutate_rows(rows, rng, 6, n_cap=30, host_pool=[f"h{j:03d}" for j in range(6)], step=0)
        state = run_pipeline_steps(state, diff_counts(rows, new))
        colsums = state.centered().sum(axis=0)
        assert np.abs(colsums).max() <= 1e-9 * state.n

    def test_matches_from_scratch_centering(self):
        rng = np.random.default_rng(6)
        rows = random_rows(20, 6, rng)
        state = C.from_counts(rows)
        new = mutate_rows(rows, rng, 8, n_cap=40, host_pool=[f"h{j:03d}" for j in range(6)], step=0)
        state = run_pipeline_steps(state, diff_counts(rows, new))
        ref = C.from_counts(new, host_order=state.hosts)
        order = sorted(state.raw_rows)
        assert np.abs(state.centered(order) - ref.centered(order)).max() <= 1e-10


class TestUpdateStddevs:
    def test_empty_delta_keeps_sigma_bitwise(self):
        state = C.from_counts(rows_from_dense([[1, 1], [2, 3], [3, 2]]))
        before = state.sigma.copy()
        C.update_means(state, WindowDelta(n_before=3, n_after=3))
        C.update_centered(state, WindowDelta(n_before=3, n_after=3))
        C.update_stddevs(state, WindowDelta(n_before=3, n_after=3))
        assert np.array_equal(state.sigma, before)

    def test_matches_from_scratch_sample_stddev(self):
        rng = np.random.default_rng(7)
        rows = random_rows(20, 6, rng)
        state = C.from_counts(rows)
        new = mutate_rows(rows, rng, 8, n_cap=40, host_pool=[f"h{j:03d}" for j in range(6)], step=0)
        state = run_pipeline_steps(state, diff_counts(rows, new))
        ref = C.from_counts(new, host_order=state.hosts)
        rel = np.abs(state.sigma - ref.sigma) / np.maximum(ref.sigma, 1e-300)
        assert rel[ref.active].max() <= 1e-8

    def test_column_made_constant_is_deactivated(self):
        # h1 varies initially; the slide rewrites its counts to a constant
        old = rows_from_dense([[1, 1], [2, 3], [3, 2]])
        state = C.from_counts(old)
        new = {
            "q000": {"h0": 1, "h1": 2},
            "q001": {"h0": 2, "h1": 2},
            "q002": {"h0": 3, "h1": 2},
        }
        state = run_pipeline_steps(state, diff_counts(old, new))
        assert state.sigma[1] == 0.0
        assert not state.active[1]
        assert state.active[0]


class TestUpdateCorrelation:
    def test_empty_delta_keeps_correlation_identical(self):
        state = C.from_counts(rows_from_dense([[1, 1], [2, 3], [3, 2]]))
        before = state.corr.copy()
        run_pipeline_steps(state, WindowDelta(n_before=3, n_after=3))
        assert np.abs(state.corr - before).max() == 0.0

    def test_twenty_chained_slides_match_from_scratch(self):
        rng = np.random.default_rng(8)
        rows = random_rows(30, 8, rng)
        state = C.from_counts(rows, reanchor_period=1 << 30)
        current = rows
        for step in range(20):
            new = mutate_rows(current, rng, 6, n_cap=60, host_pool=[f"h{j:03d}" for j in range(8)], step=step)
            state, current = slide(state, current, new)
        ref = C.from_counts(current, host_order=state.hosts)
        assert np.array_equal(state.active, ref.active)
        assert np.abs(state.corr - ref.corr).max() <= 1e-8

    def test_brand_new_host_column(self):
        old = rows_from_dense([[1, 2], [3, 1], [2, 2]])
        state = C.from_counts(old)
        new = {req: dict(row) for req, row in old.items()}
        new["q000"]["fresh"] = 4
        new["q002"]["fresh"] = 1
        state = run_pipeline_steps(state, diff_counts(old, new))
        assert state.hosts[-1] == "fresh"
        ref = C.from_counts(new, host_order=state.hosts)
        assert np.abs(state.corr - ref.corr).max() <= 1e-8


class TestAlignColumns:
    def test_no_column_changes_is_identity(self):
        state = C.from_counts(rows_from_dense([[1, 2], [3, 4]]))
        hosts_before = list(state.hosts)
        C.align_columns(state, WindowDelta(n_before=2, n_after=2))
        assert state.hosts == hosts_before

    def test_added_host_gets_zero_column(self):
        state = C.from_counts(rows_from_dense([[1, 2], [3, 4]]))
        delta = WindowDelta(added_hosts=["fresh"], n_before=2, n_after=2)
        C.align_columns(state, delta)
        assert state.m == 3 and state.hosts[-1] == "fresh"
        assert state.means[2] == 0.0 and state.sigma[2] == 0.0
        assert not state.active[2]
        assert np.array_equal(state.scatter[2], np.zeros(3))

    def test_removed_host_entries_deleted(self):
        state = C.from_counts(rows_from_dense([[1, 2, 5], [3, 4, 1]]))
        delta = WindowDelta(removed_hosts=["h1"], n_before=2, n_after=2)
        C.align_columns(state, delta)
        assert state.hosts == ["h0", "h2"]
        assert state.means.tolist() == [2.0, 3.0]


class TestApplySlide:
    def test_long_chain_without_reanchor(self):
        rng = np.random.default_rng(12)
        hosts = [f"h{j:03d}" for j in range(20)]
        rows = random_rows(50, 20, rng)
        state = C.from_counts(rows, reanchor_period=1 << 30)
        current = rows
        for step in range(200):
            new = mutate_rows(current, rng, 8, n_cap=80, host_pool=hosts, step=step)
            delta = diff_counts(current, new)
            state = C.apply_slide(state, delta)
            current = new
        ref = C.from_counts(current, host_order=state.hosts)
        assert np.abs(state.corr - ref.corr).max() <= 1e-7

    def test_reanchor_every_slide_is_exact(self):
        rng = np.random.default_rng(13)
        hosts = [f"h{j:03d}" for j in range(6)]
        rows = random_rows(15, 6, rng)
        state = C.from_counts(rows, reanchor_period=1)
        current = rows
        for step in range(10):
            new = mutate_rows(current, rng, 4, n_cap=40, host_pool=hosts, step=step)
            state = C.apply_slide(state, diff_counts(current, new))
            current = new
            ref = C.from_counts(current, host_order=state.hosts)
            assert np.array_equal(state.corr, ref.corr)
            assert np.array_equal(state.sigma, ref.sigma)

    def test_failed_slide_leaves_state_intact(self):
        rows = rows_from_dense([[1, 2], [3, 4]])
        state = C.from_counts(rows)
        corr_before = state.corr.copy()
        delta = WindowDelta(removed_rows={"q000": {"h0": 1, "h1": 2}}, n_before=2, n_after=1)
        with pytest.raises(C.DegenerateWindowError):
            C.apply_slide(state, delta)
        assert np.array_equal(state.corr, corr_before)
        assert state.n == 2


class TestInvariants:
    @pytest.fixture
    def walked_state(self):
        rng = np.random.default_rng(21)
        hosts = [f"h{j:03d}" for j in range(10)]
        rows = random_rows(40, 10, rng)
        state = C.from_counts(rows)
        current = rows
        for step in range(30):
            new = mutate_rows(current, rng, 6, n_cap=60, host_pool=hosts, step=step)
            state = C.apply_slide(state, diff_counts(current, new))
            current = new
        return state

    def test_bitwise_symmetry(self, walked_state):
        assert np.array_equal(walked_state.corr, walked_state.corr.T)

    def test_unit_diagonal_on_active_columns(self, walked_state):
        diag = np.diag(walked_state.corr)[walked_state.active]
        assert np.abs(diag - 1.0).max() <= 1e-9

    def test_entries_bounded(self, walked_state):
        assert np.abs(walked_state.corr).max() <= 1.0 + 1e-9

    def test_sigma_nonnegative(self, walked_state):
        assert (walked_state.sigma >= 0).all()


class TestCostCounters:
    def _ops_for(self, m: int, added: int) -> int:
        base = rows_from_dense(np.ones((6, m), dtype=int) + np.arange(6)[:, None])
        state = C.from_counts(base)
        delta = WindowDelta(
            added_rows={
                f"new{i}": {f"h{j}": (i + j) % 3 + 1 for j in range(m)} for i in range(added)
            },
            n_before=6,
            n_after=6 + added,
        )
        out = C.apply_slide(state, delta)
        return out.last_slide_ops

    def test_linear_growth_in_delta_size(self):
        m = 24
        o2, o4, o8 = (self._ops_for(m, a) for a in (2, 4, 8))
        first, second = o4 - o2, o8 - o4
        assert second / first == pytest.approx(2.0, rel=0.05)

    def test_quadratic_growth_in_host_count(self):
        o10 = self._ops_for(10, 4)
        o20 = self._ops_for(20, 4)
        assert 3.3 <= o20 / o10 <= 4.3


class TestSerialization:
    def test_blob_roundtrip(self):
        state = C.from_counts(rows_from_dense([[1, 1], [2, 3], [3, 2]]))
        blob = state.to_blob()
        n, m, means, sigma, corr = C.CorrelationState.blob_fields(blob)
        assert (n, m) == (3, 2)
        assert np.array_equal(means, state.means)
        assert np.array_equal(sigma, state.sigma)
        assert np.array_equal(corr, state.corr)


class TestFaultInjection:
    def test_perturbed_update_is_caught_by_oracle_comparison(self):
        rng = np.random.default_rng(3)
        rows = random_rows(20, 5, rng)
        state = C.from_counts(rows)
        new = mutate_rows(rows, rng, 5, n_cap=40, host_pool=[f"h{j:03d}" for j in range(5)], step=0)
        C.set_fault_injection(True)
        try:
            state = C.apply_slide(state, diff_counts(rows, new))
        finally:
            C.set_fault_injection(False)
        ref = C.from_counts(new, host_order=state.hosts)
        assert np.abs(state.corr - ref.corr).max() > 1e-7
