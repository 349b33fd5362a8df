"""Analysis-domain construction: cohort segments, selection modes, gap fill."""

import numpy as np
import pytest

from ctrend.domain import AnalysisDomain, DomainError, build_domain
from ctrend.grid import CellIndex, ObservationalFrame

from conftest import make_cell


def frame66():
    return ObservationalFrame.from_integer_bounds(0, 5, 0, 5)


def cells_at(frame, coords, values=None):
    values = values or [25.0] * len(coords)
    return [make_cell(frame, i, j, x) for (i, j), x in zip(coords, values)]


def gap_fill_oracle(mask):
    """Independent fixed-point filler: rescan rows and columns until stable."""
    mask = mask.copy()
    while True:
        before = mask.sum()
        for i in range(mask.shape[0]):
            hits = np.flatnonzero(mask[i])
            if hits.size >= 2:
                mask[i, hits[0] : hits[-1] + 1] = True
        for j in range(mask.shape[1]):
            hits = np.flatnonzero(mask[:, j])
            if hits.size >= 2:
                mask[hits[0] : hits[-1] + 1, j] = True
        if mask.sum() == before:
            return mask


class TestCohortSegments:
    def test_single_cell_pulls_its_path(self):
        frame = frame66()
        domain = build_domain(cells_at(frame, [(2, 3)]), frame)
        included = {(c.i, c.j) for c in domain.trend_cells()}
        assert included == {(2, 3), (1, 2), (0, 1)}
        assert domain.first_slot == domain.last_slot == frame.cohort_slot(CellIndex(2, 3))

    def test_boundary_cell_is_its_own_segment(self):
        frame = frame66()
        domain = build_domain(cells_at(frame, [(0, 4)]), frame)
        assert {(c.i, c.j) for c in domain.trend_cells()} == {(0, 4)}

    def test_every_data_cell_path_included(self):
        frame = frame66()
        coords = [(3, 1), (4, 4), (1, 3), (5, 2)]
        domain = build_domain(cells_at(frame, coords), frame)
        for i, j in coords:
            for m in range(min(i, j) + 1):
                assert domain.mask[i - m, j - m]


class TestSelectionModes:
    def test_mode2_keeps_multi_point_cohorts(self):
        frame = frame66()
        # (1, 1) and (3, 3) share a cohort; (0, 3) is alone on its own
        domain = build_domain(cells_at(frame, [(1, 1), (3, 3), (0, 3)]), frame, mode=2)
        included = {(c.i, c.j) for c in domain.trend_cells()}
        assert (0, 3) not in included
        assert {(0, 0), (1, 1), (2, 2), (3, 3)} <= included

    def test_mode2_drops_single_point_cohorts(self):
        frame = frame66()
        with pytest.raises(DomainError, match="mode 2"):
            build_domain(cells_at(frame, [(1, 2), (2, 1)]), frame, mode=2)

    def test_mode2_subset_of_mode1(self):
        frame = frame66()
        rng = np.random.default_rng(5)
        coords = {(int(rng.integers(0, 6)), int(rng.integers(0, 6))) for _ in range(8)}
        cells = cells_at(frame, sorted(coords))
        d1 = build_domain(cells, frame, mode=1)
        d2 = build_domain(cells, frame, mode=2)
        assert np.all(d1.mask | ~d2.mask)  # d2 included implies d1 included

    def test_bad_mode(self):
        frame = frame66()
        with pytest.raises(ValueError):
            build_domain(cells_at(frame, [(1, 1)]), frame, mode=3)


class TestGapFilling:
    def test_parallel_segments_get_connected(self):
        frame = frame66()
        # two cohort segments of length 3 offset by one age
        coords = [(2, 2), (2, 3)]
        domain = build_domain(cells_at(frame, coords), frame)
        oracle_mask = np.zeros_like(domain.mask)
        for i, j in coords:
            for m in range(min(i, j) + 1):
                oracle_mask[i - m, j - m] = True
        assert np.array_equal(domain.mask, gap_fill_oracle(oracle_mask))
        # the gap fill must have closed each horizontal/vertical run
        for line in list(domain.mask) + list(domain.mask.T):
            hits = np.flatnonzero(line)
            if hits.size >= 2:
                assert np.all(line[hits[0] : hits[-1] + 1])

    def test_fixed_point_matches_oracle_on_random_inputs(self):
        frame = ObservationalFrame.from_integer_bounds(0, 7, 0, 7)
        rng = np.random.default_rng(11)
        for trial in range(25):
            coords = {
                (int(rng.integers(0, 8)), int(rng.integers(0, 8)))
                for _ in range(rng.integers(1, 10))
            }
            domain = build_domain(cells_at(frame, sorted(coords)), frame)
            seed_mask = np.zeros_like(domain.mask)
            for i, j in coords:
                for m in range(min(i, j) + 1):
                    seed_mask[i - m, j - m] = True
            assert np.array_equal(domain.mask, gap_fill_oracle(seed_mask))

    def test_monotone_and_idempotent(self):
        frame = frame66()
        coords = [(3, 1), (1, 3), (4, 4)]
        domain = build_domain(cells_at(frame, coords), frame)
        seed_mask = np.zeros_like(domain.mask)
        for i, j in coords:
            for m in range(min(i, j) + 1):
                seed_mask[i - m, j - m] = True
        assert np.all(domain.mask | ~seed_mask)  # only adds cells
        assert np.array_equal(gap_fill_oracle(domain.mask.copy()), domain.mask)


class TestSlotSegment:
    def test_segment_covers_included_cells(self):
        frame = frame66()
        rng = np.random.default_rng(2)
        coords = sorted({(int(rng.integers(0, 6)), int(rng.integers(0, 6))) for _ in range(6)})
        domain = build_domain(cells_at(frame, coords), frame)
        slots = [frame.cohort_slot(c) for c in domain.trend_cells()]
        assert domain.first_slot == min(slots)
        assert domain.last_slot == max(slots)
        for s in slots:
            assert domain.first_slot <= s <= domain.last_slot


class TestCompactMaps:
    def test_full_domain_identity(self):
        frame = ObservationalFrame.from_integer_bounds(0, 2, 0, 2)
        mask = np.ones((frame.year_cells, frame.age_cells), dtype=bool)
        domain = AnalysisDomain(frame, mask, 0, frame.cohort_count - 1)
        assert domain.compact_size == frame.param_count
        vec = np.arange(frame.param_count, dtype=float)
        assert np.array_equal(domain.scatter(domain.gather(vec)), vec)

    def test_excluded_marked_missing_never_zero(self, simple_domain):
        domain, frame = simple_domain
        compact = np.ones(domain.compact_size)
        full = domain.scatter(compact)
        assert np.isnan(full[frame.cohort_count + 1 * frame.age_cells + 0])  # cell (1, 0)
        participating = domain.compact_to_full()
        assert np.all(full[participating] == 1.0)
        missing = np.setdiff1d(np.arange(frame.param_count), participating)
        assert np.all(np.isnan(full[missing]))

    def test_compact_dimension(self, simple_domain):
        domain, _ = simple_domain
        assert domain.compact_size == domain.trend_count + (domain.last_slot - domain.first_slot + 1)

    def test_roundtrip_identity_on_participants(self, simple_domain):
        domain, _ = simple_domain
        rng = np.random.default_rng(0)
        compact = rng.normal(size=domain.compact_size)
        assert np.array_equal(domain.gather(domain.scatter(compact)), compact)
