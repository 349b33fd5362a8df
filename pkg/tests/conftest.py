import numpy as np
import pytest

from ctrend.domain import AnalysisDomain, build_domain
from ctrend.grid import CellIndex, ObservationalFrame
from ctrend.ingest import CellStat


def make_cell(frame, i, j, x_mean, offset=0.0, n=1, a_off=0.0):
    """CellStat at relative cell (i, j) with a chosen within-cell year offset."""
    return CellStat(
        cell=CellIndex(i, j),
        x_mean=x_mean,
        y_mean=frame.year_base + i + offset,
        a_mean=frame.age_base + j + a_off,
        n=n,
    )


@pytest.fixture
def simple_domain():
    """Hand-built domain where trend cell (1, 0) is excluded, so the cohort
    path of level cell (2, 1) is broken at (1, 0)."""
    frame = ObservationalFrame.from_integer_bounds(0, 3, 0, 3)
    included = [(0, 0), (0, 1), (1, 1), (2, 1), (2, 2)]
    mask = np.zeros((frame.year_cells, frame.age_cells), dtype=bool)
    for i, j in included:
        mask[i, j] = True
    slots = [frame.cohort_slot(CellIndex(i, j)) for i, j in included]
    domain = AnalysisDomain(frame, mask, min(slots), max(slots))
    return domain, frame


@pytest.fixture
def full_grid():
    """Fully covered 4x4 trend grid: one data cell everywhere."""
    frame = ObservationalFrame.from_integer_bounds(0, 3, 0, 3)
    rng = np.random.default_rng(42)
    cells = [
        make_cell(frame, i, j, x_mean=float(rng.normal(25, 1)), offset=float(rng.uniform(0, 0.95)))
        for i in range(frame.year_cells)
        for j in range(frame.age_cells)
    ]
    domain = build_domain(cells, frame, mode=1)
    return frame, cells, domain
