"""Assembly of the stacked least-squares system.

Three row blocks over the compact parameter vector (boundary slots first,
then included trend cells in scan order):

* data rows: one per aggregated cell, encoding the cell mean as its
  cohort's initial level, plus one unit coefficient per prior trend cell on
  the cohort path, plus the within-cell year offset on the current cell;
* trend-curvature rows: second differences (1, -2, 1) over horizontal and
  vertical trend triples fully inside the domain;
* level-curvature rows: second differences over consecutive boundary slots.

Weighting the curvature blocks by the square roots of the smoothing
weights turns the penalized objective into one ordinary least-squares
problem on the stacked matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .domain import AnalysisDomain

__all__ = [
    "DesignSystem",
    "StackedSystem",
    "AssemblyError",
    "data_rows",
    "trend_curvature_rows",
    "level_curvature_rows",
    "stack",
    "objective_parts",
]


class AssemblyError(ValueError):
    """Raised when the data cannot be encoded over the given domain."""


def data_rows(cells, domain: AnalysisDomain):
    """Build the data block and its target vector.

    Row order follows cell scan order.  The coefficient on the current
    trend cell is the within-cell offset of the mean exam date; it is kept
    as a structural entry even when the offset is exactly zero, so the
    sparsity pattern depends only on geometry.

    Returns
    -------
    (scipy.sparse.csr_matrix, numpy.ndarray)
    """
    frame = domain.frame
    ordered = sorted(cells, key=lambda s: s.cell)
    rows, cols, vals = [], [], []
    target = np.empty(len(ordered))
    for row, stat in enumerate(ordered):
        cell = stat.cell
        if not domain.contains(cell):
            raise AssemblyError(f"data cell ({cell.i}, {cell.j}) is outside the analysis domain")
        slot = frame.cohort_slot(cell)
        slot_col = domain.slot_index(slot)
        if slot_col < 0:
            raise AssemblyError(
                f"cohort slot {slot} of data cell ({cell.i}, {cell.j}) is outside "
                f"the estimated segment [{domain.first_slot}, {domain.last_slot}]"
            )
        rows.append(row)
        cols.append(slot_col)
        vals.append(1.0)
        depth = min(cell.i, cell.j)
        for m in range(depth, 0, -1):
            prior = domain.trend_index_at(cell.i - m, cell.j - m)
            if prior < 0:
                raise AssemblyError(
                    f"cohort path of data cell ({cell.i}, {cell.j}) leaves the domain "
                    f"at trend cell ({cell.i - m}, {cell.j - m})"
                )
            rows.append(row)
            cols.append(prior)
            vals.append(1.0)
        offset = stat.offset(frame)
        if not 0.0 <= offset < 1.0:
            raise AssemblyError(
                f"cell ({cell.i}, {cell.j}) mean exam date offset {offset!r} outside [0, 1)"
            )
        rows.append(row)
        cols.append(domain.trend_index(cell))
        vals.append(offset)
        target[row] = stat.x_mean
    matrix = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(len(ordered), domain.compact_size)
    ).tocsr()
    return matrix, target


def trend_curvature_rows(domain: AnalysisDomain) -> sparse.csr_matrix:
    """Second-difference rows over trend triples.

    Horizontal triples come first (row-major scan), then vertical; a row is
    emitted only when all three cells belong to the domain.  Empty matrices
    are legitimate for tiny domains.
    """
    mask = domain.mask
    ni, nj = mask.shape
    rows, cols, vals = [], [], []
    row = 0

    def emit(cells):
        nonlocal row
        for coeff, (i, j) in zip((1.0, -2.0, 1.0), cells):
            rows.append(row)
            cols.append(domain.trend_index_at(i, j))
            vals.append(coeff)
        row += 1

    for i in range(ni):
        for j in range(1, nj - 1):
            if mask[i, j - 1] and mask[i, j] and mask[i, j + 1]:
                emit([(i, j - 1), (i, j), (i, j + 1)])
    for i in range(1, ni - 1):
        for j in range(nj):
            if mask[i - 1, j] and mask[i, j] and mask[i + 1, j]:
                emit([(i - 1, j), (i, j), (i + 1, j)])
    return sparse.coo_matrix(
        (vals, (rows, cols)), shape=(row, domain.compact_size)
    ).tocsr()


def level_curvature_rows(domain: AnalysisDomain) -> sparse.csr_matrix:
    """Second-difference rows over interior boundary slots.

    A segment shorter than three slots has no interior and yields an empty
    block (with a warning, since the level smoothness then goes unmeasured).
    """
    n = domain.slot_count
    if n < 3:
        warnings.warn(
            f"boundary-level segment has only {n} slot(s); no curvature rows emitted",
            stacklevel=2,
        )
    rows, cols, vals = [], [], []
    for row, k in enumerate(range(1, n - 1)):
        rows.extend((row, row, row))
        cols.extend((k - 1, k, k + 1))
        vals.extend((1.0, -2.0, 1.0))
    return sparse.coo_matrix(
        (vals, (rows, cols)), shape=(max(n - 2, 0), domain.compact_size)
    ).tocsr()


@dataclass
class DesignSystem:
    """The three assembled blocks over one analysis domain."""

    domain: AnalysisDomain
    cells: list  # CellStat in row order of the data block
    data_matrix: sparse.csr_matrix
    target: np.ndarray
    trend_penalty: sparse.csr_matrix
    level_penalty: sparse.csr_matrix
    data_row_weights: np.ndarray

    @classmethod
    def build(cls, cells, domain: AnalysisDomain, weight_by_count: bool = False) -> "DesignSystem":
        """Assemble all blocks.

        ``weight_by_count`` weights each data row by its cell's record count
        instead of treating aggregated cells as unit-weight observations
        (the default, which matches the aggregated formulation).
        """
        ordered = sorted(cells, key=lambda s: s.cell)
        matrix, target = data_rows(ordered, domain)
        weights = (
            np.array([float(s.n) for s in ordered])
            if weight_by_count
            else np.ones(len(ordered))
        )
        return cls(
            domain=domain,
            cells=ordered,
            data_matrix=matrix,
            target=target,
            trend_penalty=trend_curvature_rows(domain),
            level_penalty=level_curvature_rows(domain),
            data_row_weights=weights,
        )

    @property
    def n_data(self) -> int:
        return self.data_matrix.shape[0]

    @property
    def n_trend(self) -> int:
        return self.trend_penalty.shape[0]

    @property
    def n_level(self) -> int:
        return self.level_penalty.shape[0]

    @property
    def n_total(self) -> int:
        return self.n_data + self.n_trend + self.n_level

    @property
    def param_count(self) -> int:
        return self.domain.compact_size


@dataclass
class StackedSystem:
    """Weighted stacked system: rows [data; trend curvature; level curvature]."""

    design: DesignSystem
    matrix: sparse.csr_matrix
    target: np.ndarray
    row_weights: np.ndarray
    trend_weight: float
    level_weight: float

    @property
    def n_total(self) -> int:
        return self.matrix.shape[0]

    @property
    def param_count(self) -> int:
        return self.matrix.shape[1]

    def weighted_rss(self, z: np.ndarray) -> float:
        resid = self.matrix @ z - self.target
        return float(np.dot(self.row_weights * resid, resid))


def stack(system: DesignSystem, trend_weight: float, level_weight: float) -> StackedSystem:
    """Stack the blocks with nonnegative smoothing weights on the penalties."""
    if trend_weight < 0 or level_weight < 0:
        raise ValueError(
            f"smoothing weights must be nonnegative, got ({trend_weight}, {level_weight})"
        )
    matrix = sparse.vstack(
        [system.data_matrix, system.trend_penalty, system.level_penalty], format="csr"
    )
    target = np.concatenate(
        [system.target, np.zeros(system.n_trend), np.zeros(system.n_level)]
    )
    row_weights = np.concatenate(
        [
            system.data_row_weights,
            np.full(system.n_trend, trend_weight),
            np.full(system.n_level, level_weight),
        ]
    )
    return StackedSystem(system, matrix, target, row_weights, trend_weight, level_weight)


def objective_parts(system: DesignSystem, z: np.ndarray) -> tuple[float, float, float]:
    """Evaluate the three quadratic components at ``z``.

    The total objective for weights (w1, w2) is
    ``parts[0] + w1 * parts[1] + w2 * parts[2]``.
    """
    z = np.asarray(z, dtype=float)
    resid = system.data_matrix @ z - system.target
    s0 = float(np.dot(system.data_row_weights * resid, resid))
    t1 = system.trend_penalty @ z
    s1 = float(np.dot(t1, t1))
    t2 = system.level_penalty @ z
    s2 = float(np.dot(t2, t2))
    return s0, s1, s2
