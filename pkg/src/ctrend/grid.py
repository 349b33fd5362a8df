"""Grid geometry for the year-age plane.

The analysis lives on a rectangular observational frame in calendar time
``y`` (years, vertical axis by convention) and age ``a`` (years).  The frame
is tiled by unit parallelogram cells: cell ``(i, j)`` covers
``y in [i, i+1)`` and ``a - (y - i) in (j-1, j]``, so a birth cohort moves
along the diagonal ``(i+m, j+m)``.  Within a cell the trend ``u(i, j)`` is
constant and the mean level is linear in ``y`` with slope ``u(i, j)``.

All indices in this package are *relative*: cell ``(0, 0)`` is the cell
containing the frame's lower-left corner.  Conversion back to calendar
years and ages happens only when writing outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CellIndex",
    "ObservationalFrame",
    "ModelVector",
    "OutOfFrameError",
    "CohortPathError",
    "cohort_slot",
    "forward_levels",
    "predict_observation",
]


class OutOfFrameError(ValueError):
    """Raised when a (year, age) point falls outside the observational frame."""


class CohortPathError(ValueError):
    """Raised when a level is requested for a cell whose cohort path is not
    fully covered by the analysis domain."""


@dataclass(frozen=True, order=True)
class CellIndex:
    """Relative cell address: ``i`` indexes years, ``j`` indexes ages."""

    i: int
    j: int

    def __post_init__(self):
        if self.i < 0 or self.j < 0:
            raise ValueError(f"cell indices must be non-negative, got ({self.i}, {self.j})")


@dataclass(frozen=True)
class ObservationalFrame:
    """Rectangular (year, age) analysis window.

    Parameters
    ----------
    y_min, y_max : float
        Calendar-time bounds in years, ``y_min < y_max``.
    a_min, a_max : float
        Age bounds in years, ``a_min < a_max``.

    Notes
    -----
    The trend grid has ``year_cells x age_cells`` unit cells; the level grid
    extends one extra year row and one extra age column.  Each birth cohort
    is identified by the slot where its diagonal meets the lower-left
    boundary of the level grid; slots are numbered 0 (latest year, youngest
    age corner of the left edge) through ``cohort_count - 1``.
    """

    y_min: float
    y_max: float
    a_min: float
    a_max: float

    def __post_init__(self):
        if not (self.y_min < self.y_max):
            raise ValueError(f"need y_min < y_max, got [{self.y_min}, {self.y_max}]")
        if not (self.a_min < self.a_max):
            raise ValueError(f"need a_min < a_max, got [{self.a_min}, {self.a_max}]")

    # --- derived geometry -------------------------------------------------

    @property
    def year_base(self) -> int:
        """Absolute year index of relative cell row 0."""
        return math.floor(self.y_min)

    @property
    def age_base(self) -> int:
        """Absolute age index of relative cell column 0."""
        return math.ceil(self.a_min - (self.y_min - self.year_base))

    @property
    def year_cells(self) -> int:
        """Number of unit year rows in the trend grid (I + 1)."""
        return math.floor(self.y_max) - self.year_base + 1

    @property
    def age_cells(self) -> int:
        """Number of unit age columns in the trend grid (J + 1)."""
        j_top = math.ceil(self.a_max - (self.y_max - math.floor(self.y_max)))
        return j_top - self.age_base + 1

    @property
    def cohort_count(self) -> int:
        """Number of boundary slots: one per cohort diagonal crossing the
        lower-left boundary of the level grid."""
        return self.year_cells + self.age_cells + 1

    @property
    def trend_size(self) -> int:
        return self.year_cells * self.age_cells

    @property
    def param_count(self) -> int:
        """Length of the full parameter vector (boundary levels + trends)."""
        return self.cohort_count + self.trend_size

    # --- cell addressing ----------------------------------------------------

    def contains(self, y: float, a: float) -> bool:
        return self.y_min <= y <= self.y_max and self.a_min <= a <= self.a_max

    def cell_of(self, y: float, a: float) -> CellIndex:
        """Locate the unique cell containing the point ``(y, a)``.

        The cell is half-open: its left (earlier-year) and upper (older-age)
        boundaries are excluded, so a diagonal coordinate landing exactly on
        an integer belongs to the cell below it.  Points with ``y == y_max``
        or ``a == a_max`` are kept and assigned by the same rule.

        Raises
        ------
        OutOfFrameError
            If the point lies outside the frame; the message names the
            offending coordinate.
        """
        if not (self.y_min <= y <= self.y_max):
            raise OutOfFrameError(f"year {y!r} outside frame [{self.y_min}, {self.y_max}]")
        if not (self.a_min <= a <= self.a_max):
            raise OutOfFrameError(f"age {a!r} outside frame [{self.a_min}, {self.a_max}]")
        i_abs = math.floor(y)
        j_abs = math.ceil(a - (y - i_abs))
        return CellIndex(i_abs - self.year_base, j_abs - self.age_base)

    def cohort_slot(self, cell: CellIndex) -> int:
        """Boundary slot of the cohort whose diagonal passes through ``cell``.

        Constant along any diagonal ``(i+m, j+m)`` and injective across
        diagonals: ``slot = year_cells - i + j``.
        """
        return self.year_cells - cell.i + cell.j

    def slot_origin(self, slot: int) -> CellIndex:
        """Level-grid cell where the cohort with this slot enters the frame."""
        if not 0 <= slot < self.cohort_count:
            raise ValueError(f"slot {slot} outside [0, {self.cohort_count})")
        if slot <= self.year_cells:
            return CellIndex(self.year_cells - slot, 0)
        return CellIndex(0, slot - self.year_cells)

    # --- output labelling ---------------------------------------------------

    def year_of(self, i: int) -> int:
        """Calendar year labelling trend row ``i``."""
        return self.year_base + i

    def age_of(self, j: int) -> int:
        """Age (full years) labelling trend column ``j``."""
        return self.age_base + j

    @classmethod
    def from_integer_bounds(cls, y_min: int, y_max: int, a_min: int, a_max: int) -> "ObservationalFrame":
        return cls(float(y_min), float(y_max), float(a_min), float(a_max))


@dataclass(frozen=True)
class ModelVector:
    """Model parameters: cohort initial levels plus the trend field.

    ``initial_levels[k]`` is the mean level where cohort ``k`` enters the
    frame (slot ordering runs down the left edge from the latest year to the
    frame corner, then along the bottom edge towards older ages).
    ``trends[i, j]`` is the per-year rate of change of the cohort mean while
    it crosses cell ``(i, j)``.
    """

    frame: ObservationalFrame
    initial_levels: np.ndarray
    trends: np.ndarray

    def __post_init__(self):
        v0 = np.asarray(self.initial_levels, dtype=float)
        u = np.asarray(self.trends, dtype=float)
        if v0.shape != (self.frame.cohort_count,):
            raise ValueError(
                f"initial_levels must have length {self.frame.cohort_count}, got {v0.shape}"
            )
        if u.shape != (self.frame.year_cells, self.frame.age_cells):
            raise ValueError(
                f"trends must have shape ({self.frame.year_cells}, {self.frame.age_cells}), got {u.shape}"
            )
        object.__setattr__(self, "initial_levels", v0)
        object.__setattr__(self, "trends", u)

    def flat(self) -> np.ndarray:
        """Canonical parameter ordering: boundary slots, then trends row-major."""
        return np.concatenate([self.initial_levels, self.trends.ravel()])

    @classmethod
    def from_flat(cls, frame: ObservationalFrame, vec: np.ndarray) -> "ModelVector":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (frame.param_count,):
            raise ValueError(f"expected length {frame.param_count}, got {vec.shape}")
        nb = frame.cohort_count
        return cls(frame, vec[:nb], vec[nb:].reshape(frame.year_cells, frame.age_cells))


def cohort_slot(frame: ObservationalFrame, cell: CellIndex) -> int:
    return frame.cohort_slot(cell)


def _check_path(mask: np.ndarray, i: int, j: int) -> None:
    """Verify that every trend cell on the cohort path into (i, j) is included."""
    depth = min(i, j)
    for m in range(1, depth + 1):
        if not mask[i - m, j - m]:
            raise CohortPathError(
                f"cohort path for cell ({i}, {j}) leaves the analysis domain "
                f"at trend cell ({i - m}, {j - m})"
            )


def forward_levels(model: ModelVector, domain=None, cells=None) -> np.ndarray:
    """Evaluate mean levels on the level grid by accumulating trends.

    Along each cohort diagonal the level satisfies
    ``v(i+1, j+1) = v(i, j) + u(i, j)`` exactly, starting from the cohort's
    initial level at the boundary.

    Parameters
    ----------
    model : ModelVector
    domain : AnalysisDomain, optional
        When given, only cells whose full cohort path lies inside the domain
        (and whose slot is in the estimated segment) receive a value; other
        entries are NaN.
    cells : iterable of (i, j), optional
        Explicit level-grid cells to evaluate.  A requested cell with a
        broken path raises :class:`CohortPathError` naming the first missing
        trend cell.

    Returns
    -------
    numpy.ndarray
        Shape ``(year_cells + 1, age_cells + 1)``; entries not evaluated are
        NaN.
    """
    frame = model.frame
    ni, nj = frame.year_cells + 1, frame.age_cells + 1
    if domain is None:
        trend_mask = np.ones((frame.year_cells, frame.age_cells), dtype=bool)
        slot_ok = np.ones(frame.cohort_count, dtype=bool)
    else:
        trend_mask = domain.mask
        slot_ok = np.zeros(frame.cohort_count, dtype=bool)
        slot_ok[domain.first_slot : domain.last_slot + 1] = True

    levels = np.full((ni, nj), np.nan)
    if cells is not None:
        wanted = [(c.i, c.j) if isinstance(c, CellIndex) else (int(c[0]), int(c[1])) for c in cells]
        for i, j in wanted:
            if not (0 <= i < ni and 0 <= j < nj):
                raise ValueError(f"level cell ({i}, {j}) outside the level grid")
            slot = frame.year_cells - i + j
            if not slot_ok[slot]:
                raise CohortPathError(f"cohort slot {slot} for cell ({i}, {j}) is not estimated")
            _check_path(trend_mask, i, j)
            total = model.initial_levels[slot]
            for m in range(min(i, j), 0, -1):
                total += model.trends[i - m, j - m]
            levels[i, j] = total
        return levels

    # Whole grid: walk each cohort diagonal once, stopping at the first gap.
    for slot in range(frame.cohort_count):
        if not slot_ok[slot]:
            continue
        start = frame.slot_origin(slot)
        total = model.initial_levels[slot]
        i, j = start.i, start.j
        while i < ni and j < nj:
            levels[i, j] = total
            if i < frame.year_cells and j < frame.age_cells:
                if not trend_mask[i, j]:
                    break
                total += model.trends[i, j]
            i += 1
            j += 1
    return levels


def predict_observation(model: ModelVector, y: float, a: float, domain=None) -> float:
    """Model prediction for one observation at ``(y, a)``.

    Equals the cell's level plus the within-cell year offset times the
    cell's trend; constant in age within the cell.
    """
    frame = model.frame
    cell = frame.cell_of(y, a)
    if cell.i >= frame.year_cells or cell.j >= frame.age_cells:
        raise OutOfFrameError(
            f"point ({y!r}, {a!r}) maps to cell ({cell.i}, {cell.j}) outside the trend grid"
        )
    if domain is not None and not domain.mask[cell.i, cell.j]:
        raise CohortPathError(f"trend cell ({cell.i}, {cell.j}) is not in the analysis domain")
    mask = domain.mask if domain is not None else np.ones(
        (frame.year_cells, frame.age_cells), dtype=bool
    )
    _check_path(mask, cell.i, cell.j)
    slot = frame.cohort_slot(cell)
    level = float(model.initial_levels[slot])
    for m in range(min(cell.i, cell.j), 0, -1):
        level += float(model.trends[cell.i - m, cell.j - m])
    offset = y - (frame.year_base + cell.i)
    return level + offset * float(model.trends[cell.i, cell.j])
