"""Analysis-domain construction.

Only trend cells that are reachable from the data are estimated: every
populated cell pulls in its whole cohort path back to the frame boundary,
optionally cohorts carrying a single data cell are dropped, and internal
gaps in rows and columns are filled so that the included cells form
contiguous horizontal and vertical runs.  The boundary-level segment is the
slot range spanned by the included cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import CellIndex, ObservationalFrame

__all__ = ["AnalysisDomain", "build_domain", "DomainError"]


class DomainError(ValueError):
    """Raised when no estimable domain can be built from the data."""


@dataclass(frozen=True)
class AnalysisDomain:
    """Included trend cells plus the estimated boundary-level segment.

    ``mask[i, j]`` flags trend cells entering the analysis.  Boundary slots
    ``first_slot .. last_slot`` (inclusive) are estimated.  Compact parameter
    ordering: boundary slots first, then included trend cells row-major.
    """

    frame: ObservationalFrame
    mask: np.ndarray
    first_slot: int
    last_slot: int
    _trend_compact: np.ndarray = field(init=False, repr=False, compare=False)
    _trend_cells: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        expected = (self.frame.year_cells, self.frame.age_cells)
        if mask.shape != expected:
            raise ValueError(f"mask shape {mask.shape} != trend grid {expected}")
        if not mask.any():
            raise DomainError("empty analysis domain")
        if not 0 <= self.first_slot <= self.last_slot < self.frame.cohort_count:
            raise ValueError(
                f"bad slot segment [{self.first_slot}, {self.last_slot}] "
                f"for {self.frame.cohort_count} slots"
            )
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

        compact = np.full(mask.size, -1, dtype=np.int64)
        order = np.flatnonzero(mask.ravel())
        compact[order] = self.slot_count + np.arange(order.size)
        compact.setflags(write=False)
        object.__setattr__(self, "_trend_compact", compact)
        nj = self.frame.age_cells
        cells = tuple(CellIndex(int(f) // nj, int(f) % nj) for f in order)
        object.__setattr__(self, "_trend_cells", cells)
        for cell in cells:
            slot = self.frame.cohort_slot(cell)
            if not self.first_slot <= slot <= self.last_slot:
                raise ValueError(
                    f"included cell ({cell.i}, {cell.j}) has slot {slot} outside "
                    f"segment [{self.first_slot}, {self.last_slot}]"
                )

    # --- sizes ---------------------------------------------------------------

    @property
    def slot_count(self) -> int:
        return self.last_slot - self.first_slot + 1

    @property
    def trend_count(self) -> int:
        return len(self._trend_cells)

    @property
    def compact_size(self) -> int:
        return self.slot_count + self.trend_count

    # --- index maps ------------------------------------------------------------

    def trend_cells(self) -> tuple:
        """Included trend cells in row-major scan order."""
        return self._trend_cells

    def contains(self, cell: CellIndex) -> bool:
        return bool(self.mask[cell.i, cell.j])

    def trend_index(self, cell: CellIndex) -> int:
        """Compact index of a trend cell, or -1 when excluded."""
        return int(self._trend_compact[cell.i * self.frame.age_cells + cell.j])

    def trend_index_at(self, i: int, j: int) -> int:
        return int(self._trend_compact[i * self.frame.age_cells + j])

    def slot_index(self, slot: int) -> int:
        """Compact index of a boundary slot, or -1 when outside the segment."""
        if self.first_slot <= slot <= self.last_slot:
            return slot - self.first_slot
        return -1

    def compact_to_full(self) -> np.ndarray:
        """Full-vector position of each compact component."""
        full = np.empty(self.compact_size, dtype=np.int64)
        full[: self.slot_count] = np.arange(self.first_slot, self.last_slot + 1)
        trend_full = np.flatnonzero(self._trend_compact >= 0)
        full[self.slot_count :] = self.frame.cohort_count + trend_full
        return full

    def scatter(self, compact: np.ndarray, fill=np.nan) -> np.ndarray:
        """Embed a compact vector into the full parameter vector.

        Non-participating components are marked missing (``fill``), never
        zero; the round trip full -> compact -> full is the identity on
        participating components.
        """
        compact = np.asarray(compact, dtype=float)
        if compact.shape != (self.compact_size,):
            raise ValueError(f"expected compact length {self.compact_size}, got {compact.shape}")
        full = np.full(self.frame.param_count, fill)
        full[self.compact_to_full()] = compact
        return full

    def gather(self, full: np.ndarray) -> np.ndarray:
        full = np.asarray(full, dtype=float)
        if full.shape != (self.frame.param_count,):
            raise ValueError(f"expected full length {self.frame.param_count}, got {full.shape}")
        return full[self.compact_to_full()]

    def filter_cells(self, cells):
        """Split cell statistics into (inside domain, outside domain)."""
        inside, outside = [], []
        for stat in cells:
            (inside if self.contains(stat.cell) else outside).append(stat)
        return inside, outside

    def summary(self) -> dict:
        return {
            "trend_cells": self.trend_count,
            "slot_segment": [self.first_slot, self.last_slot],
            "compact_size": self.compact_size,
            "grid": [self.frame.year_cells, self.frame.age_cells],
        }


def _fill_runs(mask: np.ndarray) -> bool:
    """One pass of row-then-column gap filling; returns True when cells were added."""
    changed = False
    for axis_mask in (mask, mask.T):
        for line in axis_mask:
            hits = np.flatnonzero(line)
            if hits.size >= 2:
                lo, hi = hits[0], hits[-1]
                if hi - lo + 1 > hits.size:
                    line[lo : hi + 1] = True
                    changed = True
    return changed


def build_domain(cells, frame: ObservationalFrame, mode: int = 1) -> AnalysisDomain:
    """Build the analysis domain from populated cells.

    Parameters
    ----------
    cells : iterable of CellStat
        Kept cells (already thresholded by the ingest step).
    frame : ObservationalFrame
    mode : {1, 2}
        1 keeps every cohort segment; 2 keeps only cohorts carrying at
        least two data cells.

    Notes
    -----
    Gap filling alternates row fills and column fills until a fixed point:
    a single pass is not always confluent, the fixed point is
    order-independent, monotone (only adds cells) and idempotent.
    """
    if mode not in (1, 2):
        raise ValueError(f"domain mode must be 1 or 2, got {mode}")
    data_cells = sorted({stat.cell for stat in cells})
    if not data_cells:
        raise DomainError("no populated cells")
    for cell in data_cells:
        if cell.i >= frame.year_cells or cell.j >= frame.age_cells:
            raise ValueError(f"data cell ({cell.i}, {cell.j}) outside the trend grid")

    if mode == 2:
        per_cohort: dict[int, int] = {}
        for cell in data_cells:
            slot = frame.cohort_slot(cell)
            per_cohort[slot] = per_cohort.get(slot, 0) + 1
        data_cells = [c for c in data_cells if per_cohort[frame.cohort_slot(c)] >= 2]
        if not data_cells:
            raise DomainError(
                "domain mode 2 removed every cohort: no cohort carries two or more data cells"
            )

    mask = np.zeros((frame.year_cells, frame.age_cells), dtype=bool)
    for cell in data_cells:
        depth = min(cell.i, cell.j)
        for m in range(depth + 1):
            mask[cell.i - m, cell.j - m] = True

    while _fill_runs(mask):
        pass

    ii, jj = np.nonzero(mask)
    slots = frame.year_cells - ii + jj
    return AnalysisDomain(frame, mask, int(slots.min()), int(slots.max()))
