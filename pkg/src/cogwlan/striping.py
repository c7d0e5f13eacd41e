"""DL-subframe slot occupancy and secondary transmission visits.

A DL subframe is a ``rows x cols_dl`` grid of slots, each column lasting
``nu`` symbols. The primary base station occupies ``min(u, M)`` slots; the
striping policy decides where. A secondary transmission that starts at
offset ``x`` (in symbols from the frame start) may only use columns that
begin at or after ``x``, takes every empty slot of a column at once, and
spends time in a column proportional to the share of its empty slots it
uses.

Offsets are in symbols and may be fractional (phase ticks); ``x = 0``
means the transmission resumes at the very start of a frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import EPS, FrameGeometry, Striping


@dataclass(frozen=True)
class SlotProfile:
    node: int
    f: np.ndarray | None   # empty slots per DL column; None for rectangular
    e_total: int


@dataclass(frozen=True)
class VisitOutcome:
    service_time: float
    completed: bool
    end_symbol: int | None = None      # symbol containing the completion instant
    end_offset: float | None = None    # completion instant, seconds from frame start
    remaining: int = 0                 # slots still to send when carried over


def column_profile(u: int, policy: Striping, geometry: FrameGeometry) -> np.ndarray:
    """Empty slots per DL column for ``u`` required primary slots."""
    rows, cols = geometry.rows, geometry.cols_dl
    used = min(max(u, 0), geometry.m)
    if policy is Striping.HORIZONTAL:
        full_rows, rem = divmod(used, cols)
        f = np.full(cols, rows - full_rows, dtype=np.int64)
        f[:rem] -= 1
    elif policy is Striping.VERTICAL:
        full_cols, rem = divmod(used, rows)
        f = np.full(cols, rows, dtype=np.int64)
        f[:full_cols] = 0
        if full_cols < cols:
            f[full_cols] = rows - rem
    else:
        raise ValueError("rectangular allocation has no column profile")
    return f


def profile(u: int, policy: Striping, geometry: FrameGeometry) -> SlotProfile:
    if not 0 <= u <= geometry.n:
        raise ValueError(f"buffer state {u} outside 0..{geometry.n}")
    e_total = max(geometry.m - u, 0)
    if policy is Striping.RECTANGULAR:
        return SlotProfile(u, None, e_total)
    return SlotProfile(u, column_profile(u, policy, geometry), e_total)


def first_column(x: float, geometry: FrameGeometry) -> int:
    """1-based index of the first column starting at or after offset ``x`` (symbols)."""
    return max(0, math.ceil(x / geometry.nu - EPS)) + 1


def residual_slots(u: int, x: float, policy: Striping, geometry: FrameGeometry) -> float:
    """Empty slots still usable in the current frame from offset ``x`` on."""
    if x >= geometry.k_sym_dl:
        return 0
    prof = profile(u, policy, geometry)
    if policy is Striping.RECTANGULAR:
        return prof.e_total * (geometry.k_sym_dl - x) / geometry.k_sym_dl
    c0 = first_column(x, geometry)
    return int(prof.f[c0 - 1:].sum())


def end_symbol_of(offset: float, geometry: FrameGeometry) -> int:
    """Symbol (1..K_sym,DL) containing a completion instant."""
    k = math.ceil(offset / geometry.t_sym - EPS)
    return min(max(k, 1), geometry.k_sym_dl)


def visit(u: int, x: float, s: int, policy: Striping, geometry: FrameGeometry) -> VisitOutcome:
    """One frame's worth of a transmission needing ``s`` slots from offset ``x``.

    The service time runs from ``x`` to the completion instant, or to the
    frame end when the frame cannot finish the packet.
    """
    if s <= 0:
        raise ValueError("visit with nothing left to send")
    if not 0 <= x <= geometry.k_sym:
        raise ValueError(f"offset {x} outside the frame")
    start = x * geometry.t_sym
    e_res = residual_slots(u, x, policy, geometry)
    if e_res >= s - EPS and e_res > 0:
        if policy is Striping.RECTANGULAR:
            e_total = max(geometry.m - u, 0)
            end = start + s / e_total * geometry.t_dl
        else:
            end = _striped_completion(column_profile(u, policy, geometry),
                                      first_column(x, geometry), s, geometry)
        return VisitOutcome(end - start, True, end_symbol_of(end, geometry), end)
    remaining = s - e_res
    if policy is Striping.RECTANGULAR:
        remaining = math.ceil(remaining - EPS)
    return VisitOutcome(geometry.t_frame - start, False, remaining=int(remaining))


def _striped_completion(f: np.ndarray, c0: int, s: int, geometry: FrameGeometry) -> float:
    cum = np.cumsum(f[c0 - 1:])
    j = int(np.searchsorted(cum, s))   # first column where the cumulative sum reaches s
    before = cum[j - 1] if j else 0
    col = c0 + j                        # 1-based completing column
    return ((col - 1) + (s - before) / f[col - 1]) * geometry.t_col


class VisitTable:
    """Vectorised visit outcomes for every buffer state.

    ``resume(s)`` describes a visit that starts at the frame start with
    ``s`` slots left; ``initial(x, s)`` a visit that starts at offset ``x``.
    Arrays are indexed by buffer state ``u = 0..N``. Completion instants
    are also reported as phase-tick indices (1-based).
    """

    def __init__(self, policy: Striping, geometry: FrameGeometry):
        self.policy = policy
        self.geometry = geometry
        g = geometry
        self.e_total = np.maximum(g.m - np.arange(g.n + 1), 0)
        if policy is not Striping.RECTANGULAR:
            distinct = np.array([column_profile(u, policy, g) for u in range(g.m + 1)])
            self.f = distinct[np.minimum(np.arange(g.n + 1), g.m)]
            # suffix[u, c] = empty slots in columns c+1..cols (0-based c)
            self.suffix = np.cumsum(self.f[:, ::-1], axis=1)[:, ::-1]
            self.suffix = np.concatenate([self.suffix, np.zeros((g.n + 1, 1), np.int64)], 1)

    def residual(self, x: float) -> np.ndarray:
        g = self.geometry
        if x >= g.k_sym_dl:
            return np.zeros(g.n + 1)
        if self.policy is Striping.RECTANGULAR:
            return self.e_total * (g.k_sym_dl - x) / g.k_sym_dl
        c0 = first_column(x, g)
        return self.suffix[:, c0 - 1].astype(float)

    def outcomes(self, x: float, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(completed, service_time, end_offset, remaining) for every state."""
        g = self.geometry
        e_res = self.residual(x)
        done = (e_res >= s - EPS) & (e_res > 0)
        start = x * g.t_sym
        service = np.full(g.n + 1, g.t_frame - start)
        end = np.full(g.n + 1, np.nan)
        remaining = np.where(done, 0, s - e_res)
        if self.policy is Striping.RECTANGULAR:
            remaining = np.ceil(remaining - EPS)
            with np.errstate(divide="ignore"):
                end[done] = start + s / self.e_total[done] * g.t_dl
        else:
            c0 = first_column(x, g)
            rows = np.flatnonzero(done)
            cum = np.cumsum(self.f[rows, c0 - 1:], axis=1)
            j = (cum < s).sum(axis=1)
            before = np.where(j > 0, cum[np.arange(len(rows)), np.maximum(j - 1, 0)], 0)
            f_last = self.f[rows, c0 - 1 + j]
            end[rows] = ((c0 - 1 + j) + (s - before) / f_last) * g.t_col
        service[done] = end[done] - start
        return done, service, end, remaining.astype(np.int64)


def tick_of(offset: np.ndarray | float, geometry: FrameGeometry) -> np.ndarray:
    """1-based phase tick containing each instant (ticks are (k-1, k] intervals)."""
    return np.maximum(np.ceil(np.asarray(offset) / geometry.t_tick - EPS), 1).astype(np.int64)


@lru_cache(maxsize=32)
def visit_table(policy: Striping, geometry: FrameGeometry) -> VisitTable:
    return VisitTable(policy, geometry)
