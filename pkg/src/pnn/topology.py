"""Synaptic effective ranges: range weights -> integer segment lengths -> positions.

Each input variable owns k_max synapses that tile its l_max-step window with
contiguous segments. The strength-rebalance rule keeps the segment lengths
summing to l_max exactly: positive range weights are normalised into
fractional lengths and then apportioned to integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

# Strict-positivity floor for range weights; the rebalance normalisation
# divides by their row sum.
R_FLOOR = 1e-6


@dataclass(frozen=True)
class LayoutParams:
    """Partition geometry shared by every variable."""

    m_max: int
    k_max: int
    l_max: int
    l_min: int

    def __post_init__(self) -> None:
        if self.m_max < 1:
            raise ValueError("m_max must be at least 1")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.l_max < self.k_max:
            raise ValueError("l_max must allow one step per synapse")
        if self.l_min < 1:
            raise ValueError("l_min must be at least 1")

    @property
    def slack(self) -> int:
        """Budget left over after granting every synapse l_min steps.

        May be negative (l_min * k_max > l_max); the sum constraint then
        pushes ranges below l_min by at most one step.
        """
        return self.l_max - self.k_max * self.l_min


@njit(cache=True)
def _continuous_ranges(r_row, slack, l_min):
    total = 0.0
    for k in range(r_row.shape[0]):
        total += r_row[k]
    out = np.empty(r_row.shape[0])
    for k in range(r_row.shape[0]):
        out[k] = r_row[k] / total * slack + l_min
    return out


@njit(cache=True)
def _range_derivative(r_row, slack):
    total = 0.0
    for k in range(r_row.shape[0]):
        total += r_row[k]
    out = np.empty(r_row.shape[0])
    for k in range(r_row.shape[0]):
        out[k] = (-r_row[k] / (total * total) + 1.0 / total) * slack
    return out


@njit(cache=True)
def _apportion(values, total):
    n = values.shape[0]
    out = np.empty(n, dtype=np.int64)
    fracs = np.empty(n)
    base_sum = 0
    for k in range(n):
        b = int(np.floor(values[k]))
        out[k] = b
        fracs[k] = values[k] - b
        base_sum += b
    leftover = total - base_sum
    # hand out the remainder by descending fractional part, lowest index first
    taken = np.zeros(n, dtype=np.bool_)
    for _ in range(leftover):
        pick = -1
        best = -1.0
        for k in range(n):
            if not taken[k] and fracs[k] > best:
                best = fracs[k]
                pick = k
        taken[pick] = True
        out[pick] += 1
    # guarantee one step per synapse, stealing from the most over-apportioned
    for k in range(n):
        while out[k] < 1:
            donor = -1
            excess = -np.inf
            for j in range(n):
                if out[j] > 1 and out[j] - values[j] > excess:
                    excess = out[j] - values[j]
                    donor = j
            out[donor] -= 1
            out[k] += 1
    return out


@njit(cache=True)
def _rebalance_rows(r, slack, l_min, l_max, n1, starts):
    m_max = r.shape[0]
    for m in range(m_max):
        cont = _continuous_ranges(r[m], slack, l_min)
        n1[m, :] = _apportion(cont, l_max)
        starts[m, 0] = 0
        for k in range(r.shape[1]):
            starts[m, k + 1] = starts[m, k] + n1[m, k]


@njit(cache=True)
def _segment_map(starts, l_max, out):
    for m in range(starts.shape[0]):
        k = 0
        for t in range(l_max):
            while starts[m, k + 1] <= t:
                k += 1
            out[m, t] = k


@dataclass(frozen=True)
class SynapticLayout:
    """Immutable partition of each variable's window into synapse segments.

    ``starts[m, k]`` is the 0-based first step of segment k; ``starts[m, 0]``
    is 0 and ``starts[m, k_max]`` is l_max, so ``n1[m, k]`` always sums to
    l_max along k.
    """

    params: LayoutParams
    r: np.ndarray
    n1: np.ndarray
    starts: np.ndarray

    @property
    def n3(self) -> np.ndarray:
        """1-based segment boundary positions, as reported in range tables."""
        return self.starts + 1

    def segment_map(self) -> np.ndarray:
        """Per-step segment index, shape (m_max, l_max)."""
        out = np.empty((self.params.m_max, self.params.l_max), dtype=np.int64)
        _segment_map(self.starts, self.params.l_max, out)
        return out


def _check_weight_rows(r: np.ndarray, params: LayoutParams) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (params.m_max, params.k_max):
        raise ValueError(
            f"range weights must have shape {(params.m_max, params.k_max)}, got {r.shape}"
        )
    if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
        raise ValueError("range weights must be finite and strictly positive")
    if np.any(r.sum(axis=1) <= 0.0):
        raise ValueError("degenerate range weights: row sum is zero")
    return r


def continuous_ranges(r_row: np.ndarray, params: LayoutParams) -> np.ndarray:
    """Fractional segment lengths for one variable's range-weight row.

    Normalises the weights to shares of the slack budget and adds l_min, so
    the results sum to l_max exactly (in exact arithmetic) and are invariant
    to rescaling the whole row.
    """
    r_row = np.asarray(r_row, dtype=np.float64)
    if r_row.ndim != 1 or r_row.shape[0] != params.k_max:
        raise ValueError(f"expected a row of {params.k_max} range weights")
    if not np.all(np.isfinite(r_row)) or np.any(r_row <= 0.0):
        raise ValueError("range weights must be finite and strictly positive")
    return _continuous_ranges(r_row, float(params.slack), float(params.l_min))


def range_derivative(r_row: np.ndarray, params: LayoutParams) -> np.ndarray:
    """d(fractional length)/d(own range weight) for each synapse in a row."""
    r_row = np.asarray(r_row, dtype=np.float64)
    if r_row.ndim != 1 or r_row.shape[0] != params.k_max:
        raise ValueError(f"expected a row of {params.k_max} range weights")
    if np.any(r_row <= 0.0):
        raise ValueError("range weights must be strictly positive")
    return _range_derivative(r_row, float(params.slack))


def apportion(values: np.ndarray, total: int) -> np.ndarray:
    """Round fractional lengths to integers summing exactly to ``total``.

    Largest-remainder apportionment: floor everything, then hand out the
    remaining steps by descending fractional part (ties to the lowest
    synapse index). Every output is >= 1 and within one step of its input.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] == 0:
        raise ValueError("expected a non-empty row of fractional lengths")
    if np.any(values <= 0.0):
        raise ValueError("fractional lengths must be positive")
    if total < values.shape[0]:
        raise ValueError("total too small to grant one step per synapse")
    if abs(values.sum() - total) > 1e-6:
        raise ValueError(
            f"fractional lengths sum to {values.sum()!r}, expected {total}"
        )
    return _apportion(values, total)


def rebalance(r: np.ndarray, params: LayoutParams) -> SynapticLayout:
    """Build the full integer layout from a (m_max, k_max) range-weight matrix."""
    r = _check_weight_rows(r, params)
    n1 = np.empty((params.m_max, params.k_max), dtype=np.int64)
    starts = np.empty((params.m_max, params.k_max + 1), dtype=np.int64)
    _rebalance_rows(r, float(params.slack), float(params.l_min), params.l_max, n1, starts)
    return SynapticLayout(params=params, r=r.copy(), n1=n1, starts=starts)


def layout_from_lengths(n1: np.ndarray, params: LayoutParams, r: np.ndarray | None = None) -> SynapticLayout:
    """Assemble a layout from explicit integer segment lengths.

    Bypasses the rebalance formula; used by brute-force layout enumeration.
    """
    n1 = np.asarray(n1, dtype=np.int64)
    if n1.shape != (params.m_max, params.k_max):
        raise ValueError(f"segment lengths must have shape {(params.m_max, params.k_max)}")
    if np.any(n1 < 1):
        raise ValueError("every segment needs at least one step")
    if np.any(n1.sum(axis=1) != params.l_max):
        raise ValueError("segment lengths must sum to l_max for every variable")
    starts = np.zeros((params.m_max, params.k_max + 1), dtype=np.int64)
    starts[:, 1:] = np.cumsum(n1, axis=1)
    if r is None:
        r = np.ones((params.m_max, params.k_max))
    return SynapticLayout(params=params, r=np.asarray(r, dtype=np.float64), n1=n1, starts=starts)


def segment_of(layout: SynapticLayout, m: int, t: int) -> int:
    """Index of the synapse whose segment covers 0-based step ``t``."""
    l_max = layout.params.l_max
    if not 0 <= t < l_max:
        raise ValueError(f"step {t} outside the window [0, {l_max})")
    return int(np.searchsorted(layout.starts[m], t, side="right")) - 1


def equal_split_layout(params: LayoutParams) -> SynapticLayout:
    """Constant-range layout: l_max apportioned evenly across synapses."""
    even = np.full(params.k_max, params.l_max / params.k_max)
    n1_row = _apportion(even, params.l_max)
    n1 = np.tile(n1_row, (params.m_max, 1))
    return layout_from_lengths(n1, params)
