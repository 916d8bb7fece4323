"""Forward propagation, loss, correlation and the shared-weight gradient.

The predictor outputs an increment per step: the pre-activation at step p is
the sum over variables of (segment weight at p) * input, squashed by tanh,
and the next output is that increment added to a base value. Two bases are
supported: "teacher" uses the true target at p, "free" feeds the model's own
previous output back in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .signals import Dataset
from .topology import SynapticLayout, segment_of

TEACHER = "teacher"
FREE = "free"

FORWARD_MODES = (TEACHER, FREE)


@dataclass(frozen=True)
class LearningSchedule:
    """Linearly decaying step size: rate(j) = base_rate * (j_max - j) / j_max."""

    j_max: int
    base_rate: float = 1e-3
    j: int = 0

    def __post_init__(self) -> None:
        if self.j_max < 0:
            raise ValueError("j_max must be non-negative")
        if not 0 <= self.j <= max(self.j_max, 0):
            raise ValueError("iteration index outside [0, j_max]")

    @property
    def rate(self) -> float:
        if self.j_max == 0:
            return 0.0
        return self.base_rate * (self.j_max - self.j) / self.j_max

    def at(self, j: int) -> "LearningSchedule":
        return LearningSchedule(j_max=self.j_max, base_rate=self.base_rate, j=j)


@dataclass
class NetworkState:
    """Trajectory of one forward pass: outputs h and tanh increments delta_f."""

    w: np.ndarray
    h: np.ndarray
    delta_f: np.ndarray
    mode: str = TEACHER


@njit(cache=True)
def _forward(x, f, w, seg_map, teacher, h, delta_f):
    length = f.shape[0]
    m_max = x.shape[0]
    h[0] = f[0]
    for p in range(length):
        s = 0.0
        for m in range(m_max):
            s += w[m, seg_map[m, p]] * x[m, p]
        delta_f[p] = math.tanh(s)
        if p + 1 < length:
            base = f[p] if teacher else h[p]
            h[p + 1] = base + delta_f[p]


@njit(cache=True)
def _mse(h, f):
    acc = 0.0
    for t in range(f.shape[0]):
        d = f[t] - h[t]
        acc += d * d
    return acc / f.shape[0]


@njit(cache=True)
def _pearson(a, b):
    n = a.shape[0]
    ma = 0.0
    mb = 0.0
    for i in range(n):
        ma += a[i]
        mb += b[i]
    ma /= n
    mb /= n
    sab = 0.0
    saa = 0.0
    sbb = 0.0
    for i in range(n):
        da = a[i] - ma
        db = b[i] - mb
        sab += da * db
        saa += da * da
        sbb += db * db
    if saa <= 0.0 or sbb <= 0.0:
        return np.nan
    return sab / math.sqrt(saa * sbb)


def init_weights(m_max: int, k_max: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh shared connection weights, uniform on [-0.5, 0.5)."""
    return rng.random((m_max, k_max)) - 0.5


def forward(dataset: Dataset, layout: SynapticLayout, w: np.ndarray, mode: str = TEACHER) -> NetworkState:
    """Run one forward pass over the window and return the trajectory."""
    if mode not in FORWARD_MODES:
        raise ValueError(f"unknown forward mode {mode!r}")
    params = layout.params
    if dataset.m_max != params.m_max or dataset.window_length != params.l_max:
        raise ValueError(
            f"dataset shape {(dataset.m_max, dataset.window_length)} does not match "
            f"layout {(params.m_max, params.l_max)}"
        )
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (params.m_max, params.k_max):
        raise ValueError(f"weights must have shape {(params.m_max, params.k_max)}")
    h = np.empty(params.l_max)
    delta_f = np.empty(params.l_max)
    _forward(dataset.inputs, dataset.targets, w, layout.segment_map(), mode == TEACHER, h, delta_f)
    return NetworkState(w=w.copy(), h=h, delta_f=delta_f, mode=mode)


def mse_loss(state: NetworkState, dataset: Dataset) -> float:
    """Mean squared error between targets and the trajectory outputs."""
    if state.h.shape != dataset.targets.shape:
        raise ValueError("state and dataset window lengths differ")
    return float(_mse(state.h, dataset.targets))


def pearson_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson product-moment correlation of two equal-length sequences.

    Raises on constant input; callers that tabulate correlations should
    catch this and report a missing value rather than zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("need two equal-length sequences of at least 2 points")
    out = float(_pearson(a, b))
    if math.isnan(out):
        raise ValueError("correlation undefined for constant input")
    return out


def grad_w(
    state: NetworkState,
    dataset: Dataset,
    layout: SynapticLayout,
    m: int,
    k: int,
    t: int,
    schedule: LearningSchedule,
) -> float:
    """Shared-weight gradient magnitude for the error at step ``t``.

    ``t`` is the 0-based target step; the increment that produced h[t] comes
    from step t-1, which must lie inside synapse k's segment. The returned
    value is positive in the loss-decreasing direction of w, so descent adds
    it to the weight.
    """
    l_max = layout.params.l_max
    if not 1 <= t < l_max:
        raise ValueError(f"target step {t} has no in-window predecessor")
    if segment_of(layout, m, t - 1) != k:
        raise ValueError(f"step {t - 1} is outside segment ({m}, {k})")
    err = dataset.targets[t] - state.h[t]
    df = state.delta_f[t - 1]
    return float(err * dataset.inputs[m, t - 1] * schedule.rate * (1.0 - df * df))
