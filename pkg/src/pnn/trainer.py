"""The full training loop: variant matrix, elitism, checkpoints, reports.

One run iterates j = 1 .. j_max. Each iteration, in order: the plasticity
recombination with disturbance P (when enabled), the per-variable
per-synapse per-timestep sweep that updates shared weights online and the
range weights at each segment's right boundary (with memory factor M), the
strength rebalance to fresh integer segments, loss bookkeeping and archive
classification, an elitism restore of the shared weights, and checkpoint
snapshots. Runs are bit-reproducible for a given config and seed.

Random draws come from one seeded stream per run, consumed in a fixed
order: plasticity-step draws (row-major per synapse, formula left-to-right,
disturbance last), random-range resampling, historic-set selection, then
the per-synapse memory gates in sweep order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import network, plasticity, signals, topology
from .network import FORWARD_MODES, FREE, TEACHER, _forward, _mse, _pearson
from .plasticity import (
    BAD_MEMORY_DECAY,
    GOOD_MEMORY_DECAY,
    MEMORY_MODES,
    PLASTICITY_MODES,
    _apply_memory_scalar,
    _memory_factor,
    _phagocytic_factor,
    _plasticity_best,
    _plasticity_quantum,
    _plasticity_three,
)
from .signals import Dataset, SignalSpec
from .topology import R_FLOOR, LayoutParams, SynapticLayout, _rebalance_rows, _segment_map

RANGE_MODES = ("constant", "random", "optimized")
SIMPLE_MODES = ("off", "no-correction", "corr-correction")

# iterations of unchanged integer ranges before a run is flagged
VANISHING_STRETCH = 10_000

DEFAULT_CHECKPOINTS = (20_000, 40_000, 60_000, 80_000)

_MEMORY_WEIGHT_TABLE = np.array(
    [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.6666, 0.3333, 0.0],
        [0.5, 0.25, 0.25],
    ]
)

# counter slots filled by the training kernel
_ACTIVITY, _REVERTED, _MEM_FALLBACK, _PLAST_SKIP, _CONSERVATION, _DIVERGED_AT, _MAX_FREEZE, _BEST_ITER = range(8)

# Both gradient channels default to the loss-decreasing direction; the
# literal printed signs are available through TrainingConfig.literal_signs.
_DESCENT_R = True


class DivergenceError(RuntimeError):
    """Raised when the loss stops being finite."""

    def __init__(self, iteration: int):
        super().__init__(f"loss diverged at iteration {iteration}")
        self.iteration = iteration


def default_signal(layout: LayoutParams, period: float = 22.0) -> SignalSpec:
    """Cosine spec just long enough for the layout's window and lags."""
    return SignalSpec(kind=signals.COSINE, period=period, length=layout.l_max + layout.m_max + 1)


@dataclass(frozen=True)
class TrainingConfig:
    """Everything one reproducible run needs."""

    layout: LayoutParams
    signal: SignalSpec
    j_max: int = 40_000
    base_rate: float = 1e-3
    seed: int = 0
    range_mode: str = "optimized"
    memory_mode: str = "none"
    plasticity_mode: str = "off"
    phagocytic: bool = False
    simple_mode: str = "off"
    forward_mode: str = TEACHER
    eval_mode: str = FREE
    literal_signs: bool = False
    elitism_ratio: float = 2.0
    memory_decay: float | None = None
    quantum_beta: float = 1.0
    quantum_window: int = 10
    archive_capacity: int = 64
    historic_sampling: bool = False
    rrpnn_resample_each: bool = True
    memory_draw_per_synapse: bool = True
    r_init_range: tuple[float, float] = (0.0, 1.0)
    checkpoints: tuple[int, ...] = DEFAULT_CHECKPOINTS
    scenario: str = ""

    def validate(self) -> None:
        if self.range_mode not in RANGE_MODES:
            raise ValueError(f"unknown range mode {self.range_mode!r}")
        if self.memory_mode not in MEMORY_MODES:
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")
        if self.plasticity_mode not in PLASTICITY_MODES:
            raise ValueError(f"unknown plasticity mode {self.plasticity_mode!r}")
        if self.simple_mode not in SIMPLE_MODES:
            raise ValueError(f"unknown simple mode {self.simple_mode!r}")
        if self.forward_mode not in FORWARD_MODES or self.eval_mode not in FORWARD_MODES:
            raise ValueError("forward/eval mode must be 'teacher' or 'free'")
        if self.simple_mode != "off":
            if self.memory_mode != "none":
                raise ValueError("simple mode replaces gradient updates; memory_mode must be 'none'")
            if self.range_mode != "optimized":
                raise ValueError("simple mode only applies to optimized ranges")
        if self.layout.k_max < 2:
            raise ValueError("training needs at least two synapses per variable")
        if self.j_max < 0:
            raise ValueError("j_max must be non-negative")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        if self.elitism_ratio < 1.0:
            raise ValueError("elitism_ratio below 1 would restore on every iteration")
        if self.memory_decay is not None and self.memory_decay <= 0:
            raise ValueError("memory_decay must be positive")
        if self.quantum_window < 1:
            raise ValueError("quantum_window must be at least 1")
        if self.archive_capacity < 1:
            raise ValueError("archive_capacity must be at least 1")
        if any(c < 1 for c in self.checkpoints):
            raise ValueError("checkpoints must be positive iteration numbers")
        lo, hi = self.r_init_range
        if not (0.0 <= lo < hi):
            raise ValueError("r_init_range must satisfy 0 <= low < high")
        self.signal.validate()
        needed = self.layout.l_max + self.layout.m_max + 1
        if self.signal.length < needed:
            raise ValueError(f"signal length {self.signal.length} < required {needed}")

    @property
    def effective_memory_decay(self) -> float:
        """Decay 5 pairs with positive-only memory, 7 with negative memory."""
        if self.memory_decay is not None:
            return self.memory_decay
        return GOOD_MEMORY_DECAY if self.memory_mode == "best" else BAD_MEMORY_DECAY


@dataclass
class RunReport:
    """Everything a run produced, ready for serialization."""

    config: TrainingConfig
    loss_history: np.ndarray
    corr_teacher_history: np.ndarray
    corr_free_history: np.ndarray
    checkpoints: tuple[int, ...]
    range_snapshots: np.ndarray
    corr_teacher_at_checkpoints: np.ndarray
    corr_free_at_checkpoints: np.ndarray
    corr_final: float
    corr_teacher_final: float
    corr_free_final: float
    mse_final: float
    best_loss: float
    best_iteration: int
    range_std: np.ndarray
    final_n1: np.ndarray
    final_r: np.ndarray
    final_w: np.ndarray
    activity: int
    reverted_count: int
    memory_fallbacks: int
    plasticity_skips: int
    conservation_violations: int
    max_frozen_stretch: int
    vanishing_gradients: bool

    @property
    def corr_history(self) -> np.ndarray:
        """Per-iteration correlation in the configured evaluation mode."""
        return self.corr_teacher_history if self.config.eval_mode == TEACHER else self.corr_free_history

    @property
    def corr_at_checkpoints(self) -> np.ndarray:
        return (
            self.corr_teacher_at_checkpoints
            if self.config.eval_mode == TEACHER
            else self.corr_free_at_checkpoints
        )


@njit(cache=True)
def _pearson_slice(a, b, lo, hi):
    n = hi - lo
    if n < 2:
        return np.nan
    ma = 0.0
    mb = 0.0
    for i in range(lo, hi):
        ma += a[i]
        mb += b[i]
    ma /= n
    mb /= n
    sab = 0.0
    saa = 0.0
    sbb = 0.0
    for i in range(lo, hi):
        da = a[i] - ma
        db = b[i] - mb
        sab += da * db
        saa += da * da
        sbb += db * db
    if saa <= 0.0 or sbb <= 0.0:
        return np.nan
    return sab / math.sqrt(saa * sbb)


@njit(cache=True)
def _ring_logical(ring, count, pos, i):
    # i = 0 is the oldest retained entry
    return ring[(pos - count + i) % ring.shape[0]]


@njit(cache=True)
def _sample_index(count, rng):
    # linear recency weighting: entry i+1 of count drawn w.p. (i+1)/total
    total = count * (count + 1) / 2.0
    ticket = rng.random() * total
    acc = 0.0
    for i in range(1, count + 1):
        acc += i
        if ticket < acc:
            return i - 1
    return count - 1


@njit(cache=True)
def _plasticity_pass(
    r,
    plasticity_mode,
    phagocytic,
    attract,
    has_best,
    has_worse,
    has_better,
    best_r,
    worse_r,
    better_r,
    worse_ring,
    worse_count,
    worse_pos,
    better_ring,
    better_count,
    better_pos,
    q_window,
    q_mw1,
    q_mw2,
    beta,
    worse_buf,
    better_buf,
    j,
    j_max,
    rng,
):
    """Recombination plus disturbance, in place. 0 = nothing to do, 1 = applied, 2 = skipped."""
    if plasticity_mode == 0:
        if not phagocytic:
            return 0
        for m in range(r.shape[0]):
            for k in range(r.shape[1]):
                r[m, k] = max(r[m, k] + _phagocytic_factor(j, j_max, rng), R_FLOOR)
        return 1
    if not has_best or (plasticity_mode >= 2 and not (has_worse and has_better)):
        return 2
    n_worse = min(q_window, worse_count)
    n_better = min(q_window, better_count)
    for m in range(r.shape[0]):
        for k in range(r.shape[1]):
            if plasticity_mode == 1:
                val = _plasticity_best(r[m, k], best_r[m, k], attract, rng)
            elif plasticity_mode == 2:
                val = _plasticity_three(r[m, k], best_r[m, k], worse_r[m, k], better_r[m, k], rng)
            else:
                for i in range(n_worse):
                    worse_buf[i] = _ring_logical(worse_ring, worse_count, worse_pos, worse_count - n_worse + i)[m, k]
                for i in range(n_better):
                    better_buf[i] = _ring_logical(better_ring, better_count, better_pos, better_count - n_better + i)[m, k]
                val = _plasticity_quantum(
                    r[m, k],
                    best_r[m, k],
                    worse_r[m, k],
                    better_r[m, k],
                    worse_buf[:n_worse],
                    better_buf[:n_better],
                    q_mw1,
                    q_mw2,
                    beta,
                    rng,
                )
            if phagocytic:
                val += _phagocytic_factor(j, j_max, rng)
            r[m, k] = max(val, R_FLOOR)
    return 1


@njit(cache=True)
def _train_loop(
    x,
    f,
    w,
    r,
    n1,
    starts,
    seg_map,
    range_mode,
    memory_mode,
    plasticity_mode,
    phagocytic,
    simple_mode,
    teacher_training,
    descent_w,
    descent_r,
    attract,
    l_min,
    l_max,
    k_max,
    m_max,
    j_max,
    base_rate,
    memory_decay,
    m_per_synapse,
    mw1,
    mw2,
    mw3,
    q_window,
    q_mw1,
    q_mw2,
    beta,
    elitism_ratio,
    rrpnn_each,
    r_lo,
    r_hi,
    capacity,
    historic_sampling,
    checkpoints,
    rng,
    loss_hist,
    corr_teacher_hist,
    corr_free_hist,
    cp_n1,
    cp_corr_teacher,
    cp_corr_free,
    counters,
    best_loss_out,
):
    slack = float(l_max - k_max * l_min)
    h = np.empty(l_max)
    df = np.empty(l_max)
    h_alt = np.empty(l_max)
    df_alt = np.empty(l_max)
    g_eff = np.zeros((m_max, k_max))

    best_loss = np.inf
    has_best = False
    best_w = np.zeros((m_max, k_max))
    best_r = np.zeros((m_max, k_max))
    best_g = np.zeros((m_max, k_max))
    has_worse = False
    worse_r = np.zeros((m_max, k_max))
    worse_g = np.zeros((m_max, k_max))
    has_better = False
    better_r = np.zeros((m_max, k_max))
    better_g = np.zeros((m_max, k_max))
    worse_ring = np.zeros((capacity, m_max, k_max))
    worse_g_ring = np.zeros((capacity, m_max, k_max))
    worse_count = 0
    worse_pos = 0
    better_ring = np.zeros((capacity, m_max, k_max))
    better_g_ring = np.zeros((capacity, m_max, k_max))
    better_count = 0
    better_pos = 0
    sel_worse_g = np.zeros((m_max, k_max))
    sel_better_g = np.zeros((m_max, k_max))
    worse_buf = np.empty(capacity)
    better_buf = np.empty(capacity)

    prev_loss = np.nan
    shared_m = 0.0
    prev_n1 = n1.copy()
    prev_seg_corr = np.full((m_max, k_max), np.nan)
    r_before = np.empty((m_max, k_max))
    freeze = 0
    cp_ptr = 0

    # trajectory of the initial weights; free-mode sweeps read it
    _forward(x, f, w, seg_map, teacher_training, h, df)

    for j in range(1, j_max + 1):
        eta = base_rate * (j_max - j) / j_max
        optimizing = range_mode == 2 and simple_mode == 0

        # recombination of archived range weights, plus disturbance
        if range_mode == 2 and simple_mode == 0:
            outcome = _plasticity_pass(
                r, plasticity_mode, phagocytic, attract,
                has_best, has_worse, has_better,
                best_r, worse_r, better_r,
                worse_ring, worse_count, worse_pos,
                better_ring, better_count, better_pos,
                q_window, q_mw1, q_mw2, beta,
                worse_buf, better_buf, j, j_max, rng,
            )
            if outcome == 2:
                counters[_PLAST_SKIP] += 1
        elif simple_mode != 0:
            r_before[:, :] = r
            outcome = _plasticity_pass(
                r, plasticity_mode, phagocytic, attract,
                has_best, has_worse, has_better,
                best_r, worse_r, better_r,
                worse_ring, worse_count, worse_pos,
                better_ring, better_count, better_pos,
                q_window, q_mw1, q_mw2, beta,
                worse_buf, better_buf, j, j_max, rng,
            )
            if outcome == 2:
                counters[_PLAST_SKIP] += 1
            elif outcome == 1:
                _rebalance_rows(r, slack, float(l_min), l_max, n1, starts)
                _segment_map(starts, l_max, seg_map)
                if simple_mode == 2:
                    # cancel per-synapse updates whose windowed correlation got worse
                    _forward(x, f, w, seg_map, teacher_training, h_alt, df_alt)
                    cancelled = False
                    for m in range(m_max):
                        for k in range(k_max):
                            c_new = _pearson_slice(f, h_alt, starts[m, k], starts[m, k + 1])
                            c_old = prev_seg_corr[m, k]
                            if math.isnan(c_new) or (not math.isnan(c_old) and c_new < c_old):
                                r[m, k] = r_before[m, k]
                                cancelled = True
                    if cancelled:
                        _rebalance_rows(r, slack, float(l_min), l_max, n1, starts)
                        _segment_map(starts, l_max, seg_map)

        # random-range variant draws a fresh row every iteration
        if range_mode == 1 and (rrpnn_each or j == 1):
            for m in range(m_max):
                for k in range(k_max):
                    r[m, k] = max(r_lo + rng.random() * (r_hi - r_lo), R_FLOOR)

        # choose the mnemonic gradients consumed by this sweep
        memory_ready = False
        if optimizing and memory_mode != 0:
            memory_ready = has_best
            if memory_mode >= 2:
                memory_ready = memory_ready and has_worse
            if memory_mode >= 3:
                memory_ready = memory_ready and has_better
            if memory_ready:
                sel_worse_g[:, :] = worse_g
                sel_better_g[:, :] = better_g
                if historic_sampling:
                    if memory_mode >= 2 and worse_count > 0:
                        idx = _sample_index(worse_count, rng)
                        sel_worse_g[:, :] = _ring_logical(worse_g_ring, worse_count, worse_pos, idx)
                    if memory_mode >= 3 and better_count > 0:
                        idx = _sample_index(better_count, rng)
                        sel_better_g[:, :] = _ring_logical(better_g_ring, better_count, better_pos, idx)
                if not m_per_synapse:
                    shared_m = _memory_factor(j, j_max, memory_decay, rng)
            else:
                counters[_MEM_FALLBACK] += 1

        # backprop sweep: shared weights online per step, range weights at
        # each segment's right boundary
        for m in range(m_max):
            for k in range(k_max):
                seg_lo = starts[m, k]
                seg_hi = starts[m, k + 1]
                stop = seg_hi if seg_hi < l_max else l_max - 1
                for p in range(seg_lo, stop):
                    t = p + 1
                    if teacher_training:
                        s = 0.0
                        for mm in range(m_max):
                            s += w[mm, seg_map[mm, p]] * x[mm, p]
                        dfp = math.tanh(s)
                        ht = f[p] + dfp
                    else:
                        dfp = df[p]
                        ht = h[t]
                    gw = (f[t] - ht) * x[m, p] * eta * (1.0 - dfp * dfp)
                    if descent_w:
                        w[m, k] += gw
                    else:
                        w[m, k] -= gw
                if optimizing:
                    if k < k_max - 1:
                        b = starts[m, k + 1]
                        if teacher_training:
                            s = 0.0
                            for mm in range(m_max):
                                s += w[mm, seg_map[mm, b - 1]] * x[mm, b - 1]
                            dfb = math.tanh(s)
                            hb = f[b - 1] + dfb
                        else:
                            dfb = df[b - 1]
                            hb = h[b]
                        row_sum = 0.0
                        for kk in range(k_max):
                            row_sum += r[m, kk]
                        chain = (-r[m, k] / (row_sum * row_sum) + 1.0 / row_sum) * slack
                        g = (f[b] - hb) * (w[m, k] - w[m, k + 1]) * x[m, b] * eta * (1.0 - dfb * dfb) * chain
                    else:
                        g = 0.0
                    if descent_r:
                        g = -g
                    g_eff[m, k] = g
                    if memory_mode == 0 or not memory_ready:
                        r[m, k] = max(r[m, k] - g, R_FLOOR)
                    else:
                        m_fac = _memory_factor(j, j_max, memory_decay, rng) if m_per_synapse else shared_m
                        r[m, k] = _apply_memory_scalar(
                            r[m, k], g, best_g[m, k], sel_worse_g[m, k], sel_better_g[m, k],
                            mw1, mw2, mw3, m_fac, R_FLOOR,
                        )

        # strength rebalance back to integer segments
        if range_mode != 0:
            _rebalance_rows(r, slack, float(l_min), l_max, n1, starts)
            _segment_map(starts, l_max, seg_map)

        changed = False
        for m in range(m_max):
            row_total = 0
            for k in range(k_max):
                row_total += n1[m, k]
                if n1[m, k] != prev_n1[m, k]:
                    changed = True
                prev_n1[m, k] = n1[m, k]
            if row_total != l_max:
                counters[_CONSERVATION] += 1
        if changed:
            counters[_ACTIVITY] += 1
            freeze = 0
        else:
            freeze += 1
            if freeze > counters[_MAX_FREEZE]:
                counters[_MAX_FREEZE] = freeze

        # fresh trajectories: training mode drives the loss, both modes are tracked
        _forward(x, f, w, seg_map, True, h_alt, df_alt)
        corr_teacher_hist[j - 1] = _pearson(h_alt, f)
        if teacher_training:
            h[:] = h_alt
            df[:] = df_alt
            _forward(x, f, w, seg_map, False, h_alt, df_alt)
            corr_free_hist[j - 1] = _pearson(h_alt, f)
        else:
            _forward(x, f, w, seg_map, False, h, df)
            corr_free_hist[j - 1] = _pearson(h, f)
        loss = _mse(h, f)
        loss_hist[j - 1] = loss
        if not math.isfinite(loss):
            counters[_DIVERGED_AT] = j
            return 1

        # archive classification by loss delta, then the global best
        if not math.isnan(prev_loss):
            if loss > prev_loss:
                has_worse = True
                worse_r[:, :] = r
                worse_g[:, :] = g_eff
                worse_ring[worse_pos, :, :] = r
                worse_g_ring[worse_pos, :, :] = g_eff
                worse_pos = (worse_pos + 1) % capacity
                worse_count = min(worse_count + 1, capacity)
            elif loss < prev_loss:
                has_better = True
                better_r[:, :] = r
                better_g[:, :] = g_eff
                better_ring[better_pos, :, :] = r
                better_g_ring[better_pos, :, :] = g_eff
                better_pos = (better_pos + 1) % capacity
                better_count = min(better_count + 1, capacity)
        prev_loss = loss
        if loss < best_loss:
            best_loss = loss
            has_best = True
            best_w[:, :] = w
            best_r[:, :] = r
            best_g[:, :] = g_eff
            counters[_BEST_ITER] = j

        # elitism: recall the best shared weights when the loss blows up
        if has_best and loss > elitism_ratio * best_loss:
            w[:, :] = best_w
            counters[_REVERTED] += 1

        if simple_mode == 2:
            # one-step trajectory for the next generation's per-segment check:
            # after the block above it sits in h for teacher training and in
            # h_alt otherwise
            seg_h = h if teacher_training else h_alt
            for m in range(m_max):
                for k in range(k_max):
                    prev_seg_corr[m, k] = _pearson_slice(f, seg_h, starts[m, k], starts[m, k + 1])

        if cp_ptr < checkpoints.shape[0] and j == checkpoints[cp_ptr]:
            cp_n1[cp_ptr, :, :] = n1
            cp_corr_teacher[cp_ptr] = corr_teacher_hist[j - 1]
            cp_corr_free[cp_ptr] = corr_free_hist[j - 1]
            cp_ptr += 1

    best_loss_out[0] = best_loss
    return 0


def _initial_layout(config: TrainingConfig, rng: np.random.Generator) -> tuple[np.ndarray, SynapticLayout]:
    params = config.layout
    if config.range_mode == "constant":
        layout = topology.equal_split_layout(params)
        return layout.r.copy(), layout
    lo, hi = config.r_init_range
    r = np.maximum(lo + rng.random((params.m_max, params.k_max)) * (hi - lo), R_FLOOR)
    return r, topology.rebalance(r, params)


def train(config: TrainingConfig, dataset: Dataset | None = None) -> RunReport:
    """Run one training configuration end to end.

    The dataset defaults to windows of the configured signal. Raises
    DivergenceError if the loss stops being finite, and ValueError for
    inconsistent configurations.
    """
    config.validate()
    params = config.layout
    if dataset is None:
        dataset = signals.dataset_from_spec(config.signal, params.m_max, params.l_max)
    if dataset.m_max != params.m_max or dataset.window_length != params.l_max:
        raise ValueError(
            f"dataset shape {(dataset.m_max, dataset.window_length)} does not match "
            f"layout {(params.m_max, params.l_max)}"
        )

    rng = np.random.default_rng(config.seed)
    w = network.init_weights(params.m_max, params.k_max, rng)
    r, layout = _initial_layout(config, rng)
    n1 = layout.n1.copy()
    starts = layout.starts.copy()
    seg_map = layout.segment_map()

    reachable = tuple(sorted(c for c in set(config.checkpoints) if c <= config.j_max))
    cps_arr = np.asarray(reachable, dtype=np.int64)
    loss_hist = np.full(config.j_max, np.nan)
    corr_teacher_hist = np.full(config.j_max, np.nan)
    corr_free_hist = np.full(config.j_max, np.nan)
    cp_n1 = np.zeros((len(reachable), params.m_max, params.k_max), dtype=np.int64)
    cp_corr_teacher = np.full(len(reachable), np.nan)
    cp_corr_free = np.full(len(reachable), np.nan)
    counters = np.zeros(8, dtype=np.int64)
    best_loss_out = np.array([np.nan])

    mem_code = MEMORY_MODES.index(config.memory_mode)
    mw1, mw2, mw3 = _MEMORY_WEIGHT_TABLE[mem_code]

    if config.j_max > 0:
        rc = _train_loop(
            dataset.inputs,
            dataset.targets,
            w,
            r,
            n1,
            starts,
            seg_map,
            RANGE_MODES.index(config.range_mode),
            mem_code,
            PLASTICITY_MODES.index(config.plasticity_mode),
            config.phagocytic,
            SIMPLE_MODES.index(config.simple_mode),
            config.forward_mode == TEACHER,
            not config.literal_signs,
            _DESCENT_R,
            not config.literal_signs,
            params.l_min,
            params.l_max,
            params.k_max,
            params.m_max,
            config.j_max,
            config.base_rate,
            config.effective_memory_decay,
            config.memory_draw_per_synapse,
            mw1,
            mw2,
            mw3,
            config.quantum_window,
            1.0,
            1.0,
            config.quantum_beta,
            config.elitism_ratio,
            config.rrpnn_resample_each,
            float(config.r_init_range[0]),
            float(config.r_init_range[1]),
            config.archive_capacity,
            config.historic_sampling,
            cps_arr,
            rng,
            loss_hist,
            corr_teacher_hist,
            corr_free_hist,
            cp_n1,
            cp_corr_teacher,
            cp_corr_free,
            counters,
            best_loss_out,
        )
        if rc == 1:
            raise DivergenceError(int(counters[_DIVERGED_AT]))

    final_layout = topology.layout_from_lengths(n1, params, r)
    state_teacher = network.forward(dataset, final_layout, w, TEACHER)
    state_free = network.forward(dataset, final_layout, w, FREE)
    corr_teacher_final = float(_pearson(state_teacher.h, dataset.targets))
    corr_free_final = float(_pearson(state_free.h, dataset.targets))
    train_state = state_teacher if config.forward_mode == TEACHER else state_free
    mse_final = float(_mse(train_state.h, dataset.targets))
    corr_final = corr_teacher_final if config.eval_mode == TEACHER else corr_free_final

    return RunReport(
        config=config,
        loss_history=loss_hist,
        corr_teacher_history=corr_teacher_hist,
        corr_free_history=corr_free_hist,
        checkpoints=reachable,
        range_snapshots=cp_n1,
        corr_teacher_at_checkpoints=cp_corr_teacher,
        corr_free_at_checkpoints=cp_corr_free,
        corr_final=corr_final,
        corr_teacher_final=corr_teacher_final,
        corr_free_final=corr_free_final,
        mse_final=mse_final,
        best_loss=float(best_loss_out[0]),
        best_iteration=int(counters[_BEST_ITER]),
        range_std=n1.std(axis=1, ddof=1),
        final_n1=n1,
        final_r=r,
        final_w=w,
        activity=int(counters[_ACTIVITY]),
        reverted_count=int(counters[_REVERTED]),
        memory_fallbacks=int(counters[_MEM_FALLBACK]),
        plasticity_skips=int(counters[_PLAST_SKIP]),
        conservation_violations=int(counters[_CONSERVATION]),
        max_frozen_stretch=int(counters[_MAX_FREEZE]),
        vanishing_gradients=bool(counters[_MAX_FREEZE] >= VANISHING_STRETCH),
    )
