"""Range-weight updates: competitive gradients, memory mixing and disturbance.

Three cooperating mechanisms move the range weights:

* a boundary gradient (``grad_r``) that reallocates window budget between
  neighbouring synapses,
* a memory-persistence factor M that blends archived best/worse/better
  gradients into the current update, fading as training matures,
* a plasticity step that recombines archived range weights directly, plus a
  zero-symmetric phagocytic disturbance P with a linearly shrinking envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .network import LearningSchedule, NetworkState
from .signals import Dataset
from .topology import R_FLOOR, SynapticLayout, range_derivative

MEMORY_MODES = ("none", "best", "best-worse", "best-worse-better")
PLASTICITY_MODES = ("off", "best", "three-memory", "quantum")

BAD_MEMORY_DECAY = 7.0
GOOD_MEMORY_DECAY = 5.0

# the three mnemonic-gradient weightings plus the two-term quantum weighting
MW_MENUS = ((1.0,), (0.6666, 0.3333), (0.5, 0.25, 0.25), (1.0, 1.0))

_MEMORY_WEIGHTS = {
    "none": (0.0, 0.0, 0.0),
    "best": (1.0, 0.0, 0.0),
    "best-worse": (0.6666, 0.3333, 0.0),
    "best-worse-better": (0.5, 0.25, 0.25),
}

# floor for log-uniform draws in the quantum recombination; keeps ln(1/u) finite
_LN_GUARD = 1e-12


@dataclass(frozen=True)
class FactorParams:
    """Knobs for the memory and plasticity factors."""

    memory_decay: float = BAD_MEMORY_DECAY
    mw: tuple[float, ...] = (0.5, 0.25, 0.25)
    beta: float = 1.0
    window_length: int = 10

    def __post_init__(self) -> None:
        if self.memory_decay <= 0:
            raise ValueError("memory_decay must be positive")
        if self.window_length < 1:
            raise ValueError("window_length must be at least 1")
        if tuple(self.mw) not in MW_MENUS:
            raise ValueError(f"mw must be one of {MW_MENUS}, got {self.mw}")


@dataclass
class Snapshot:
    """Archived state of one iteration: loss, range weights and their gradients."""

    loss: float
    r: np.ndarray
    g_r: np.ndarray
    iteration: int
    w: np.ndarray | None = None


@dataclass
class MemoryArchive:
    """Best/worse/better snapshots plus bounded historic sets.

    ``observe`` classifies each iteration by its loss delta against the
    previous one: increases land in the worse set, decreases in the better
    set, and the global minimum is kept as ``best``. Sets evict oldest-first
    at ``capacity``.
    """

    capacity: int = 64
    best: Snapshot | None = None
    worse: Snapshot | None = None
    better: Snapshot | None = None
    worse_set: list[Snapshot] = field(default_factory=list)
    better_set: list[Snapshot] = field(default_factory=list)
    last_loss: float = math.nan

    def observe(
        self,
        loss: float,
        r: np.ndarray,
        g_r: np.ndarray,
        iteration: int,
        w: np.ndarray | None = None,
    ) -> str:
        """Record one iteration; returns "best", "worse", "better" or "flat"."""
        snap = Snapshot(
            loss=float(loss),
            r=np.array(r, dtype=np.float64),
            g_r=np.array(g_r, dtype=np.float64),
            iteration=int(iteration),
            w=None if w is None else np.array(w, dtype=np.float64),
        )
        kind = "flat"
        if not math.isnan(self.last_loss):
            if loss > self.last_loss:
                kind = "worse"
                self.worse = snap
                self.worse_set.append(snap)
                if len(self.worse_set) > self.capacity:
                    del self.worse_set[0]
            elif loss < self.last_loss:
                kind = "better"
                self.better = snap
                self.better_set.append(snap)
                if len(self.better_set) > self.capacity:
                    del self.better_set[0]
        if self.best is None or loss < self.best.loss:
            self.best = snap
            kind = "best"
        self.last_loss = float(loss)
        return kind

    def has(self, mode: str) -> bool:
        """Whether the snapshots a memory mode needs are all present."""
        if mode == "none":
            return True
        if mode == "best":
            return self.best is not None
        if mode == "best-worse":
            return self.best is not None and self.worse is not None
        if mode == "best-worse-better":
            return self.best is not None and self.worse is not None and self.better is not None
        raise ValueError(f"unknown memory mode {mode!r}")


@njit(cache=True)
def _memory_factor(j, j_max, decay, rng):
    return math.exp(-decay * j / j_max) * rng.random()


@njit(cache=True)
def _phagocytic_factor(j, j_max, rng):
    u_sign = rng.random()
    u_mag = rng.random()
    return np.sign(u_sign - 0.5) * u_mag * (j_max - j) / j_max


@njit(cache=True)
def _apply_memory_scalar(r, g, g_best, g_worse, g_better, mw1, mw2, mw3, m_fac, floor):
    out = r - g + (mw1 * g_best + mw2 * g_worse + mw3 * g_better - g) * m_fac
    return max(out, floor)


@njit(cache=True)
def _plasticity_best(r, r_best, attract, rng):
    pull = (r_best - r) * rng.random()
    return r + pull if attract else r - pull


@njit(cache=True)
def _plasticity_three(r, r_best, r_worse, r_better, rng):
    target = 0.5 * r_best + 0.25 * r_worse + 0.25 * r_better
    return r + (target - r) * rng.random()


@njit(cache=True)
def _plasticity_quantum(r, r_best, r_worse, r_better, worse_win, better_win, mw1, mw2, beta, rng):
    u1 = rng.random()
    u2 = rng.random()
    mix = (2.0 - u1 - u2) / 2.0 * r_best + u1 / 2.0 * r_worse + u2 / 2.0 * r_better
    u_sign = rng.random()
    acc_worse = 0.0
    for i in range(worse_win.shape[0]):
        if rng.random() > 0.5:
            acc_worse += worse_win[i]
    if worse_win.shape[0] > 0:
        acc_worse /= worse_win.shape[0]
    acc_better = 0.0
    for i in range(better_win.shape[0]):
        if rng.random() > 0.5:
            acc_better += better_win[i]
    if better_win.shape[0] > 0:
        acc_better /= better_win.shape[0]
    u_ln = max(rng.random(), _LN_GUARD)
    jump = np.sign(u_sign - 0.5) * beta * (mw1 * acc_worse + mw2 * acc_better - r) * math.log(1.0 / u_ln)
    return mix + jump


def memory_factor(j: int, j_max: int, decay: float, rng: np.random.Generator) -> float:
    """Memory-persistence gate M: uniform draw under an exp(-decay*j/j_max) envelope."""
    if not 0 <= j <= j_max or j_max <= 0:
        raise ValueError("need 0 <= j <= j_max with positive j_max")
    if decay <= 0:
        raise ValueError("decay must be positive")
    return float(_memory_factor(j, j_max, decay, rng))


def phagocytic_factor(j: int, j_max: int, rng: np.random.Generator) -> float:
    """Sign-symmetric disturbance P with |P| <= (j_max - j) / j_max."""
    if not 0 <= j <= j_max or j_max <= 0:
        raise ValueError("need 0 <= j <= j_max with positive j_max")
    return float(_phagocytic_factor(j, j_max, rng))


def grad_r(
    state: NetworkState,
    dataset: Dataset,
    layout: SynapticLayout,
    m: int,
    k: int,
    schedule: LearningSchedule,
) -> float:
    """Competitive range-weight gradient for synapse k of variable m.

    Evaluated once per synapse at its right boundary b (the first step of
    segment k+1): error at b, times the boundary-reassignment surrogate
    (w[m,k] - w[m,k+1]) * x[m,b], times the rebalance chain term, the
    learning rate and the activation saturation. The last synapse has no
    movable right boundary and gets 0.
    """
    k_max = layout.params.k_max
    if not 0 <= k < k_max:
        raise IndexError(f"synapse index {k} outside [0, {k_max})")
    if k == k_max - 1:
        return 0.0
    b = int(layout.starts[m, k + 1])
    err = dataset.targets[b] - state.h[b]
    surrogate = (state.w[m, k] - state.w[m, k + 1]) * dataset.inputs[m, b]
    chain = range_derivative(layout.r[m], layout.params)[k]
    df = state.delta_f[b - 1]
    return float(err * surrogate * chain * schedule.rate * (1.0 - df * df))


def predicted_boundary_gain(
    state: NetworkState,
    dataset: Dataset,
    layout: SynapticLayout,
    m: int,
    k: int,
) -> float:
    """First-order MSE change from growing segment k one step to the right.

    The move reassigns boundary step b from synapse k+1 to synapse k, which
    shifts the pre-activation at b by (w[m,k] - w[m,k+1]) * x[m,b] and hence
    the output at b+1. Negative values predict the move helps.
    """
    k_max = layout.params.k_max
    if not 0 <= k < k_max - 1:
        raise IndexError(f"synapse {k} has no movable right boundary")
    length = layout.params.l_max
    b = int(layout.starts[m, k + 1])
    if b + 1 >= length:
        return 0.0
    surrogate = (state.w[m, k] - state.w[m, k + 1]) * dataset.inputs[m, b]
    df = state.delta_f[b]
    err_next = dataset.targets[b + 1] - state.h[b + 1]
    return float(-2.0 * err_next * (1.0 - df * df) * surrogate / length)


def apply_memory_update(
    r: np.ndarray,
    g_r: np.ndarray,
    archive: MemoryArchive,
    mode: str,
    m_factor: float | np.ndarray,
    floor: float = R_FLOOR,
) -> np.ndarray:
    """One range-weight update with mnemonic gradient mixing.

    The mnemonic terms enter with positive sign and the current gradient with
    negative sign; M gates how much of the archived mixture is replayed. With
    an unpopulated archive the update falls back to the memory-free form
    ``r - g_r`` for this call.
    """
    if mode not in MEMORY_MODES:
        raise ValueError(f"unknown memory mode {mode!r}")
    r = np.asarray(r, dtype=np.float64)
    g_r = np.asarray(g_r, dtype=np.float64)
    if r.shape != g_r.shape:
        raise ValueError("r and g_r shapes differ")
    if mode == "none" or not archive.has(mode):
        return np.maximum(r - g_r, floor)
    mw1, mw2, mw3 = _MEMORY_WEIGHTS[mode]
    g_best = archive.best.g_r
    g_worse = archive.worse.g_r if mw2 else 0.0
    g_better = archive.better.g_r if mw3 else 0.0
    mixed = mw1 * g_best + mw2 * g_worse + mw3 * g_better - g_r
    return np.maximum(r - g_r + mixed * m_factor, floor)


def sample_historic(snapshots: list[Snapshot], rng: np.random.Generator) -> Snapshot:
    """Draw one archived snapshot, favouring recent entries linearly.

    Entry i (1-based, oldest first) is chosen with probability proportional
    to i, so the newest of n entries wins with probability 2/(n+1).
    """
    n = len(snapshots)
    if n == 0:
        raise LookupError("historic set is empty")
    total = n * (n + 1) // 2
    ticket = rng.random() * total
    acc = 0.0
    for i in range(1, n + 1):
        acc += i
        if ticket < acc:
            return snapshots[i - 1]
    return snapshots[-1]


def _window_values(snapshots: list[Snapshot], window: int) -> np.ndarray:
    take = snapshots[-window:] if window < len(snapshots) else snapshots
    if not take:
        return np.zeros((0, 1, 1))
    return np.stack([s.r for s in take])


def plasticity_step(
    r: np.ndarray,
    archive: MemoryArchive,
    variant: str,
    factors: FactorParams,
    j: int,
    j_max: int,
    rng: np.random.Generator,
    phagocytic: bool = True,
    attract: bool = True,
    floor: float = R_FLOOR,
) -> np.ndarray:
    """Recombine range weights with archived snapshots, then disturb with P.

    Applied elementwise in row-major order with fresh uniform draws per
    element, consumed left-to-right through each formula. ``attract=False``
    runs the literal repulsive form of the "best" variant.
    """
    if variant not in PLASTICITY_MODES:
        raise ValueError(f"unknown plasticity variant {variant!r}")
    r = np.asarray(r, dtype=np.float64)
    out = np.empty_like(r)
    need_worse = variant in ("three-memory", "quantum")
    if variant != "off":
        if archive.best is None:
            raise ValueError("plasticity step needs a populated archive")
        if need_worse and (archive.worse is None or archive.better is None):
            raise ValueError(f"{variant} variant needs worse and better snapshots")
    if variant == "quantum":
        q_mw1, q_mw2 = (factors.mw if len(factors.mw) == 2 else (1.0, 1.0))
        worse_win = _window_values(archive.worse_set, factors.window_length)
        better_win = _window_values(archive.better_set, factors.window_length)
    for m in range(r.shape[0]):
        for k in range(r.shape[1]):
            if variant == "off":
                val = r[m, k]
            elif variant == "best":
                val = _plasticity_best(r[m, k], archive.best.r[m, k], attract, rng)
            elif variant == "three-memory":
                val = _plasticity_three(
                    r[m, k], archive.best.r[m, k], archive.worse.r[m, k], archive.better.r[m, k], rng
                )
            else:
                val = _plasticity_quantum(
                    r[m, k],
                    archive.best.r[m, k],
                    archive.worse.r[m, k],
                    archive.better.r[m, k],
                    np.ascontiguousarray(worse_win[:, m, k]),
                    np.ascontiguousarray(better_win[:, m, k]),
                    q_mw1,
                    q_mw2,
                    factors.beta,
                    rng,
                )
            if phagocytic:
                val += _phagocytic_factor(j, j_max, rng)
            out[m, k] = max(val, floor)
    return out
