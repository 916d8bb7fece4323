"""Cosine-filter test signals and supervised prediction windows.

The benchmark task predicts a filtered waveform a few steps ahead: for each
window position t the inputs are the signal at t+1 .. t+m_max and the target
is the signal at t+m_max+1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COSINE = "cosine"
VARIABLE_CYCLE = "variable-cycle-cosine"

SIGNAL_KINDS = (COSINE, VARIABLE_CYCLE)


@dataclass(frozen=True)
class SignalSpec:
    """Waveform recipe for the synthetic prediction task.

    ``period_end`` only applies to the variable-cycle kind, where the
    instantaneous period shrinks linearly from ``period`` at t=0 down to
    ``period_end`` at t=length-1.
    """

    kind: str = COSINE
    amplitude: float = 1.0
    period: float = 22.0
    period_end: float | None = None
    length: int = 64
    phase: float = 0.0

    def validate(self) -> None:
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.length <= 0:
            raise ValueError("length must be a positive integer")
        if self.kind == VARIABLE_CYCLE:
            if self.length < 2:
                raise ValueError("variable-cycle signals need length >= 2")
            if self.period_end is None or self.period_end <= 0:
                raise ValueError("variable-cycle signals need a positive period_end")
            if self.period_end >= self.period:
                raise ValueError("period_end must be smaller than period")


def instantaneous_period(spec: SignalSpec, t: np.ndarray | float) -> np.ndarray | float:
    """Period of the waveform at sample index t."""
    spec.validate()
    if spec.kind == COSINE:
        return np.broadcast_to(np.float64(spec.period), np.shape(t)).copy() if np.ndim(t) else float(spec.period)
    frac = np.asarray(t, dtype=np.float64) / (spec.length - 1)
    out = spec.period + (spec.period_end - spec.period) * frac
    return out if np.ndim(t) else float(out)


def generate_signal(spec: SignalSpec) -> np.ndarray:
    """Sample the waveform at t = 0 .. length-1."""
    spec.validate()
    t = np.arange(spec.length, dtype=np.float64)
    period = instantaneous_period(spec, t) if spec.kind == VARIABLE_CYCLE else spec.period
    return spec.amplitude * np.cos(2.0 * np.pi * t / period + spec.phase)


@dataclass(frozen=True)
class Dataset:
    """Supervised windows over a signal.

    ``inputs[m, t] = y[t + m + 1]`` for m = 0 .. m_max-1 and
    ``targets[t] = y[t + m_max + 1]``, both for t = 0 .. window_length-1.
    Every value is a verbatim sample of the source signal.
    """

    inputs: np.ndarray
    targets: np.ndarray

    @property
    def m_max(self) -> int:
        return self.inputs.shape[0]

    @property
    def window_length(self) -> int:
        return self.inputs.shape[1]


def build_dataset(y: np.ndarray, m_max: int, l_max: int) -> Dataset:
    """Slice a signal into lagged inputs and targets for an l_max-step window."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if m_max < 1 or l_max < 1:
        raise ValueError("m_max and l_max must be positive")
    needed = l_max + m_max + 1
    if y.shape[0] < needed:
        raise ValueError(
            f"signal too short: need at least {needed} samples, got {y.shape[0]}"
        )
    if not np.all(np.isfinite(y[:needed])):
        raise ValueError("signal contains non-finite samples inside the window")
    inputs = np.stack([y[m : m + l_max] for m in range(1, m_max + 1)])
    targets = y[m_max + 1 : m_max + 1 + l_max].copy()
    return Dataset(inputs=inputs, targets=targets)


def dataset_from_spec(spec: SignalSpec, m_max: int, l_max: int) -> Dataset:
    """Generate the signal for ``spec`` and window it in one step."""
    return build_dataset(generate_signal(spec), m_max, l_max)
