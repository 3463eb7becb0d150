"""Adam and the learning-rate schedules used for training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam over a set of named parameter groups sharing one step counter."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self, named: list[tuple[str, dict, dict, str]], lr: float) -> None:
        params = {name: pdict[k] for name, pdict, _, k in named}
        grads = {name: gdict[k] for name, _, gdict, k in named}
        adam_step(params, grads, self.state, lr)


VARIANTS = ("cyclic_triangular", "cosine_warm_restarts", "constant")


@dataclass
class LrSchedule:
    variant: str = "constant"
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    step_size: int = 100
    lr_max: float = 1e-3
    lr_min: float = 0.0
    T_0: int = 100
    T_mult: float = 2.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown schedule {self.variant!r}")
        if not 0 < self.base_lr <= self.max_lr:
            raise ValueError("need 0 < base_lr <= max_lr")
        if self.step_size < 1 or self.T_0 < 1 or self.T_mult < 1:
            raise ValueError("step_size and T_0 must be >= 1, T_mult >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "LrSchedule":
        return cls(**d)


@dataclass
class PhasedSchedule:
    """Schedules run back to back; the last phase continues indefinitely."""

    phases: Sequence[tuple[LrSchedule, int]]

    @classmethod
    def from_dicts(cls, items: list[dict]) -> "PhasedSchedule":
        return cls([(LrSchedule.from_dict(it["schedule"]), int(it["steps"])) for it in items])


def lr_at(schedule: LrSchedule | PhasedSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if isinstance(schedule, PhasedSchedule):
        for i, (phase, steps) in enumerate(schedule.phases):
            if step < steps or i == len(schedule.phases) - 1:
                return lr_at(phase, step)
            step -= steps
    s = schedule
    if s.variant == "constant":
        return s.base_lr
    if s.variant == "cyclic_triangular":
        cycle = math.floor(1 + step / (2 * s.step_size))
        x = abs(step / s.step_size - 2 * cycle + 1)
        return s.base_lr + (s.max_lr - s.base_lr) * max(0.0, 1.0 - x)
    t_cur, t_i = float(step), float(s.T_0)
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= s.T_mult
    return s.lr_min + (s.lr_max - s.lr_min) * (1 + math.cos(math.pi * t_cur / t_i)) / 2
