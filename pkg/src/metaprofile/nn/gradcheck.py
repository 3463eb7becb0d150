"""Central finite-difference gradient checks for layers."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol: float) -> bool:
        return self.max_error < tol

    def __str__(self) -> str:
        return ", ".join(f"{k}: {v:.2e}" for k, v in self.errors.items())


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    # worst element error relative to the group's gradient scale
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(module: Layer, x: np.ndarray, h: float = 1e-5, max_elems: int = 1000,
               seed: int = 0, train: bool = True, check_input: bool = True,
               floor: float = 1e-12) -> GradCheckReport:
    """Compare ``module.backward`` with central differences of a random projection.

    The module is copied and cast to float64; at most ``max_elems`` randomly chosen
    entries of each parameter group (and of the input) are perturbed.  Groups whose
    gradient scale is below ``floor`` are judged on absolute error; a conv bias
    feeding a train-mode BatchNorm has an exactly zero gradient and needs this.
    """
    m = copy.deepcopy(module).astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(m.forward(x.copy(), train).shape)

    def f(inp):
        return float(np.sum(m.forward(inp, train) * proj))

    m.zero_grad()
    m.forward(x.copy(), train)
    dx = m.backward(proj.copy())
    report = GradCheckReport()
    for name, pdict, gdict, k in list(m.named_params()):
        p = pdict[k]
        analytic = gdict[k].copy()
        flat = p.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_elems else rng.choice(flat.size, max_elems, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f(x)
            flat[i] = old - h
            fm = f(x)
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * h)
        report.errors[name] = _rel_error(analytic.reshape(-1)[idx], numeric, floor)
    if check_input and dx is not None:
        flat = x.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_elems else rng.choice(flat.size, max_elems, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f(x)
            flat[i] = old - h
            fm = f(x)
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * h)
        report.errors["input"] = _rel_error(dx.reshape(-1)[idx], numeric, floor)
    return report
