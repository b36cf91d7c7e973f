"""Central finite-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, backward, no_grad


@dataclass
class GradReport:
    name: str
    checked: int  # number of entries compared
    rel_error: float  # ||analytic - numeric|| / max(||analytic||, ||numeric||)
    max_abs_error: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
) -> list[GradReport]:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    Each parameter is perturbed in place.  ``max_entries`` limits how many
    entries per tensor are probed (chosen uniformly at random); ``None``
    checks every entry.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    rng = np.random.default_rng(seed)
    reports = []
    for name, p in params.items():
        analytic = np.zeros(p.data.shape) if p.grad is None else np.asarray(p.grad, dtype=np.float64)
        if not p.data.flags.c_contiguous:
            p.data = np.array(p.data, order="C")
        flat = p.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for j, k in enumerate(idx):
                orig = flat[k]
                flat[k] = orig + h
                up = float(loss_fn().data)
                flat[k] = orig - h
                down = float(loss_fn().data)
                flat[k] = orig
                numeric[j] = (up - down) / (2 * h)
        a = analytic.reshape(-1)[idx]
        reports.append(GradReport(name, int(idx.size), relative_error(a, numeric), float(np.max(np.abs(a - numeric)))))
    return reports
