"""Adaptive-moment (Adam) updates over named arrays.

Kept framework-free and purely functional: a step maps (arrays, grads,
state) to fresh arrays and a fresh state, which makes snapshotting and
determinism trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the step counter."""

    step: int
    m: dict
    v: dict

    @staticmethod
    def init(arrays: dict) -> "AdamState":
        return AdamState(
            step=0,
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_step(
    arrays: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> tuple[dict, AdamState]:
    """One bias-corrected Adam step; inputs are never mutated."""
    t = state.step + 1
    new_arrays = {}
    new_m = {}
    new_v = {}
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for key, value in arrays.items():
        g = grads[key]
        # non-finite intermediates are allowed to propagate into the check below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            m = beta1 * state.m[key] + (1.0 - beta1) * g
            v = beta2 * state.v[key] + (1.0 - beta2) * np.square(g)
            update = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
            out = value - update
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite parameter values after update of {key}")
        new_arrays[key] = out
        new_m[key] = m
        new_v[key] = v
    return new_arrays, AdamState(step=t, m=new_m, v=new_v)
