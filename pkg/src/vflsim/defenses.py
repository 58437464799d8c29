"""Gradient-perturbation baselines applied to outbound representation gradients.

Each function takes the gradient tensor bound for a passive party and returns
a new tensor of the same shape. Random draws come only from the generator
passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

KINDS = ("none", "ng", "gc", "ppdl", "dsgd", "dimip")


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = "none"
    ng_scale: float = 1e-3
    gc_rate: float = 0.9
    ppdl_tau: float = 1e-3
    ppdl_theta: float = 0.01
    ppdl_noise: float = 1e-3
    dsgd_levels: int = 2
    dsgd_noise: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown defense kind {self.kind!r}; expected one of {KINDS}")
        if self.ng_scale < 0 or self.ppdl_noise < 0 or self.dsgd_noise < 0:
            raise InputError("noise scales must be nonnegative")
        if not 0.0 <= self.gc_rate <= 1.0 or not 0.0 <= self.ppdl_theta <= 1.0:
            raise InputError("gc_rate and ppdl_theta must lie in [0, 1]")
        if self.ppdl_tau < 0:
            raise InputError("ppdl_tau must be nonnegative")
        if self.dsgd_levels < 1:
            raise InputError("dsgd_levels must be >= 1")

    @property
    def perturbs_gradients(self) -> bool:
        return self.kind in ("ng", "gc", "ppdl", "dsgd")


def ng(grad: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Laplace(0, scale) noise."""
    if scale < 0:
        raise InputError("scale must be nonnegative")
    if scale == 0:
        return grad.copy()
    return grad + rng.laplace(0.0, scale, size=grad.shape)


def gc(grad: np.ndarray, rate: float) -> np.ndarray:
    """Zero all but the largest-magnitude ``1 - rate`` fraction of entries.

    ``floor(rate * n)`` entries are pruned. Among equal magnitudes the entry
    with the smaller flat index is kept.
    """
    if not 0.0 <= rate <= 1.0:
        raise InputError("rate must lie in [0, 1]")
    flat = grad.ravel()
    keep = flat.size - int(math.floor(rate * flat.size + 1e-9))
    out = np.zeros_like(flat)
    if keep > 0:
        order = np.argsort(-np.abs(flat), kind="stable")[:keep]
        out[order] = flat[order]
    return out.reshape(grad.shape)


def ppdl(grad: np.ndarray, tau: float, theta: float, noise_scale: float,
         rng: np.random.Generator) -> np.ndarray:
    """Selective release: random candidates, magnitude threshold, Laplace noise.

    Candidates are visited in a random order; one is released when its
    (pre-noise) magnitude is at least ``tau``. Release stops after
    ``ceil(theta * n)`` entries. Everything not released is zero.
    """
    if tau < 0 or not 0.0 <= theta <= 1.0 or noise_scale < 0:
        raise InputError("need tau >= 0, theta in [0, 1], noise_scale >= 0")
    flat = grad.ravel()
    budget = int(math.ceil(theta * flat.size - 1e-9))
    out = np.zeros_like(flat)
    if budget == 0:
        return out.reshape(grad.shape)
    order = rng.permutation(flat.size)
    chosen = order[np.abs(flat[order]) >= tau][:budget]
    out[chosen] = flat[chosen]
    if noise_scale > 0:
        out[chosen] += rng.laplace(0.0, noise_scale, size=chosen.size)
    return out.reshape(grad.shape)


def dsgd(grad: np.ndarray, levels: int, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Snap each entry to the nearest of ``levels`` evenly spaced values.

    The levels span ``[min, max]`` of this tensor; a single level sits at the
    midpoint. Laplace(0, noise_scale) noise is added afterwards.
    """
    if levels < 1 or noise_scale < 0:
        raise InputError("need levels >= 1 and noise_scale >= 0")
    lo, hi = float(grad.min()), float(grad.max())
    if levels == 1 or hi == lo:
        out = np.full_like(grad, 0.5 * (lo + hi) if levels == 1 else lo)
    else:
        step = (hi - lo) / (levels - 1)
        out = lo + np.round((grad - lo) / step) * step
        out = np.clip(out, lo, hi)
    if noise_scale > 0:
        out = out + rng.laplace(0.0, noise_scale, size=grad.shape)
    return out


def apply_defense(grad: np.ndarray, cfg: DefenseConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind == "ng":
        return ng(grad, cfg.ng_scale, rng)
    if cfg.kind == "gc":
        return gc(grad, cfg.gc_rate)
    if cfg.kind == "ppdl":
        return ppdl(grad, cfg.ppdl_tau, cfg.ppdl_theta, cfg.ppdl_noise, rng)
    if cfg.kind == "dsgd":
        return dsgd(grad, cfg.dsgd_levels, cfg.dsgd_noise, rng)
    return grad
