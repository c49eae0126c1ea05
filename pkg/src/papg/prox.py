"""Per-block proximal operators for separable regularizers.

Each block carries one regularizer; the prox of the sum acts blockwise.
A scalar grid-search oracle is included for testing the closed forms.
"""

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("zero", "l1", "squared_l2", "l0", "box")


@dataclass(frozen=True)
class Regularizer:
    """One separable penalty g_i acting on a single block.

    kind       one of "zero", "l1", "squared_l2", "l0", "box"
    weight     lam >= 0 for l1 (lam*||.||_1), squared_l2 (lam*||.||^2),
               l0 (lam*||.||_0); ignored for zero/box
    lo, hi     bounds for the box indicator
    """

    kind: str
    weight: float = 0.0
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("regularizer weight must be nonnegative")
        if self.kind == "box" and np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("box bounds require lo <= hi")

    @property
    def convex(self):
        return self.kind != "l0"

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.weight * np.sum(np.abs(z))
        if self.kind == "squared_l2":
            return self.weight * float(z @ z)
        if self.kind == "l0":
            return self.weight * float(np.count_nonzero(z))
        # box indicator
        return 0.0 if np.all((z >= self.lo) & (z <= self.hi)) else np.inf


def prox_block(reg, z, eta):
    """argmin_w g_i(w) + ||w - z||^2 / (2 eta), componentwise.

    l1: soft threshold; squared_l2: shrink z/(1+2*eta*lam); l0: hard threshold
    keeping z_j iff |z_j| > sqrt(2*eta*lam) (the boundary maps to 0); box: clamp.
    """
    if eta <= 0:
        raise ValueError("prox step eta must be positive")
    z = np.asarray(z, dtype=float)
    lam = reg.weight
    if reg.kind == "zero":
        return z.copy()
    if reg.kind == "l1":
        return np.sign(z) * np.maximum(np.abs(z) - eta * lam, 0.0)
    if reg.kind == "squared_l2":
        return z / (1.0 + 2.0 * eta * lam)
    if reg.kind == "l0":
        return np.where(np.abs(z) > math.sqrt(2.0 * eta * lam), z, 0.0)
    return np.clip(z, reg.lo, reg.hi)


def prox_map(regs, x, eta, layout):
    """Blockwise prox of g = sum_i g_i: block i of the result is prox of block i."""
    if len(regs) != layout.p:
        raise ValueError(f"got {len(regs)} regularizers for {layout.p} blocks")
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.d,):
        raise ValueError(f"vector shape {x.shape} does not match layout d={layout.d}")
    out = np.empty_like(x)
    for i, reg in enumerate(regs):
        sl = layout.slice(i)
        out[sl] = prox_block(reg, x[sl], eta)
    return out


def regularizer_value(regs, x, layout):
    """g(x) = sum_i g_i(x_i)."""
    return sum(reg.value(layout.block(np.asarray(x, float), i)) for i, reg in enumerate(regs))


def prox_bruteforce(g_value, z, eta, lo=-5.0, hi=5.0, grid_step=1e-4):
    """Scalar prox by grid search: argmin of g(w) + (w-z)^2/(2 eta) on [lo, hi].

    Ties are broken toward the smallest |w| so hard-threshold boundaries are
    resolved deterministically. Test oracle only; O((hi-lo)/grid_step).
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    if hi <= lo:
        raise ValueError("empty search range")
    grid = np.arange(lo, hi + grid_step / 2, grid_step)
    vals = np.array([g_value(w) + (w - z) ** 2 / (2.0 * eta) for w in grid])
    best = np.min(vals)
    # near-ties within one grid-cell of objective resolution count as ties
    tied = grid[vals <= best + 1e-12 * (1.0 + abs(best))]
    return float(tied[np.argmin(np.abs(tied))])
