"""Block-partitioned model vectors, iterate history, and the step-size rule.

The model x in R^d is split into p contiguous blocks; worker i owns block i.
A worker's local view of the full model is assembled from possibly stale
iterates, one clock per block.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class ScheduleViolation(ValueError):
    """A delay row breaks the bounded-delay / own-block-fresh rules."""


@dataclass(frozen=True)
class BlockLayout:
    """Decomposition R^d = R^{d_1} x ... x R^{d_p}."""

    block_sizes: tuple
    offsets: tuple = field(init=False)
    d: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("block sizes must be positive, got %r" % (self.block_sizes,))
        object.__setattr__(self, "block_sizes", sizes)
        offs = (0,) + tuple(np.cumsum(sizes).tolist())
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "d", offs[-1])

    @property
    def p(self):
        return len(self.block_sizes)

    def slice(self, i):
        """Coordinate span of block i as a python slice."""
        return slice(self.offsets[i], self.offsets[i + 1])

    def block(self, x, i):
        """View of block i of a length-d vector."""
        return x[self.slice(i)]


def partition(d, p, sizes=None):
    """Build a BlockLayout for dimension d and p workers.

    With sizes=None the split is even, remainder going to the
    lowest-indexed blocks; otherwise the explicit sizes are used.
    """
    d, p = int(d), int(p)
    if d < 1 or p < 1:
        raise ValueError("d and p must be positive")
    if sizes is None:
        if p > d:
            raise ValueError(f"cannot split d={d} coordinates into p={p} nonempty blocks")
        q, r = divmod(d, p)
        sizes = [q + 1] * r + [q] * (p - r)
    else:
        sizes = [int(s) for s in sizes]
        if len(sizes) != p:
            raise ValueError(f"expected {p} sizes, got {len(sizes)}")
        if sum(sizes) != d:
            raise ValueError(f"sizes sum to {sum(sizes)}, expected d={d}")
    return BlockLayout(tuple(sizes))


def check_model_vector(x, layout):
    """Validate a dense model vector against a layout; returns the array."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.d,):
        raise ValueError(f"model vector has shape {x.shape}, expected ({layout.d},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("model vector contains non-finite entries")
    return x


class History:
    """Append-only iterate sequence indexed by the global clock.

    With window=None every iterate is retained (diagnostics mode); with an
    integer window only the most recent `window` iterates stay materialized,
    which is all the engine needs (s+2 suffices for staleness bound s).
    """

    def __init__(self, x0, layout, window=None):
        self.layout = layout
        self.window = None if window is None else int(window)
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        self._first = 0
        self._iterates = [check_model_vector(x0, layout).copy()]

    def __len__(self):
        return self._first + len(self._iterates)

    @property
    def latest_clock(self):
        return len(self) - 1

    def append(self, x):
        self._iterates.append(check_model_vector(x, self.layout).copy())
        if self.window is not None and len(self._iterates) > self.window:
            drop = len(self._iterates) - self.window
            del self._iterates[:drop]
            self._first += drop

    def iterate(self, t):
        """Iterate x(t); raises if t was evicted by the retention window."""
        if not 0 <= t < len(self):
            raise IndexError(f"clock {t} outside recorded range [0, {len(self) - 1}]")
        if t < self._first:
            raise IndexError(f"clock {t} evicted by retention window (oldest kept: {self._first})")
        return self._iterates[t - self._first]

    def stacked(self):
        """All retained iterates as a (len, d) array (full-trace mode only)."""
        if self._first != 0:
            raise ValueError("history ran in windowed mode; full trace unavailable")
        return np.array(self._iterates)


def assemble_local_view(history, delays, i, t):
    """Local full model of worker i at clock t: block j comes from clock delays[j].

    Enforces the bounded-delay contract: 0 <= t - delays[j] and delays[i] == t.
    The staleness upper bound is validated by the schedule layer, which knows s.
    """
    layout = history.layout
    delays = np.asarray(delays, dtype=int)
    if delays.shape != (layout.p,):
        raise ScheduleViolation(f"expected {layout.p} delay entries, got {delays.shape}")
    if delays[i] != t:
        raise ScheduleViolation(f"worker {i} must read its own block fresh: tau={delays[i]}, t={t}")
    if np.any(delays < 0) or np.any(delays > t):
        raise ScheduleViolation(f"delay row {delays.tolist()} outside [0, {t}]")
    out = np.empty(layout.d)
    for j in range(layout.p):
        sl = layout.slice(j)
        out[sl] = history.iterate(int(delays[j]))[sl]
    return out


def max_step_size(L, p, s):
    """Largest theoretically admissible step 1/(L(1+2*sqrt(p)*s)).

    Valid steps are strictly below this value. With p=1, s=0 it reduces to
    the classical 1/L rule.
    """
    if L <= 0:
        raise ValueError("Lipschitz constant must be positive")
    if p < 1 or s < 0:
        raise ValueError("need p >= 1 and s >= 0")
    return 1.0 / (L * (1.0 + 2.0 * math.sqrt(p) * s))
