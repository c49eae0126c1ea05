"""Generation, validation, and serialization of update schedules.

A schedule materializes, per global clock t, which workers update and which
clock each one read every peer block at. Two invariants define legality for
a staleness bound s:

  bounded delay    0 <= t - tau_j^i(t) <= s and tau_i^i(t) == t
  frequent update  every worker updates at least once in any s+1
                   consecutive clocks
"""

import math
from dataclasses import dataclass, field

import numpy as np

HEADER_TAG = "papg-schedule v1"


@dataclass(frozen=True)
class Violation:
    kind: str  # "delay", "own_block", "frequent_update"
    t: int
    worker: int
    detail: str

    def __str__(self):
        return f"[{self.kind}] t={self.t} worker={self.worker}: {self.detail}"


@dataclass
class Schedule:
    """Active sets and delay rows over clocks 0..T-1.

    active[t] is a sorted tuple of worker indices; delays holds one row of p
    clocks per active (t, i) pair. Inactive workers carry no row (they copy
    their block unchanged).
    """

    p: int
    T: int
    s: int
    active: list
    delays: dict = field(repr=False)

    def row(self, t, i):
        return self.delays[(t, i)]

    def active_clocks(self, i):
        """T_i: clocks at which worker i updates."""
        return [t for t in range(self.T) if i in self.active[t]]

    def max_staleness(self, t, i):
        row = self.delays[(t, i)]
        return int(t - min(row))


def validate(schedule, s):
    """All bounded-delay / frequent-update violations at staleness bound s.

    Returns an empty list iff the schedule is legal for this s. Violations
    are data, not exceptions.
    """
    out = []
    p, T = schedule.p, schedule.T
    for t in range(T):
        for i in schedule.active[t]:
            row = schedule.delays.get((t, i))
            if row is None:
                out.append(Violation("delay", t, i, "active worker has no delay row"))
                continue
            if row[i] != t:
                out.append(Violation("own_block", t, i, f"tau_i={row[i]} != t={t}"))
            for j in range(p):
                age = t - row[j]
                if age < 0 or age > s:
                    out.append(
                        Violation("delay", t, i, f"peer {j} read at clock {row[j]}, age {age} outside [0, {s}]")
                    )
    for i in range(p):
        clocks = schedule.active_clocks(i)
        marks = np.zeros(T, dtype=bool)
        marks[clocks] = True
        for t in range(T - s):
            if not marks[t : t + s + 1].any():
                out.append(
                    Violation("frequent_update", t, i, f"no update in window [{t}, {t + s}]")
                )
    return out


def synchronous(p, T):
    """Every worker updates every clock with zero delay (s = 0)."""
    if p < 1 or T < 1:
        raise ValueError("need p >= 1 and T >= 1")
    active = [tuple(range(p))] * T
    delays = {(t, i): np.full(p, t, dtype=int) for t in range(T) for i in range(p)}
    return Schedule(p=p, T=T, s=0, active=active, delays=delays)


def random_bounded(p, T, s, seed):
    """Seeded legal schedule: uniform delays, uniform inactivity gaps <= s.

    Activation times advance by 1 + U{0..s}, so every window of s+1 clocks
    contains an update by construction. Identical seeds give identical
    schedules. With s = 0 this is exactly the synchronous schedule.
    """
    if p < 1 or T < 1 or s < 0:
        raise ValueError("need p >= 1, T >= 1, s >= 0")
    rng = np.random.default_rng(seed)
    active_sets = [set() for _ in range(T)]
    for i in range(p):
        t = int(rng.integers(0, s + 1))
        while t < T:
            active_sets[t].add(i)
            t += 1 + int(rng.integers(0, s + 1))
    delays = {}
    for t in range(T):
        for i in sorted(active_sets[t]):
            low = max(t - s, 0)
            row = rng.integers(low, t + 1, size=p)
            row[i] = t
            delays[(t, i)] = row.astype(int)
    active = [tuple(sorted(a)) for a in active_sets]
    return Schedule(p=p, T=T, s=s, active=active, delays=delays)


def adversarial(p, T, s):
    """Worst case the invariants permit: maximal delays, sparsest updates.

    Workers update on a staggered period-s grid (every clock when s = 0) and
    read every peer block at the oldest legal clock (t-s)_+.
    """
    if p < 1 or T < 1 or s < 0:
        raise ValueError("need p >= 1, T >= 1, s >= 0")
    period = max(s, 1)
    stride = math.ceil((s + 1) / p)
    offsets = [(i * stride) % period for i in range(p)]
    active = []
    delays = {}
    for t in range(T):
        acts = tuple(i for i in range(p) if t % period == offsets[i])
        active.append(acts)
        for i in acts:
            row = np.full(p, max(t - s, 0), dtype=int)
            row[i] = t
            delays[(t, i)] = row
    return Schedule(p=p, T=T, s=s, active=active, delays=delays)


def save(schedule, path):
    """Line-oriented text format; integer round-trip is bit exact."""
    with open(path, "w") as fh:
        fh.write(f"{HEADER_TAG} p={schedule.p} s={schedule.s} T={schedule.T}\n")
        for t in range(schedule.T):
            for i in schedule.active[t]:
                row = " ".join(str(int(v)) for v in schedule.delays[(t, i)])
                fh.write(f"{t} {i} {row}\n")


def load(path):
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if parts[:2] != HEADER_TAG.split() or len(parts) != 5:
            raise ValueError(f"bad schedule header: {header!r}")
        try:
            meta = dict(kv.split("=") for kv in parts[2:])
            p, s, T = int(meta["p"]), int(meta["s"]), int(meta["T"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad schedule header: {header!r}") from exc
        active_sets = [set() for _ in range(T)]
        delays = {}
        for lineno, line in enumerate(fh, start=2):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2 + p:
                raise ValueError(f"line {lineno}: expected {2 + p} fields, got {len(fields)}")
            t, i = int(fields[0]), int(fields[1])
            if not (0 <= t < T and 0 <= i < p):
                raise ValueError(f"line {lineno}: record ({t}, {i}) out of range")
            active_sets[t].add(i)
            delays[(t, i)] = np.array([int(v) for v in fields[2:]], dtype=int)
    active = [tuple(sorted(a)) for a in active_sets]
    return Schedule(p=p, T=T, s=s, active=active, delays=delays)
