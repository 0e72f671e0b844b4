"""Probabilistic model of a slotted tree-splitting reservation channel.

A state is the tuple of active-terminal counts per cluster. Every slot, each
active terminal transmits a reservation packet independently with its
cluster's probability. The channel broadcast is idle, success, or collision;
a successful terminal leaves the contention, while all colliding terminals
move together into one newly created cluster. Once the cluster count has hit
the cap, colliders stay in their original clusters instead.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Iterator, Sequence


class Observation(Enum):
    """Per-slot channel feedback: idle, single success, or collision."""

    IDLE = "0"
    SUCCESS = "1"
    COLLISION = "e"

    @staticmethod
    def for_transmitter_count(k: int) -> "Observation":
        if k == 0:
            return Observation.IDLE
        if k == 1:
            return Observation.SUCCESS
        return Observation.COLLISION


class Occupancy(tuple):
    """Ordered per-cluster terminal counts; the index is the cluster id.

    The empty tuple is permitted and encodes the fully drained target class
    (shared with :class:`ReducedOccupancy`).
    """

    def __new__(cls, counts: Iterable[int] = ()):
        t = tuple(int(c) for c in counts)
        if any(c < 0 for c in t):
            raise ValueError(f"cluster counts must be non-negative, got {t}")
        return super().__new__(cls, t)

    @property
    def n_active(self) -> int:
        return sum(self)

    @property
    def n_clusters(self) -> int:
        return len(self)

    @property
    def is_target(self) -> bool:
        return sum(self) == 0

    def render(self) -> str:
        return "(" + ",".join(str(c) for c in self) + ")"


class ReducedOccupancy(Occupancy):
    """Canonical occupancy: empty clusters removed, counts sorted ascending."""

    def __new__(cls, counts: Iterable[int] = ()):
        t = tuple(int(c) for c in counts)
        if any(c < 1 for c in t):
            raise ValueError(f"reduced counts must be positive, got {t}")
        if any(t[i] > t[i + 1] for i in range(len(t) - 1)):
            raise ValueError(f"reduced counts must be non-decreasing, got {t}")
        return tuple.__new__(cls, t)


def reduce_occupancy(s: Sequence[int]) -> ReducedOccupancy:
    """Drop empty clusters and sort the rest ascending. Idempotent."""
    return ReducedOccupancy(sorted(c for c in s if c > 0))


class ActionVector(tuple):
    """Per-cluster transmission probabilities.

    ``support_limit`` bounds how many entries may be nonzero (None disables
    the bound); ``grid=d`` restricts entries to multiples of 1/d (None means
    continuous). Both are construction-time constraints: the kernel functions
    accept any probability sequence, so oracles can bypass the limits.
    """

    def __new__(cls, probs: Iterable[float], support_limit: int | None = 2,
                grid: int | None = None):
        t = tuple(float(p) for p in probs)
        for p in t:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"transmission probability {p} outside [0, 1]")
        if grid is not None:
            for p in t:
                if abs(p * grid - round(p * grid)) > 1e-9:
                    raise ValueError(f"{p} is not a multiple of 1/{grid}")
        nonzero = sum(1 for p in t if p > 0.0)
        if support_limit is not None and nonzero > support_limit:
            raise ValueError(
                f"{nonzero} transmitting clusters exceed support limit {support_limit}")
        obj = super().__new__(cls, t)
        obj.support_limit = support_limit
        obj.grid = grid
        return obj


@dataclass(frozen=True)
class ModelConfig:
    """Scale knobs of the channel model.

    ``m_cap`` caps the cluster count; with ``cap_in_place`` set, a collision
    at the cap keeps every collider in its original cluster (the state
    repeats while the feedback still reports the collision).
    """

    n_max: int = 5
    m_cap: int = 15
    cap_in_place: bool = True

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.m_cap < 1:
            raise ValueError("m_cap must be at least 1")


def _binom_weights(n: int, p: float) -> list[tuple[int, float]]:
    # Nonzero-probability transmitter counts for one cluster.
    if p <= 0.0:
        return [(0, 1.0)]
    if p >= 1.0:
        return [(n, 1.0)]
    return [(k, math.comb(n, k) * p**k * (1.0 - p) ** (n - k)) for k in range(n + 1)]


def successor_distribution(s: Sequence[int], action: Sequence[float],
                           cfg: ModelConfig) -> dict[tuple[tuple[int, ...], Observation], float]:
    """Joint one-slot distribution over (next state, feedback).

    Per-cluster transmitter counts are independent binomials; each count
    vector is classified as idle, success, or collision. At the cluster cap
    all collision outcomes collapse onto the unchanged state.
    """
    if len(action) != len(s):
        raise ValueError(f"action length {len(action)} != cluster count {len(s)}")
    s = tuple(s)
    at_cap = cfg.cap_in_place and len(s) >= cfg.m_cap
    weights = [_binom_weights(n, p) for n, p in zip(s, action)]
    out: dict[tuple[tuple[int, ...], Observation], float] = {}
    for combo in itertools.product(*weights):
        prob = 1.0
        total = 0
        for k, w in combo:
            prob *= w
            total += k
        if prob == 0.0:
            continue
        if total == 0:
            key = (s, Observation.IDLE)
        elif total == 1:
            i = next(idx for idx, (k, _) in enumerate(combo) if k == 1)
            nxt = s[:i] + (s[i] - 1,) + s[i + 1:]
            key = (nxt, Observation.SUCCESS)
        elif at_cap:
            key = (s, Observation.COLLISION)
        else:
            nxt = tuple(n - k for n, (k, _) in zip(s, combo)) + (total,)
            key = (nxt, Observation.COLLISION)
        out[key] = out.get(key, 0.0) + prob
    return out


def transition_probability(s: Sequence[int], s_next: Sequence[int],
                           action: Sequence[float], cfg: ModelConfig) -> float:
    """Probability of moving from ``s`` to ``s_next`` in one slot."""
    target = tuple(s_next)
    return sum(p for (nxt, _o), p in successor_distribution(s, action, cfg).items()
               if nxt == target)


def observation_probability(o: Observation, s: Sequence[int],
                            s_next: Sequence[int]) -> float:
    """Deterministic feedback kernel: which broadcast accompanies s -> s_next.

    Uses the structural conditions only; an in-place collision at the cluster
    cap is indistinguishable from idle here and is resolved by
    :func:`successor_distribution` instead.
    """
    s = tuple(s)
    nxt = tuple(s_next)
    if nxt == s:
        return 1.0 if o is Observation.IDLE else 0.0
    if sum(nxt) == sum(s) - 1 and len(nxt) == len(s):
        return 1.0 if o is Observation.SUCCESS else 0.0
    if sum(nxt) == sum(s) and len(nxt) == len(s) + 1:
        return 1.0 if o is Observation.COLLISION else 0.0
    return 0.0


def sample_step(s: Sequence[int], action: Sequence[float], rng,
                cfg: ModelConfig) -> tuple[Occupancy, Observation]:
    """Draw one slot of the channel: each terminal transmits independently."""
    if len(action) != len(s):
        raise ValueError(f"action length {len(action)} != cluster count {len(s)}")
    s = tuple(s)
    ks = [int(rng.binomial(n, p)) for n, p in zip(s, action)]
    total = sum(ks)
    if total == 0:
        return Occupancy(s), Observation.IDLE
    if total == 1:
        i = ks.index(1)
        return Occupancy(s[:i] + (s[i] - 1,) + s[i + 1:]), Observation.SUCCESS
    if cfg.cap_in_place and len(s) >= cfg.m_cap:
        return Occupancy(s), Observation.COLLISION
    return Occupancy(tuple(n - k for n, k in zip(s, ks)) + (total,)), Observation.COLLISION


def _ascending_partitions(n: int, min_part: int = 1) -> Iterator[tuple[int, ...]]:
    if n == 0:
        yield ()
        return
    for first in range(min_part, n + 1):
        for rest in _ascending_partitions(n - first, first):
            yield (first,) + rest


def enumerate_reduced_states(n_max: int) -> list[ReducedOccupancy]:
    """All canonical occupancies with 1..n_max terminals, sorted."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    states = [ReducedOccupancy(p)
              for total in range(1, n_max + 1)
              for p in _ascending_partitions(total)]
    states.sort(key=lambda s: (sum(s), s))
    return states


@lru_cache(maxsize=None)
def partition_count(n: int, m: int) -> int:
    """Number of partitions of ``n`` into exactly ``m`` positive parts."""
    if n < 0 or m < 0:
        return 0
    if m == 0:
        return 1 if n == 0 else 0
    if n == 0 or m > n:
        return 0
    if m == 1 or m == n:
        return 1
    return partition_count(n - m, m) + partition_count(n - 1, m - 1)


def count_via_updates(n_max: int) -> tuple[int, int]:
    """Backup counts per sweep after empty-cluster removal (N1) and after
    additionally merging cluster permutations (N2)."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    n1 = sum(math.comb(n - 1, m - 1) for n in range(1, n_max + 1) for m in range(1, n + 1))
    n2 = sum(partition_count(n, m) for n in range(1, n_max + 1) for m in range(1, n + 1))
    return n1, n2


def full_state_count(n_max: int, m_max: int) -> int:
    """Size of the uncollapsed state space (ordered clusters, zeros kept)."""
    if n_max < 1 or m_max < 1:
        raise ValueError("n_max and m_max must be at least 1")
    return sum(math.comb(n + m - 1, m - 1)
               for n in range(1, n_max + 1) for m in range(1, m_max + 1))


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_occupancies(n_max: int, m: int,
                          include_target: bool = False) -> Iterator[Occupancy]:
    """All ordered occupancies with ``m`` clusters and up to ``n_max`` terminals."""
    lo = 0 if include_target else 1
    for total in range(lo, n_max + 1):
        for counts in _compositions(total, m):
            yield Occupancy(counts)


def action_grid(m: int, d: int, support_limit: int | None = 2) -> Iterator[tuple[float, ...]]:
    """Grid actions on ``m`` clusters: 1..support_limit clusters transmit,
    each with a probability in {1/d, ..., d/d}."""
    max_active = m if support_limit is None else min(support_limit, m)
    for size in range(1, max_active + 1):
        for idxs in itertools.combinations(range(m), size):
            for levels in itertools.product(range(1, d + 1), repeat=size):
                probs = [0.0] * m
                for i, k in zip(idxs, levels):
                    probs[i] = k / d
                yield tuple(probs)
