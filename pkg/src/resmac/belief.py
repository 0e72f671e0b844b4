"""Belief tracking over cluster occupancies, plus value-table quantization.

All terminals observe the same error-free feedback and run the same protocol,
so a single belief (a sparse distribution over occupancy states that share one
cluster count) describes everyone's knowledge. Beliefs update by Bayes rule
through the channel kernel; quantized snapshots serve as hash keys for the
learned value table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .model import ModelConfig, Observation, Occupancy, successor_distribution

DUST = 1e-12
_SUM_TOL = 1e-9


class InconsistentObservationError(RuntimeError):
    """The observed feedback has zero predicted likelihood under the belief,
    which signals divergence between the planner's model and the channel."""


def _canon_key(state: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    return (sum(state), tuple(state))


class BeliefState:
    """Sparse probability distribution over occupancies with a shared cluster
    count. Immutable; support is kept in canonical (total, counts) order."""

    __slots__ = ("_support", "m_shared")

    def __init__(self, support: Mapping[Sequence[int], float]):
        items = [(Occupancy(s), float(p)) for s, p in support.items() if p != 0.0]
        if not items:
            raise ValueError("belief needs at least one support state")
        items.sort(key=lambda kv: _canon_key(kv[0]))
        total = 0.0
        length = len(items[0][0])
        for s, p in items:
            if p < -1e-15:
                raise ValueError(f"negative probability {p} for state {s}")
            if len(s) != length:
                raise ValueError("support states must share one cluster count")
            total += p
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"support probabilities sum to {total}, expected 1")
        self._support = dict(items)
        self.m_shared = length

    def prob(self, state: Sequence[int]) -> float:
        return self._support.get(tuple(state), 0.0)

    def items(self) -> Iterator[tuple[Occupancy, float]]:
        return iter(self._support.items())

    def states(self) -> Iterator[Occupancy]:
        return iter(self._support.keys())

    def __len__(self) -> int:
        return len(self._support)

    def __eq__(self, other) -> bool:
        return isinstance(other, BeliefState) and self._support == other._support

    def __hash__(self):
        return hash(tuple(self._support.items()))

    def render(self) -> str:
        """Canonical text form, e.g. ``{(1,2):0.3,(3):0.7}``."""
        parts = [f"{s.render()}:{format(p, '.12g')}" for s, p in self._support.items()]
        return "{" + ",".join(parts) + "}"

    def __repr__(self):
        return f"BeliefState({self.render()})"


@dataclass(frozen=True)
class QuantizedBelief:
    """Canonical hash key: (state, numerator) pairs on a 1/q grid.

    Zero entries are dropped and states follow a fixed total order, so two
    quantized beliefs are equal exactly when their sequences are equal. The
    numerators need not sum to q.
    """

    entries: tuple[tuple[tuple[int, ...], int], ...]
    q: int

    def render(self) -> str:
        parts = [f"({','.join(map(str, s))}):{n}/{self.q}" for s, n in self.entries]
        return "{" + ",".join(parts) + "}"


def quantize(b: BeliefState, q: int) -> QuantizedBelief:
    """Round each support probability to the nearest multiple of 1/q (ties
    away from zero) and drop entries that round to zero."""
    if q < 1:
        raise ValueError("q must be at least 1")
    entries = []
    for s, p in b.items():
        num = math.floor(p * q + 0.5)
        if num:
            entries.append((tuple(s), num))
    return QuantizedBelief(tuple(entries), q)


def _posterior_from_raw(acc: dict[tuple[int, ...], float], lik: float) -> BeliefState:
    # Dust pruning keeps the support from accumulating numerical debris, but
    # never evicts drained states: confirming emptiness ends every cycle, so
    # the empty state must stay in support no matter how unlikely it started.
    posterior = {s: p / lik for s, p in acc.items()}
    pruned = {s: p for s, p in posterior.items() if p >= DUST or sum(s) == 0}
    if not pruned:
        raise InconsistentObservationError("posterior vanished after pruning")
    scale = sum(pruned.values())
    return BeliefState({s: p / scale for s, p in pruned.items()})


def belief_update(b: BeliefState, action: Sequence[float], o: Observation,
                  cfg: ModelConfig) -> BeliefState:
    """Bayes posterior after applying ``action`` and observing ``o``.

    Raises :class:`InconsistentObservationError` when the observation has zero
    likelihood under the belief.
    """
    acc: dict[tuple[int, ...], float] = {}
    for s, p in b.items():
        for (nxt, obs), tp in successor_distribution(s, action, cfg).items():
            if obs is o:
                acc[nxt] = acc.get(nxt, 0.0) + p * tp
    lik = sum(acc.values())
    if lik <= 0.0:
        raise InconsistentObservationError(
            f"observation {o.name} impossible under belief {b.render()}")
    return _posterior_from_raw(acc, lik)


def observation_likelihood(b: BeliefState, action: Sequence[float], o: Observation,
                           cfg: ModelConfig) -> float:
    """Predicted probability of observing ``o`` after applying ``action``."""
    total = 0.0
    for s, p in b.items():
        for (_nxt, obs), tp in successor_distribution(s, action, cfg).items():
            if obs is o:
                total += p * tp
    return total


def is_lone_terminal_belief(b: BeliefState) -> bool:
    """True when at most one terminal can remain but emptiness is unconfirmed:
    every support state has <= 1 active terminal and at least one has exactly 1.
    Probing all clusters at once is then optimal and costs a single slot."""
    any_one = False
    for s, _p in b.items():
        n = sum(s)
        if n > 1:
            return False
        if n == 1:
            any_one = True
    return any_one


def is_target(b: BeliefState) -> bool:
    """True when the belief is certain no active terminal remains."""
    return all(sum(s) == 0 for s in b.states())


def build_initial_belief(dist: Iterable[float], include_zero: bool = False) -> BeliefState:
    """Single-cluster belief with mass ``dist[k-1]`` on k = 1..len(dist)
    terminals; any remaining mass goes to the empty state when
    ``include_zero`` is set.

    With ``include_zero`` the empty state is always kept in support, floored
    at a negligible mass: an empty system is structurally possible whenever a
    window may contain no arrivals, and dropping it would make emptiness
    unconfirmable.
    """
    probs = [float(x) for x in dist]
    if any(p < -1e-12 for p in probs):
        raise ValueError("initial distribution has negative mass")
    total = sum(probs)
    if total > 1.0 + _SUM_TOL:
        raise ValueError(f"initial distribution mass {total} exceeds 1")
    rest = 1.0 - total
    if not include_zero and abs(rest) > _SUM_TOL:
        raise ValueError(f"initial distribution mass {total} != 1")
    support: dict[tuple[int, ...], float] = {}
    if include_zero:
        support[(0,)] = max(rest, 1e-300)
    for n, p in enumerate(probs, start=1):
        if p > 0.0:
            support[(n,)] = p
    return BeliefState(support)
