"""Exact value iteration for the fully observed (genie) reservation game.

When a genie reveals the occupancy, the contention becomes a goal MDP with
unit slot costs. Empty clusters and cluster order do not affect the dynamics,
so the solve runs on canonical (reduced) occupancies only; values and actions
for arbitrary states follow by reduction. All-singleton states have the
closed form V = number of terminals with a deterministic probe-one policy,
and are pinned instead of iterated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

from .model import (
    ActionVector,
    ModelConfig,
    ReducedOccupancy,
    action_grid,
    enumerate_reduced_states,
    reduce_occupancy,
    successor_distribution,
)

GENIE_FORMAT = "genie-value-function"
GENIE_VERSION = 1


class ConvergenceError(RuntimeError):
    """Value iteration failed to meet the threshold within the sweep guard."""


@dataclass
class GenieValueFunction:
    """Converged values and greedy policy on reduced occupancies."""

    n_max: int
    d: int
    support_limit: int | None
    epsilon: float
    values: dict[ReducedOccupancy, float]
    policy: dict[ReducedOccupancy, ActionVector]
    sweep_diffs: tuple[float, ...] = ()
    work_state_count: int = 0

    def value_of(self, s: Sequence[int]) -> float:
        """Value of any occupancy, via reduction."""
        r = reduce_occupancy(s)
        if r not in self.values:
            raise ValueError(f"state {tuple(s)} has {sum(s)} terminals, "
                             f"beyond the solved n_max={self.n_max}")
        return self.values[r]

    def to_dict(self) -> dict:
        entries = [{"state": list(s), "value": self.values[s],
                    "action": list(self.policy[s])}
                   for s in sorted(self.values, key=lambda s: (sum(s), s))]
        return {"format": GENIE_FORMAT, "version": GENIE_VERSION,
                "n_max": self.n_max, "d": self.d,
                "support_limit": self.support_limit, "epsilon": self.epsilon,
                "entries": entries}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "GenieValueFunction":
        if data.get("format") != GENIE_FORMAT:
            raise ValueError(f"not a genie value function file: {data.get('format')}")
        if data.get("version") != GENIE_VERSION:
            raise ValueError(f"unsupported version {data.get('version')}")
        values = {}
        policy = {}
        for e in data["entries"]:
            s = ReducedOccupancy(e["state"])
            values[s] = float(e["value"])
            policy[s] = ActionVector(e["action"], support_limit=None)
        return cls(n_max=data["n_max"], d=data["d"],
                   support_limit=data["support_limit"], epsilon=data["epsilon"],
                   values=values, policy=policy)

    @classmethod
    def load(cls, path: str | Path) -> "GenieValueFunction":
        return cls.from_dict(json.loads(Path(path).read_text()))


def singleton_shortcut(s: Sequence[int]) -> tuple[float, ActionVector] | None:
    """Closed form for states whose clusters are all singletons: probe one
    cluster at a time, each probe is a sure success, so the value equals the
    terminal count. Returns None when any cluster holds 2+ terminals."""
    t = tuple(s)
    if sum(t) == 0:
        return 0.0, ActionVector(())
    if all(c == 1 for c in t):
        probs = (1.0,) + (0.0,) * (len(t) - 1)
        return float(len(t)), ActionVector(probs, support_limit=None)
    return None


@lru_cache(maxsize=None)
def _action_successors(s: tuple[int, ...], d: int, support_limit: int | None):
    """Per grid action, the reduced successor distribution from ``s``.

    The kernel is evaluated with a cap that can never bind (one collision adds
    at most one cluster), so the reduced dynamics stay undistorted.
    """
    cfg = ModelConfig(n_max=max(1, sum(s)), m_cap=len(s) + 2)
    out = []
    for probs in action_grid(len(s), d, support_limit):
        agg: dict[ReducedOccupancy, float] = {}
        for (nxt, _o), p in successor_distribution(s, probs, cfg).items():
            r = reduce_occupancy(nxt)
            agg[r] = agg.get(r, 0.0) + p
        succs = tuple(sorted(agg.items(), key=lambda kv: (sum(kv[0]), kv[0])))
        out.append((probs, succs))
    return tuple(out)


def bellman_backup(s: Sequence[int], values: Mapping[Sequence[int], float],
                   d: int, support_limit: int | None = 2) -> tuple[float, ActionVector]:
    """One-state backup: minimize 1 + expected successor value over the grid.

    Ties resolve to the lexicographically smallest action vector. Raises
    KeyError when a successor value is missing from ``values``.
    """
    t = tuple(s)
    if sum(t) == 0:
        return 0.0, ActionVector(())
    best: tuple[float, tuple[float, ...]] | None = None
    for probs, succs in _action_successors(t, d, support_limit):
        total = 1.0
        for r, p in succs:
            if r:
                try:
                    total += p * values[r]
                except KeyError:
                    raise KeyError(f"missing value for successor {tuple(r)} of {t}") from None
        cand = (total, probs)
        if best is None or cand < best:
            best = cand
    assert best is not None
    return best[0], ActionVector(best[1], support_limit=None, grid=d)


def solve_via(cfg: ModelConfig, d: int = 10, support_limit: int | None = 2,
              epsilon: float = 1e-6, max_sweeps: int = 10_000) -> GenieValueFunction:
    """Value iteration over reduced occupancies with pinned singleton states.

    Jacobi sweeps read the previous iterate and stop when the sup-norm change
    drops to ``epsilon``. All-singleton states keep their closed-form values
    throughout and are excluded from the work set.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if cfg.m_cap <= cfg.n_max:
        raise ValueError(
            f"m_cap={cfg.m_cap} <= n_max={cfg.n_max} would let the cluster cap "
            "distort the reduced dynamics")
    states = enumerate_reduced_states(cfg.n_max)
    target = ReducedOccupancy(())
    values: dict[ReducedOccupancy, float] = {target: 0.0}
    work: list[ReducedOccupancy] = []
    for s in states:
        if all(c == 1 for c in s):
            values[s] = float(sum(s))
        else:
            values[s] = 0.0
            work.append(s)

    diffs: list[float] = []
    converged = False
    for _sweep in range(max_sweeps):
        fresh = dict(values)
        delta = 0.0
        for s in work:
            v, _a = bellman_backup(s, values, d, support_limit)
            fresh[s] = v
            delta = max(delta, abs(v - values[s]))
        values = fresh
        diffs.append(delta)
        if delta <= epsilon:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"no convergence to {epsilon} within {max_sweeps} sweeps "
            f"(last diff {diffs[-1] if diffs else math.inf})")

    policy: dict[ReducedOccupancy, ActionVector] = {target: ActionVector(())}
    for s in states:
        shortcut = singleton_shortcut(s)
        if shortcut is not None:
            policy[s] = shortcut[1]
        else:
            _v, a = bellman_backup(s, values, d, support_limit)
            policy[s] = a
    return GenieValueFunction(n_max=cfg.n_max, d=d, support_limit=support_limit,
                              epsilon=epsilon, values=values, policy=policy,
                              sweep_diffs=tuple(diffs), work_state_count=len(work))


def lift(s: Sequence[int], gvf: GenieValueFunction) -> tuple[float, ActionVector]:
    """Value and action for an arbitrary occupancy.

    The reduced action is scattered back onto the original cluster positions
    (stable ascending sort by count, empty clusters get probability zero).
    """
    t = tuple(s)
    r = reduce_occupancy(t)
    if r not in gvf.values:
        raise ValueError(f"state {t} has {sum(t)} terminals, beyond solved "
                         f"n_max={gvf.n_max}")
    reduced_action = gvf.policy[r]
    order = sorted((i for i, c in enumerate(t) if c > 0), key=lambda i: (t[i], i))
    probs = [0.0] * len(t)
    for pos, i in enumerate(order):
        probs[i] = reduced_action[pos]
    return gvf.values[r], ActionVector(probs, support_limit=None)


def expected_slots_uniform_policy(n: int, p: float | None = None,
                                  per_stage: bool = False) -> float:
    """Expected slots to drain ``n`` terminals when everyone transmits with a
    common probability each slot.

    With ``per_stage`` the probability is 1/k at each stage of k remaining
    terminals, which keeps the expectation below n*e.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if per_stage:
        return sum(1.0 / (1.0 - 1.0 / k) ** (k - 1) for k in range(1, n + 1))
    if p is None or not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    return sum(1.0 / (k * p * (1.0 - p) ** (k - 1)) for k in range(1, n + 1))
