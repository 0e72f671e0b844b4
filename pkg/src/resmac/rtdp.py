"""Trial-based learning of reservation costs over quantized beliefs.

The planner keeps a hash table from quantized beliefs to slot-cost estimates
and refreshes it along simulated reservation trajectories. Each backup
minimizes a one-slot lookahead over grid actions in which at most a fixed
number of clusters transmit; successor beliefs are computed exactly and
quantized only to address the table. Beliefs that are certain at most one
terminal remains are resolved in closed form: probe every cluster once.

Unseen table keys are initialized either to zero or to the belief-weighted
value of the fully observed (genie) solve, which is what makes pre-training
effective.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import (
    DUST,
    BeliefState,
    QuantizedBelief,
    belief_update,
    is_lone_terminal_belief,
    is_target,
    quantize,
)
from .genie import GenieValueFunction
from .model import (
    ActionVector,
    ModelConfig,
    Observation,
    Occupancy,
    sample_step,
    successor_distribution,
)

TABLE_FORMAT = "belief-value-table"
TABLE_VERSION = 1

_UNSET = object()


class ValueTable:
    """Keyed store from quantized beliefs to cost estimates.

    Carries the parameters the estimates were produced under (quantization q,
    action grid d, support limit) and the initialization rule for keys not yet
    in the table.
    """

    def __init__(self, q: int = 10, d: int = 10, support_limit: int | None = 2,
                 init_mode: str = "zero", genie: GenieValueFunction | None = None):
        if init_mode not in ("zero", "genie"):
            raise ValueError(f"unknown init_mode {init_mode!r}")
        if init_mode == "genie" and genie is None:
            raise ValueError("genie init requires a solved value function")
        self.q = q
        self.d = d
        self.support_limit = support_limit
        self.init_mode = init_mode
        self.genie = genie
        self.entries: dict[QuantizedBelief, float] = {}
        self.visits: dict[QuantizedBelief, int] = {}
        self._genie_cache: dict[tuple[int, ...], float] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> "ValueTable":
        """Independent table with the same entries; the genie reference is
        shared (it is immutable after solving)."""
        dup = ValueTable(q=self.q, d=self.d, support_limit=self.support_limit,
                         init_mode=self.init_mode, genie=self.genie)
        dup.entries = dict(self.entries)
        dup.visits = dict(self.visits)
        dup._genie_cache = self._genie_cache
        return dup

    def write(self, key: QuantizedBelief, value: float) -> None:
        self.entries[key] = float(value)
        self.visits[key] = self.visits.get(key, 0) + 1

    def state_value(self, s: Sequence[int]) -> float:
        """Genie value of a single occupancy (0.0 under zero init)."""
        if self.init_mode == "zero":
            return 0.0
        t = tuple(s)
        v = self._genie_cache.get(t)
        if v is None:
            v = self.genie.value_of(t)
            self._genie_cache[t] = v
        return v

    def to_dict(self) -> dict:
        entries = [{"belief": [[list(s), n] for s, n in key.entries],
                    "value": self.entries[key],
                    "visits": self.visits.get(key, 0)}
                   for key in sorted(self.entries, key=lambda k: k.entries)]
        return {"format": TABLE_FORMAT, "version": TABLE_VERSION,
                "q": self.q, "d": self.d, "support_limit": self.support_limit,
                "init_mode": self.init_mode,
                "genie": self.genie.to_dict() if self.genie is not None else None,
                "entries": entries}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "ValueTable":
        if data.get("format") != TABLE_FORMAT:
            raise ValueError(f"not a belief value table file: {data.get('format')}")
        if data.get("version") != TABLE_VERSION:
            raise ValueError(f"unsupported version {data.get('version')}")
        genie = (GenieValueFunction.from_dict(data["genie"])
                 if data.get("genie") is not None else None)
        table = cls(q=data["q"], d=data["d"], support_limit=data["support_limit"],
                    init_mode=data["init_mode"], genie=genie)
        for e in data["entries"]:
            key = QuantizedBelief(tuple((tuple(s), int(n)) for s, n in e["belief"]),
                                  data["q"])
            table.entries[key] = float(e["value"])
            table.visits[key] = int(e.get("visits", 0))
        return table

    @classmethod
    def load(cls, path: str | Path) -> "ValueTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_value(b: BeliefState, table: ValueTable) -> float:
    """Initialization for a belief not yet in the table: zero, or the
    belief-weighted genie value of its support states."""
    if table.init_mode == "zero":
        return 0.0
    return sum(p * table.state_value(s) for s, p in b.items())


@lru_cache(maxsize=None)
def _pmf_grid(d: int, n_top: int) -> np.ndarray:
    """pmf[n, k, g] = P(Binomial(n, g/d) = k)."""
    grid = np.arange(d + 1) / d
    pmf = np.zeros((n_top + 1, n_top + 1, d + 1))
    for n in range(n_top + 1):
        for k in range(n + 1):
            pmf[n, k] = math.comb(n, k) * grid**k * (1.0 - grid) ** (n - k)
    return pmf


def _class_values(post: np.ndarray, col_states: list[tuple[int, ...]],
                  nontarget: np.ndarray, table: ValueTable,
                  genie_vec: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Per grid action: likelihood of this feedback class and the value of the
    resulting posterior (table value, or initialization for unseen keys)."""
    lik = post.sum(axis=1)
    vals = np.zeros(post.shape[0])
    live = np.flatnonzero(lik > 0.0)
    if live.size == 0:
        return lik, vals
    pn = post[live] / lik[live, None]
    dust = pn < DUST
    dust[:, nontarget == 0.0] = False  # drained states are never pruned
    pn[dust] = 0.0
    pn /= pn.sum(axis=1, keepdims=True)
    active = np.flatnonzero(pn @ nontarget > 0.0)
    out = np.zeros(live.size)
    if active.size:
        q = table.q
        nums = np.floor(pn[active] * q + 0.5).astype(np.int64)
        init_vals = (pn[active] @ genie_vec) if genie_vec is not None \
            else np.zeros(active.size)
        chosen = np.empty(active.size)
        # adjacent grid actions often quantize identically: dedupe on raw bytes
        seen: dict[bytes, float | None] = {}
        get = table.entries.get
        for idx in range(nums.shape[0]):
            row = nums[idx]
            blob = row.tobytes()
            if blob in seen:
                v = seen[blob]
            else:
                nz = row.nonzero()[0]
                key = QuantizedBelief(
                    tuple((col_states[int(c)], int(row[c])) for c in nz), q)
                v = get(key)
                seen[blob] = v
            chosen[idx] = init_vals[idx] if v is None else v
        out[active] = chosen
    vals[live] = out
    return lik, vals


def _genie_vector(table: ValueTable,
                  col_states: list[tuple[int, ...]]) -> np.ndarray | None:
    if table.init_mode == "zero":
        return None
    return np.array([table.state_value(s) for s in col_states])


class _ClassAccumulator:
    """Sparse (row, successor) mass for one feedback class of one action
    support; rows are (count_i, count_j, k_i, k_j) outcome profiles whose
    probability weight is shared by every support state in the profile."""

    __slots__ = ("rows", "cols", "r", "c", "v")

    def __init__(self):
        self.rows: dict[tuple[int, int, int, int], int] = {}
        self.cols: dict[tuple[int, ...], int] = {}
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[float] = []

    def add(self, rowkey, state, weight):
        self.r.append(self.rows.setdefault(rowkey, len(self.rows)))
        self.c.append(self.cols.setdefault(state, len(self.cols)))
        self.v.append(weight)

    def finalize(self) -> tuple[np.ndarray, list[tuple[int, ...]], np.ndarray, np.ndarray]:
        n_rows, n_cols = len(self.rows), len(self.cols)
        mat = np.zeros((n_rows, n_cols))
        # (row, col) pairs are unique: the successor pins down the outcome
        mat[self.r, self.c] = self.v
        states = list(self.cols.keys())
        perm = sorted(range(n_cols), key=lambda k: (sum(states[k]), states[k]))
        mat = mat[:, perm]
        states = [states[k] for k in perm]
        keys = np.array(list(self.rows.keys()))
        nontarget = np.array([1.0 if sum(s) else 0.0 for s in states])
        return mat, states, keys, nontarget


def _eval_pair(states, bvec, i, j, d, pmf, table, cfg, m):
    at_cap = cfg.cap_in_place and m >= cfg.m_cap
    acc = {"idle": _ClassAccumulator(), "succ": _ClassAccumulator(),
           "coll": _ClassAccumulator()}
    for t, s in enumerate(states):
        a, c = s[i], s[j]
        bt = bvec[t]
        for ki in range(a + 1):
            for kj in range(c + 1):
                k_total = ki + kj
                if k_total == 0:
                    acc["idle"].add((a, c, 0, 0), s, bt)
                elif k_total == 1:
                    if ki:
                        nxt = s[:i] + (s[i] - 1,) + s[i + 1:]
                    else:
                        nxt = s[:j] + (s[j] - 1,) + s[j + 1:]
                    acc["succ"].add((a, c, ki, kj), nxt, bt)
                else:
                    if at_cap:
                        nxt = s
                    else:
                        lst = list(s)
                        lst[i] -= ki
                        lst[j] -= kj
                        lst.append(k_total)
                        nxt = tuple(lst)
                    acc["coll"].add((a, c, ki, kj), nxt, bt)

    n_grid = d * d
    q_vals = np.ones(n_grid)
    for cls in acc.values():
        if not cls.rows:
            continue
        mat, col_states, keys, nontarget = cls.finalize()
        p_i = pmf[keys[:, 0], keys[:, 2]][:, 1:]
        p_j = pmf[keys[:, 1], keys[:, 3]][:, 1:]
        weights = (p_i.T[:, None, :] * p_j.T[None, :, :]).reshape(n_grid, -1)
        lik, vals = _class_values(weights @ mat, col_states, nontarget, table,
                                  _genie_vector(table, col_states))
        q_vals += lik * vals

    best_val = q_vals.min()
    best_action = None
    for g in np.flatnonzero(q_vals == best_val):
        x, y = divmod(int(g), d)
        probs = [0.0] * m
        probs[i] = (x + 1) / d
        probs[j] = (y + 1) / d
        tp = tuple(probs)
        if best_action is None or tp < best_action:
            best_action = tp
    return float(best_val), best_action


def _eval_single(states, bvec, i, d, pmf, table, cfg, m):
    at_cap = cfg.cap_in_place and m >= cfg.m_cap
    acc = {"idle": _ClassAccumulator(), "succ": _ClassAccumulator(),
           "coll": _ClassAccumulator()}
    for t, s in enumerate(states):
        a = s[i]
        bt = bvec[t]
        for k in range(a + 1):
            if k == 0:
                acc["idle"].add((a, 0, 0, 0), s, bt)
            elif k == 1:
                acc["succ"].add((a, 0, k, 0), s[:i] + (s[i] - 1,) + s[i + 1:], bt)
            else:
                if at_cap:
                    nxt = s
                else:
                    nxt = s[:i] + (s[i] - k,) + s[i + 1:] + (k,)
                acc["coll"].add((a, 0, k, 0), nxt, bt)

    q_vals = np.ones(d)
    for cls in acc.values():
        if not cls.rows:
            continue
        mat, col_states, keys, nontarget = cls.finalize()
        weights = pmf[keys[:, 0], keys[:, 2]][:, 1:].T
        lik, vals = _class_values(weights @ mat, col_states, nontarget, table,
                                  _genie_vector(table, col_states))
        q_vals += lik * vals

    best_val = q_vals.min()
    best_action = None
    for g in np.flatnonzero(q_vals == best_val):
        probs = [0.0] * m
        probs[i] = (int(g) + 1) / d
        tp = tuple(probs)
        if best_action is None or tp < best_action:
            best_action = tp
    return float(best_val), best_action


def _action_value_sparse(b_items, probs, table, cfg) -> float:
    """One-action Bellman value via sparse dict arithmetic; used for action
    supports wider than two clusters."""
    raw: dict[Observation, dict[tuple[int, ...], float]] = {o: {} for o in Observation}
    for s, p in b_items:
        for (nxt, obs), tp in successor_distribution(s, probs, cfg).items():
            bucket = raw[obs]
            bucket[nxt] = bucket.get(nxt, 0.0) + p * tp
    total = 1.0
    for obs, bucket in raw.items():
        lik = sum(bucket.values())
        if lik <= 0.0:
            continue
        posterior = {s: v / lik for s, v in bucket.items()}
        posterior = {s: v for s, v in posterior.items() if v >= DUST or sum(s) == 0}
        scale = sum(posterior.values())
        posterior = {s: v / scale for s, v in posterior.items()}
        if all(sum(s) == 0 for s in posterior):
            v = 0.0
        else:
            items = sorted(posterior.items(), key=lambda kv: (sum(kv[0]), kv[0]))
            entries = tuple((s, n) for s, n in
                            ((s, math.floor(p * table.q + 0.5)) for s, p in items) if n)
            v = table.entries.get(QuantizedBelief(entries, table.q))
            if v is None:
                v = sum(p * table.state_value(s) for s, p in items) \
                    if table.init_mode == "genie" else 0.0
        total += lik * v
    return total


def _backup_search(b: BeliefState, table: ValueTable, cfg: ModelConfig,
                   d: int, support_limit: int | None) -> tuple[float, tuple[float, ...]]:
    m = b.m_shared
    states = [tuple(s) for s, _ in b.items()]
    bvec = np.array([p for _, p in b.items()])
    n_top = max(cfg.n_max, max(max(s) for s in states))
    pmf = _pmf_grid(d, n_top)
    max_active = m if support_limit is None else min(support_limit, m)

    best: tuple[float, tuple[float, ...]] | None = None
    for i in range(m):
        cand = _eval_single(states, bvec, i, d, pmf, table, cfg, m)
        if best is None or cand < best:
            best = cand
    if max_active >= 2:
        for i, j in itertools.combinations(range(m), 2):
            cand = _eval_pair(states, bvec, i, j, d, pmf, table, cfg, m)
            if best is None or cand < best:
                best = cand
    for size in range(3, max_active + 1):
        b_items = list(b.items())
        for idxs in itertools.combinations(range(m), size):
            for levels in itertools.product(range(1, d + 1), repeat=size):
                probs = [0.0] * m
                for ii, k in zip(idxs, levels):
                    probs[ii] = k / d
                tp = tuple(probs)
                cand = (_action_value_sparse(b_items, tp, table, cfg), tp)
                if best is None or cand < best:
                    best = cand
    assert best is not None
    return best


def rtdp_backup(b: BeliefState, table: ValueTable, cfg: ModelConfig,
                d: int | None = None, support_limit=_UNSET,
                shortcut: bool = True) -> tuple[ActionVector, float]:
    """Greedy action and backed-up value at belief ``b``.

    When the belief is certain at most one terminal remains, the closed form
    applies: every cluster transmits with probability one (ignoring the
    support limit) and the value is exactly one slot. Otherwise the grid
    search runs; ties go to the lexicographically smallest action vector.
    """
    if is_target(b):
        raise ValueError("backup undefined at a target belief")
    if d is None:
        d = table.d
    if support_limit is _UNSET:
        support_limit = table.support_limit
    if shortcut and is_lone_terminal_belief(b):
        return ActionVector((1.0,) * b.m_shared, support_limit=None), 1.0
    value, probs = _backup_search(b, table, cfg, d, support_limit)
    return ActionVector(probs, support_limit=None, grid=d), value


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one simulated reservation process."""

    slots_used: int
    trajectory_length: int
    actions_taken: tuple[ActionVector, ...]
    terminal_reached: bool


@dataclass(frozen=True)
class TrainingRecord:
    trial_index: int
    result: TrialResult
    table_size: int


class TrialLimitError(RuntimeError):
    """A trial exceeded the slot cap without reaching the target belief."""


def run_trial(table: ValueTable, b0: BeliefState, true_state: Sequence[int],
              rng, cfg: ModelConfig, max_slots: int = 100_000) -> TrialResult:
    """One reservation process: back up, store, act, observe, update, repeat
    until the belief confirms that no active terminal remains."""
    belief = b0
    state = Occupancy(true_state)
    slots = 0
    actions: list[ActionVector] = []
    while not is_target(belief):
        if slots >= max_slots:
            raise TrialLimitError(f"trial exceeded {max_slots} slots")
        action, value = rtdp_backup(belief, table, cfg)
        table.write(quantize(belief, table.q), value)
        state, obs = sample_step(state, action, rng, cfg)
        belief = belief_update(belief, action, obs, cfg)
        slots += 1
        actions.append(action)
    return TrialResult(slots_used=slots, trajectory_length=slots,
                       actions_taken=tuple(actions), terminal_reached=True)


def train(table: ValueTable, b0: BeliefState, n_trials: int, rng,
          cfg: ModelConfig, max_slots: int = 100_000) -> list[TrainingRecord]:
    """Run ``n_trials`` reservation processes against hidden states sampled
    from ``b0``, sharing and improving one table throughout."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    support = list(b0.items())
    cumulative = np.cumsum([p for _, p in support])
    records = []
    for idx in range(n_trials):
        u = rng.random()
        pick = int(np.searchsorted(cumulative, u, side="right"))
        pick = min(pick, len(support) - 1)
        result = run_trial(table, b0, support[pick][0], rng, cfg, max_slots)
        records.append(TrainingRecord(idx, result, len(table)))
    return records


def moving_average(values: Sequence[float], window: int) -> list[float]:
    """Trailing mean over up to ``window`` latest entries."""
    out = []
    acc = 0.0
    vals = list(values)
    for i, v in enumerate(vals):
        acc += v
        if i >= window:
            acc -= vals[i - window]
        out.append(acc / min(i + 1, window))
    return out


def write_learning_curve(path: str | Path, records: Sequence[TrainingRecord],
                         window: int = 40, meta: dict | None = None) -> None:
    """Learning-curve CSV: trial index, slots, trailing mean, table size."""
    slots = [r.result.slots_used for r in records]
    ma = moving_average(slots, window)
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        writer = csv.writer(fh)
        writer.writerow(["trial_index", "slots_used", f"moving_avg_{window}",
                         "table_size"])
        for r, avg in zip(records, ma):
            writer.writerow([r.trial_index, r.result.slots_used,
                             f"{avg:.6f}", r.table_size])
