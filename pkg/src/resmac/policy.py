"""Action sources that drive closed-loop reservation cycles.

A policy maps the shared belief (and, for the genie benchmark, the true
occupancy) to a per-cluster transmission vector, and decides when the cycle
is over. The table policy ends a cycle only once the belief confirms
emptiness; the genie policy knows the truth and stops as soon as the system
is actually drained.
"""
from __future__ import annotations

from .belief import BeliefState, is_target, quantize
from .genie import GenieValueFunction, lift
from .model import ActionVector, ModelConfig, Occupancy
from .rtdp import ValueTable, rtdp_backup


class TablePolicy:
    """Greedy one-step policy over a belief-value table.

    With ``learn`` set (the default) every consulted belief is also backed up
    into the table, exactly as during training. This is not optional polish:
    a frozen table can alias a belief carrying residual multi-terminal mass
    with a cheaper quantization neighbor, and the greedy action then probes a
    cluster that is empty in every likely state, changing nothing, forever.
    The write raises the value of such a self-loop until a productive probe
    wins. A frozen read-only mode remains available for diagnostics; repeated
    beliefs are then served from a cache.
    """

    def __init__(self, table: ValueTable, cfg: ModelConfig, learn: bool = True):
        self.table = table
        self.cfg = cfg
        self.learn = learn
        self._cache: dict = {}

    def action(self, belief: BeliefState, truth: Occupancy | None = None) -> ActionVector:
        if self.learn:
            act, value = rtdp_backup(belief, self.table, self.cfg)
            self.table.write(quantize(belief, self.table.q), value)
            return act
        key = (belief.m_shared, tuple(belief.items()))
        hit = self._cache.get(key)
        if hit is None:
            hit = rtdp_backup(belief, self.table, self.cfg)[0]
            self._cache[key] = hit
        return hit

    def finished(self, belief: BeliefState, truth: Occupancy | None = None) -> bool:
        return is_target(belief)


class GeniePolicy:
    """Optimal fully informed policy; a benchmark, not implementable on air."""

    def __init__(self, gvf: GenieValueFunction):
        self.gvf = gvf

    def action(self, belief: BeliefState, truth: Occupancy) -> ActionVector:
        return lift(truth, self.gvf)[1]

    def finished(self, belief: BeliefState, truth: Occupancy) -> bool:
        return sum(truth) == 0
