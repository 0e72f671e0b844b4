"""Classic contention protocols run under the same traffic and metrics.

Slotted ALOHA and the stack (tree) algorithm transmit whole data packets
directly, so a collided attempt wastes ``rho`` slots; CSMA/CA reserves with a
one-slot RTS/CTS handshake first, so only RTS packets ever collide. All three
share the reservation simulator's arrival stream bit for bit under the same
seed, enabling paired comparisons.

Two disciplines here are deliberately not the textbook-naive ones:

* ALOHA backoff decays stepwise (k -> k-1 per delivery) instead of resetting
  to zero. A hard reset hands the winner a degenerate zero-width window while
  every challenger sits at W_max, and one station then drains its whole queue
  back to back; that channel capture made ALOHA the *best* benchmark under
  load, inverting the expected ordering. Stepwise decay keeps windows
  symmetric across backlogged stations. A drained queue clears k entirely.
* A stack winner with remaining backlog re-enters one level deep rather than
  at the top. Re-entering at level zero collides with the next group popped
  by its own success, poisoning every resolution epoch at saturation.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sim import (
    Metrics,
    PacketRecord,
    SlotAccounting,
    TRAFFIC_STREAM,
    TrafficConfig,
    compute_metrics,
    generate_arrivals,
)

PROTOCOLS = ("aloha", "stack", "csma_ca")
W_MAX_DEFAULT = 1024
STACK_REENTRY_LEVEL = 1
_BENCH_STREAM = {"aloha": 301, "stack": 302, "csma_ca": 303}


def aloha_backoff_bound(k: int, w_max: int = W_MAX_DEFAULT) -> int:
    """Inclusive upper bound of the backoff window after the k-th collision:
    min(2^k, w_max) - 1."""
    return min(2**k, w_max) - 1


def csma_backoff_bound(k: int, w_max: int = W_MAX_DEFAULT) -> int:
    """Inclusive upper bound after the k-th collision: min(2^(k+2), w_max).
    Fresh packets draw with k = 0."""
    return min(2 ** (k + 2), w_max)


@dataclass
class BackoffState:
    """Exponential-backoff bookkeeping for one station's head packet."""

    k: int = 0
    pending_backoff: int = 0
    w_max: int = W_MAX_DEFAULT


@dataclass
class _AlohaStation:
    queue: deque = field(default_factory=deque)
    backoff: BackoffState = field(default_factory=BackoffState)
    burst_left: int = 0
    burst_dirty: bool = False
    probing: bool = False


@dataclass
class AlohaWorld:
    rho: int
    w_max: int = W_MAX_DEFAULT
    short_attempts: bool = False  # collisions cost 1 probe slot instead of rho
    stations: list[_AlohaStation] = field(default_factory=list)
    delivered: list[PacketRecord] = field(default_factory=list)
    t: int = 0

    def inject(self, records: Sequence[PacketRecord], rng) -> None:
        for rec in records:
            self.stations[rec.owner].queue.append(rec)


def _aloha_redraw(st: _AlohaStation, w_max: int, rng) -> None:
    bound = aloha_backoff_bound(st.backoff.k, w_max)
    st.backoff.pending_backoff = int(rng.integers(0, bound + 1)) if bound > 0 else 0


def step_slotted_aloha(world: AlohaWorld, rng) -> list[tuple[str, int]]:
    """One slot: stations with expired backoff push whole data bursts onto
    the channel; any overlap spoils every overlapping burst (no carrier
    sense), learned at burst end. Backoff counts down every slot, including
    slots occupied by others' data."""
    events = []
    waiting = [st for st in world.stations
               if st.burst_left == 0 and st.queue and st.backoff.pending_backoff > 0]
    for st in world.stations:
        if st.burst_left == 0 and st.queue and st.backoff.pending_backoff == 0:
            st.burst_left = world.rho
            st.burst_dirty = False
            st.probing = world.short_attempts
    active = [st for st in world.stations if st.burst_left > 0]
    if len(active) >= 2:
        for st in active:
            st.burst_dirty = True
    for i, st in enumerate(world.stations):
        if st.burst_left == 0:
            continue
        events.append(("data", i))
        st.burst_left -= 1
        if st.probing:
            # short-attempt mode: a spoiled attempt aborts after its first slot
            st.probing = False
            if st.burst_dirty:
                st.burst_left = 0
        if st.burst_left == 0:
            if st.burst_dirty:
                st.backoff.k += 1
                _aloha_redraw(st, world.w_max, rng)
                events.append(("collision", i))
            else:
                pkt = st.queue.popleft()
                pkt.departure_slot = world.t
                world.delivered.append(pkt)
                events.append(("delivered", i))
                if st.queue:
                    st.backoff.k = max(st.backoff.k - 1, 0)
                    if st.backoff.k > 0:
                        _aloha_redraw(st, world.w_max, rng)
                    else:
                        st.backoff.pending_backoff = 0
                else:
                    st.backoff.k = 0
                    st.backoff.pending_backoff = 0
    if not active:
        events.append(("idle", -1))
    for st in waiting:
        st.backoff.pending_backoff -= 1
    world.t += 1
    return events


@dataclass
class StackLevel:
    """Virtual stack position of one backlogged station; transmit at 0."""

    level: int = 0


@dataclass
class _StackStation:
    queue: deque = field(default_factory=deque)
    stack: StackLevel = field(default_factory=StackLevel)


@dataclass
class StackWorld:
    rho: int
    stations: list[_StackStation] = field(default_factory=list)
    delivered: list[PacketRecord] = field(default_factory=list)
    round_left: int = 0
    round_set: tuple[int, ...] = ()
    t: int = 0

    def inject(self, records: Sequence[PacketRecord], rng) -> None:
        # free access: new arrivals enter at level 0 right away
        for rec in records:
            st = self.stations[rec.owner]
            if not st.queue:
                st.stack.level = 0
            st.queue.append(rec)


def step_stack_algorithm(world: StackWorld, rng) -> list[tuple[str, int]]:
    """One slot of the non-blocked stack algorithm with rho-slot data rounds.

    Level-0 stations transmit a whole packet; after a collision each
    transmitter stays at level 0 with probability 1/2 (else level 1) and every
    bystander with backlog moves one level deeper; success and idle pop one
    level off the stack. A winner with more backlog re-enters at level 1.
    """
    events = []
    if world.round_left == 0:
        world.round_set = tuple(i for i, st in enumerate(world.stations)
                                if st.queue and st.stack.level == 0)
        world.round_left = world.rho if world.round_set else 1
    if world.round_set:
        events.extend(("data", i) for i in world.round_set)
    else:
        events.append(("idle", -1))
    world.round_left -= 1
    if world.round_left == 0:
        tx = world.round_set
        if len(tx) == 1:
            winner = world.stations[tx[0]]
            pkt = winner.queue.popleft()
            pkt.departure_slot = world.t
            world.delivered.append(pkt)
            events.append(("delivered", tx[0]))
            for i, st in enumerate(world.stations):
                if i not in tx and st.queue and st.stack.level > 0:
                    st.stack.level -= 1
            if winner.queue:
                winner.stack.level = STACK_REENTRY_LEVEL
        elif len(tx) >= 2:
            for i in tx:
                world.stations[i].stack.level = 0 if rng.random() < 0.5 else 1
            for i, st in enumerate(world.stations):
                if i not in tx and st.queue:
                    st.stack.level += 1
        else:
            for st in world.stations:
                if st.queue and st.stack.level > 0:
                    st.stack.level -= 1
        world.round_set = ()
    world.t += 1
    return events


@dataclass
class _CsmaStation:
    queue: deque = field(default_factory=deque)
    backoff: BackoffState = field(default_factory=BackoffState)


@dataclass
class CsmaWorld:
    rho: int
    w_max: int = W_MAX_DEFAULT
    stations: list[_CsmaStation] = field(default_factory=list)
    delivered: list[PacketRecord] = field(default_factory=list)
    data_left: int = 0
    holder: int = -1
    t: int = 0

    def inject(self, records: Sequence[PacketRecord], rng) -> None:
        for rec in records:
            st = self.stations[rec.owner]
            if not st.queue:
                st.backoff.k = 0
                st.backoff.pending_backoff = int(
                    rng.integers(0, csma_backoff_bound(0, self.w_max) + 1))
            st.queue.append(rec)


def step_csma_ca(world: CsmaWorld, rng) -> list[tuple[str, int]]:
    """One slot of RTS/CTS contention: a unique RTS wins the channel for rho
    collision-free data slots during which everyone else freezes; colliding
    RTS packets cost one slot and double the sender's window."""
    events = []
    if world.data_left > 0:
        events.append(("data", world.holder))
        world.data_left -= 1
        if world.data_left == 0:
            st = world.stations[world.holder]
            pkt = st.queue.popleft()
            pkt.departure_slot = world.t
            world.delivered.append(pkt)
            events.append(("delivered", world.holder))
            st.backoff.k = 0
            if st.queue:
                st.backoff.pending_backoff = int(
                    rng.integers(0, csma_backoff_bound(0, world.w_max) + 1))
            world.holder = -1
        world.t += 1
        return events

    contenders = [i for i, st in enumerate(world.stations)
                  if st.queue and st.backoff.pending_backoff == 0]
    if len(contenders) == 1:
        world.holder = contenders[0]
        world.data_left = world.rho
        events.append(("rts", world.holder))
    elif len(contenders) >= 2:
        for i in contenders:
            st = world.stations[i]
            st.backoff.k += 1
            st.backoff.pending_backoff = int(
                rng.integers(0, csma_backoff_bound(st.backoff.k, world.w_max) + 1))
            events.append(("rts_collision", i))
    else:
        events.append(("idle", -1))
    for i, st in enumerate(world.stations):
        if i not in contenders and st.queue and st.backoff.pending_backoff > 0:
            st.backoff.pending_backoff -= 1
    world.t += 1
    return events


_WORLDS = {"aloha": (AlohaWorld, _AlohaStation, step_slotted_aloha),
           "stack": (StackWorld, _StackStation, step_stack_algorithm),
           "csma_ca": (CsmaWorld, _CsmaStation, step_csma_ca)}


def run_benchmark(protocol: str, traffic: TrafficConfig, span_slots: int,
                  seed: int, accounting: SlotAccounting | None = None,
                  w_max: int = W_MAX_DEFAULT,
                  short_aloha_attempts: bool = False) -> Metrics:
    """Run one benchmark protocol over the shared traffic stream."""
    if protocol not in _WORLDS:
        raise ValueError(f"unknown protocol {protocol!r}, expected one of {PROTOCOLS}")
    accounting = accounting or SlotAccounting()
    arrivals = generate_arrivals(
        traffic, span_slots, np.random.default_rng([seed, TRAFFIC_STREAM]))
    rng = np.random.default_rng([seed, _BENCH_STREAM[protocol]])

    world_cls, station_cls, step = _WORLDS[protocol]
    world = world_cls(rho=accounting.rho)
    if protocol == "aloha":
        world.w_max = w_max
        world.short_attempts = short_aloha_attempts
    elif protocol == "csma_ca":
        world.w_max = w_max
    world.stations = [station_cls() for _ in range(traffic.n_terminals)]

    by_slot: dict[int, list[PacketRecord]] = {}
    for rec in arrivals:
        by_slot.setdefault(rec.arrival_slot, []).append(rec)

    for t in range(span_slots):
        world.inject(by_slot.get(t, ()), rng)
        step(world, rng)
    return compute_metrics(arrivals, span_slots, accounting)
