"""Closed-loop slotted simulation of reservation-based medium access.

Terminals accumulate Poisson packet arrivals; at each frame start, terminals
holding pre-frame backlog contend in a tree-splitting reservation cycle whose
winner order fixes a FIFO transmission schedule. Data packets then occupy
``rho`` slots each. Frames either have a fixed length (the reservation pauses
any ongoing transmission and it resumes afterwards) or start dynamically
whenever the transmission queue drains.

One slot carries one reservation packet plus its feedback; a data packet of
``rho`` slots is measured in the same unit. The finish signal that lets every
terminal track queue departures rides along with the final data slot by
default (``piggyback``); a ``dedicated`` mode charges one extra slot per
packet instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .belief import BeliefState, belief_update, build_initial_belief
from .model import ModelConfig, Observation, Occupancy

TRAFFIC_STREAM = 101
PROTOCOL_STREAM = 202


@dataclass(frozen=True)
class TrafficConfig:
    """Aggregate Poisson arrivals split evenly over the terminals."""

    lam: float
    n_terminals: int = 5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("arrival rate must be non-negative")
        if self.n_terminals < 1:
            raise ValueError("need at least one terminal")

    @property
    def lam_per_terminal(self) -> float:
        return self.lam / self.n_terminals


@dataclass(frozen=True)
class FramePlan:
    mode: str = "dynamic"
    T: int | None = None

    def __post_init__(self):
        if self.mode not in ("dynamic", "fixed"):
            raise ValueError(f"unknown frame mode {self.mode!r}")
        if self.mode == "fixed" and (self.T is None or self.T < 1):
            raise ValueError("fixed frames need T >= 1")


@dataclass(frozen=True)
class SlotAccounting:
    """rho = data-packet duration in reservation-slot units."""

    rho: int = 3
    finish_mode: str = "piggyback"

    def __post_init__(self):
        if self.rho < 1:
            raise ValueError("rho must be at least 1")
        if self.finish_mode not in ("piggyback", "dedicated"):
            raise ValueError(f"unknown finish mode {self.finish_mode!r}")

    @property
    def slots_per_packet(self) -> int:
        return self.rho + (1 if self.finish_mode == "dedicated" else 0)


@dataclass
class PacketRecord:
    arrival_slot: int
    owner: int
    frame_of_arrival: int | None = None
    departure_slot: int | None = None


@dataclass(frozen=True)
class Metrics:
    """Throughput and delay summary of one run.

    ``gamma`` is channel utilization by delivered data (rho * packets per
    slot); ``gamma_raw`` is plain packets per slot. ``tau`` is the mean of
    departure minus arrival over delivered packets, None when nothing was
    delivered.
    """

    delivered_packets: int
    generated_packets: int
    total_slots: int
    gamma: float
    gamma_raw: float
    tau: float | None
    reservation_slots_per_frame: tuple[int, ...] = ()
    frames_completed: int = 0


def generate_arrivals(traffic: TrafficConfig, span_slots: int, rng) -> list[PacketRecord]:
    """Per-slot, per-terminal Poisson arrivals over the whole run."""
    if span_slots < 1:
        raise ValueError("span must be at least 1")
    if traffic.lam == 0:
        return []
    counts = rng.poisson(traffic.lam_per_terminal,
                         size=(span_slots, traffic.n_terminals))
    records = []
    for t, tid in zip(*np.nonzero(counts)):
        for _ in range(counts[t, tid]):
            records.append(PacketRecord(int(t), int(tid)))
    records.sort(key=lambda r: (r.arrival_slot, r.owner))
    return records


def active_count_distribution(lam_per_terminal: float, window_slots: int,
                              n_terminals: int) -> np.ndarray:
    """Distribution of how many terminals receive at least one packet within
    a window: binomial with per-terminal hit probability 1 - exp(-rate*T)."""
    if lam_per_terminal < 0 or window_slots < 0:
        raise ValueError("rate and window must be non-negative")
    p_hit = -math.expm1(-lam_per_terminal * window_slots)
    return np.array([math.comb(n_terminals, k) * p_hit**k *
                     (1.0 - p_hit) ** (n_terminals - k)
                     for k in range(n_terminals + 1)])


@dataclass(frozen=True)
class CycleResult:
    winner_order: tuple[int, ...]
    slots_used: int
    completed: bool = True


class CycleConsistencyError(AssertionError):
    """Distributed bookkeeping diverged from the shared belief evolution."""


def run_reservation_cycle(active_ids: Sequence[int], policy, b0: BeliefState,
                          rng, cfg: ModelConfig, max_slots: int | None = None,
                          on_slot: Callable[[int | None], None] | None = None) -> CycleResult:
    """Drive one contention cycle slot by slot.

    Every terminal keeps its own cluster index while the belief is evaluated
    once (identical feedback implies identical beliefs); the true occupancy
    must stay inside the belief support, which is asserted each slot.
    """
    cluster_of = {tid: 0 for tid in sorted(active_ids)}
    n_clusters = 1
    belief = b0
    winners: list[int] = []
    slots = 0
    while True:
        counts = [0] * n_clusters
        for c in cluster_of.values():
            counts[c] += 1
        truth = Occupancy(counts)
        if belief.m_shared != n_clusters:
            raise CycleConsistencyError(
                f"terminal cluster count {n_clusters} != belief {belief.m_shared}")
        if belief.prob(truth) <= 0.0:
            raise CycleConsistencyError(
                f"true occupancy {truth} has zero belief probability")
        if policy.finished(belief, truth):
            return CycleResult(tuple(winners), slots, True)
        if max_slots is not None and slots >= max_slots:
            return CycleResult(tuple(winners), slots, False)
        action = policy.action(belief, truth)
        transmitters = [tid for tid in cluster_of
                        if rng.random() < action[cluster_of[tid]]]
        obs = Observation.for_transmitter_count(len(transmitters))
        slots += 1
        if obs is Observation.SUCCESS:
            winner = transmitters[0]
            winners.append(winner)
            del cluster_of[winner]
            if on_slot:
                on_slot(winner)
        else:
            if obs is Observation.COLLISION and n_clusters < cfg.m_cap:
                n_clusters += 1
                for tid in transmitters:
                    cluster_of[tid] = n_clusters - 1
            if on_slot:
                on_slot(None)
        belief = belief_update(belief, action, obs, cfg)


class _Run:
    """Mutable bookkeeping for one simulation."""

    def __init__(self, traffic, accounting, policy, span, seed, cfg, events):
        self.traffic = traffic
        self.accounting = accounting
        self.policy = policy
        self.span = span
        self.cfg = cfg
        self.events = events
        self.rng = np.random.default_rng([seed, PROTOCOL_STREAM])
        self.arrivals = generate_arrivals(
            traffic, span, np.random.default_rng([seed, TRAFFIC_STREAM]))
        self.arrival_ptr = 0
        self.pending: dict[int, list[PacketRecord]] = {
            tid: [] for tid in range(traffic.n_terminals)}
        self.queue: list[tuple[int, list[PacketRecord]]] = []
        self.in_flight: tuple[int, PacketRecord, int] | None = None
        self.t = 0
        self.frame_id = 0
        self.reservation_log: list[int] = []

    def log(self, kind: str, terminal: int = -1):
        if self.events is not None:
            self.events.append((self.t, kind, self.frame_id, terminal))

    def inject_upto(self, slot_exclusive: int):
        while (self.arrival_ptr < len(self.arrivals)
               and self.arrivals[self.arrival_ptr].arrival_slot < slot_exclusive):
            rec = self.arrivals[self.arrival_ptr]
            self.pending[rec.owner].append(rec)
            self.arrival_ptr += 1

    def initial_belief(self, window: int) -> BeliefState:
        if window == 0 or self.traffic.lam == 0:
            return BeliefState({(0,): 1.0})
        dist = active_count_distribution(self.traffic.lam_per_terminal, window,
                                         self.traffic.n_terminals)
        return build_initial_belief(dist[1:], include_zero=True)

    def reserve(self, window: int) -> int:
        """Run the frame-start contention; enqueue winner backlogs in order."""
        if self.reservation_log:
            self.frame_id += 1  # data slots keep the id of their own frame
        frame_start = self.t
        self.inject_upto(frame_start)
        contenders = sorted(tid for tid, lst in self.pending.items() if lst)
        belief0 = self.initial_belief(window)
        base = self.t

        def on_slot(winner):
            if self.events is not None:
                self.events.append((base + on_slot.count, "reserve",
                                    self.frame_id, -1 if winner is None else winner))
            on_slot.count += 1
        on_slot.count = 0

        cycle = run_reservation_cycle(contenders, self.policy, belief0, self.rng,
                                      self.cfg, max_slots=self.span - self.t,
                                      on_slot=on_slot)
        self.t += cycle.slots_used
        self.reservation_log.append(cycle.slots_used)
        if not cycle.completed:
            return cycle.slots_used
        for tid in cycle.winner_order:
            batch = self.pending[tid]
            self.pending[tid] = []
            for pkt in batch:
                pkt.frame_of_arrival = self.frame_id
            self.queue.append((tid, batch))
        return cycle.slots_used

    def serve_one_slot(self) -> bool:
        """Advance one slot of data transmission. False when queue is empty."""
        if self.in_flight is None:
            while self.queue and not self.queue[0][1]:
                self.queue.pop(0)
            if not self.queue:
                return False
            tid, batch = self.queue[0]
            pkt = batch.pop(0)
            self.in_flight = (tid, pkt, self.accounting.slots_per_packet)
        tid, pkt, remaining = self.in_flight
        self.log("data", tid)
        remaining -= 1
        self.t += 1
        if remaining == 0:
            pkt.departure_slot = self.t - 1
            self.log("finish", tid)
            self.in_flight = None
        else:
            self.in_flight = (tid, pkt, remaining)
        return True

    def queue_busy(self) -> bool:
        return self.in_flight is not None or any(batch for _tid, batch in self.queue)


def run_simulation(traffic: TrafficConfig, frames: FramePlan,
                   accounting: SlotAccounting, policy, span_slots: int,
                   seed: int, cfg: ModelConfig,
                   events: list | None = None,
                   packet_log: list | None = None) -> Metrics:
    """Simulate ``span_slots`` slots of the reservation protocol end to end.

    ``events`` collects (slot, kind, frame, terminal) rows; ``packet_log``
    receives every generated packet record for post-hoc audits.
    """
    if cfg.n_max < traffic.n_terminals:
        raise ValueError("model n_max must cover the terminal count")
    run = _Run(traffic, accounting, policy, span_slots, seed, cfg, events)

    if frames.mode == "dynamic":
        prev_frame_start = 0
        first = True
        while run.t < span_slots:
            frame_start = run.t
            window = 0 if first else frame_start - prev_frame_start
            first = False
            res_slots = run.reserve(window)
            served = False
            while run.queue_busy() and run.t < span_slots:
                run.serve_one_slot()
                served = True
            if res_slots == 0 and not served:
                run.log("idle")
                run.t += 1
            prev_frame_start = frame_start
    else:
        T = frames.T
        last_reservation_at = -1
        first = True
        while run.t < span_slots:
            if run.t % T == 0 and run.t != last_reservation_at:
                last_reservation_at = run.t
                # nothing precedes the first frame, so its window is empty
                run.reserve(0 if first else T)
                first = False
                continue
            if not run.serve_one_slot():
                run.log("idle")
                run.t += 1

    if packet_log is not None:
        packet_log.extend(run.arrivals)
    return compute_metrics(run.arrivals, span_slots, accounting,
                           reservation_log=run.reservation_log,
                           frames_completed=len(run.reservation_log))


def compute_metrics(records: Sequence[PacketRecord], total_slots: int,
                    accounting: SlotAccounting,
                    reservation_log: Sequence[int] = (),
                    frames_completed: int = 0) -> Metrics:
    """Summarize throughput and delay from the packet log."""
    delivered = [r for r in records
                 if r.departure_slot is not None and r.departure_slot < total_slots]
    gamma_raw = len(delivered) / total_slots
    tau = (sum(r.departure_slot - r.arrival_slot for r in delivered) / len(delivered)
           if delivered else None)
    return Metrics(delivered_packets=len(delivered),
                   generated_packets=len(records),
                   total_slots=total_slots,
                   gamma=accounting.rho * gamma_raw,
                   gamma_raw=gamma_raw,
                   tau=tau,
                   reservation_slots_per_frame=tuple(reservation_log),
                   frames_completed=frames_completed)


def check_fifo(records: Sequence[PacketRecord]) -> bool:
    """Delivered packets depart in the order of their contention frames."""
    delivered = sorted((r for r in records if r.departure_slot is not None),
                       key=lambda r: r.departure_slot)
    frames = [r.frame_of_arrival for r in delivered]
    return all(frames[i] <= frames[i + 1] for i in range(len(frames) - 1))
