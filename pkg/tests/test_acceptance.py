"""End-to-end acceptance suite; prints one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``. The heavy fixtures
(training runs, 20000-slot sweeps) are shared across criteria, so the whole
module is designed to run in one pytest session.
"""
import math
import time

import numpy as np
import pytest

from resmac.belief import BeliefState, build_initial_belief, is_lone_terminal_belief
from resmac.benchmarks import run_benchmark
from resmac.genie import solve_via
from resmac.model import (
    ModelConfig,
    Observation,
    ReducedOccupancy,
    action_grid,
    count_via_updates,
    enumerate_occupancies,
    enumerate_reduced_states,
    observation_probability,
    reduce_occupancy,
    sample_step,
    successor_distribution,
    transition_probability,
)
from resmac.policy import GeniePolicy, TablePolicy
from resmac.rtdp import ValueTable, rtdp_backup, train
from resmac.sim import (
    FramePlan,
    SlotAccounting,
    TrafficConfig,
    check_fifo,
    run_reservation_cycle,
    run_simulation,
)
from tests.oracles import full_state_value_iteration

CFG = ModelConfig(n_max=5, m_cap=15)
B0_PROFILE = (0.1, 0.1, 0.3, 0.3, 0.2)


def report(criterion: int, ok: bool, detail: str) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE CRITERION {criterion}: {verdict} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def genie15():
    return solve_via(CFG, d=15, support_limit=2, epsilon=1e-6)


@pytest.fixture(scope="module")
def policy_table(genie10):
    """Table trained for the closed-loop comparison runs."""
    table = ValueTable(q=10, d=10, support_limit=2, init_mode="genie", genie=genie10)
    b0 = build_initial_belief(B0_PROFILE)
    train(table, b0, 1500, np.random.default_rng([0, 7]), CFG)
    return table


@pytest.fixture(scope="module")
def sweep_data(policy_table):
    """All closed-loop runs for criteria 7 and 8, paired by seed."""
    seeds = (0, 1, 2, 3, 4)
    t0 = time.perf_counter()
    data = {"gamma": {}, "tau": {}, "logs": [], "seeds": seeds}

    def proposed(lam, frames, rho, seed):
        log = []
        metrics = run_simulation(TrafficConfig(lam=lam), frames,
                                 SlotAccounting(rho=rho),
                                 TablePolicy(policy_table.copy(), CFG),
                                 20000, seed, CFG, packet_log=log)
        data["logs"].append(log)
        return metrics

    for seed in seeds:
        for lam in (0.05, 0.30):
            m = proposed(lam, FramePlan("dynamic"), 3, seed)
            data["gamma"][("proposed", lam, "dynamic", seed)] = m.gamma
            for proto in ("aloha", "stack", "csma_ca"):
                mb = run_benchmark(proto, TrafficConfig(lam=lam), 20000, seed,
                                   SlotAccounting(rho=3))
                data["gamma"][(proto, lam, "dynamic", seed)] = mb.gamma
        for T in (20, 100, 400):
            m = proposed(0.30, FramePlan("fixed", T=T), 3, seed)
            data["gamma"][("proposed", 0.30, f"fixed{T}", seed)] = m.gamma
        for rho in (2, 3, 6):
            m = proposed(0.10, FramePlan("dynamic"), rho, seed)
            data["tau"][(rho, seed)] = m.tau
    data["elapsed"] = time.perf_counter() - t0
    return data


def mean_over_seeds(gamma, key_prefix, seeds):
    return float(np.mean([gamma[(*key_prefix, s)] for s in seeds]))


class TestCriterion1:
    def test_genie_closed_forms(self):
        t0 = time.perf_counter()
        gvf = solve_via(ModelConfig(n_max=5, m_cap=15), d=10, support_limit=2,
                        epsilon=1e-6)
        elapsed = time.perf_counter() - t0
        singletons_exact = all(
            gvf.values[s] == float(sum(s))
            for s in enumerate_reduced_states(5) if all(c == 1 for c in s))
        pair = gvf.values[ReducedOccupancy((2,))]
        action = tuple(gvf.policy[ReducedOccupancy((2,))])
        ok = (singletons_exact and abs(pair - 3.0) <= 1e-6
              and action == (0.5,) and elapsed < 60)
        report(1, ok, f"singleton values exact, V(pair)={pair:.9f} "
                      f"(|err|={abs(pair - 3.0):.1e}), action={action}, "
                      f"solved in {elapsed:.2f}s")


class TestCriterion2:
    def test_reduction_counts(self):
        n_states = len(enumerate_reduced_states(5))
        counts = count_via_updates(5)
        ok = n_states == 18 and counts == (31, 18)
        report(2, ok, f"18 canonical states, backup counts {counts}")


class TestCriterion3:
    def test_full_state_oracle_equivalence(self):
        t0 = time.perf_counter()
        worst = 0.0
        for n_max in (1, 2, 3):
            gvf = solve_via(ModelConfig(n_max=n_max, m_cap=9), d=10,
                            support_limit=2, epsilon=1e-9)
            raw = full_state_value_iteration(n_max, 3, d=10, support_limit=2,
                                             epsilon=1e-9)
            for s, v in raw.items():
                worst = max(worst, abs(v - gvf.values[reduce_occupancy(s)]))
        elapsed = time.perf_counter() - t0
        ok = worst <= 1e-6 and elapsed < 300
        report(3, ok, f"raw ordered-state solve matches canonical solve, "
                      f"sup diff {worst:.2e}, {elapsed:.1f}s")


class TestCriterion4:
    def test_lone_terminal_closed_form(self, genie10):
        table = ValueTable(q=10, d=10, support_limit=2, init_mode="genie",
                           genie=genie10)
        rng = np.random.default_rng(123)
        t0 = time.perf_counter()
        checked = 0
        ok = True
        while checked < 50:
            m = int(rng.integers(1, 5))
            states = [tuple(1 if j == i else 0 for j in range(m))
                      for i in range(m)]
            if rng.random() < 0.5:
                states.append((0,) * m)
            keep = sorted(rng.choice(len(states),
                                     size=int(rng.integers(1, len(states) + 1)),
                                     replace=False))
            chosen = [states[i] for i in keep]
            if not any(sum(s) == 1 for s in chosen):
                continue
            probs = rng.random(len(chosen))
            probs /= probs.sum()
            belief = BeliefState(dict(zip(chosen, probs)))
            assert is_lone_terminal_belief(belief)
            action, value = rtdp_backup(belief, table, CFG)
            _a2, v2 = rtdp_backup(belief, table, CFG, support_limit=None,
                                  shortcut=False)
            ok = ok and value == 1.0 and all(p == 1.0 for p in action) and v2 == 1.0
            checked += 1
        elapsed = time.perf_counter() - t0
        report(4, ok, f"50 lone-terminal beliefs: value exactly 1.0, "
                      f"all-transmit action, unconstrained search agrees "
                      f"({elapsed:.1f}s)")


class TestCriterion5:
    def family(self):
        for m in (1, 2, 3):
            yield from enumerate_occupancies(5, m)

    def test_kernel_property_suite(self):
        t0 = time.perf_counter()
        d = 4
        worst_joint = 0.0
        deterministic = True
        for s in self.family():
            for action in action_grid(len(s), d, support_limit=None):
                successors = {nxt for (nxt, _o) in
                              successor_distribution(s, action, CFG)}
                total = sum(
                    transition_probability(s, nxt, action, CFG) *
                    sum(observation_probability(o, s, nxt) for o in Observation)
                    for nxt in successors)
                worst_joint = max(worst_joint, abs(total - 1.0))
            for nxt in {n for (n, _o) in
                        successor_distribution(s, (0.5,) * len(s), CFG)}:
                fires = [o for o in Observation
                         if observation_probability(o, s, nxt) == 1.0]
                deterministic = deterministic and len(fires) == 1

        mc_ok = True
        rng = np.random.default_rng(2024)
        for s, action in [((2, 1), (0.5, 0.25)), ((3,), (0.75,)),
                          ((1, 1, 2), (0.25, 0.0, 0.5))]:
            n = 100_000
            counts = {}
            for _ in range(n):
                nxt, o = sample_step(s, action, rng, CFG)
                counts[(tuple(nxt), o)] = counts.get((tuple(nxt), o), 0) + 1
            for key, p in successor_distribution(s, action, CFG).items():
                se = math.sqrt(p * (1 - p) / n)
                mc_ok = mc_ok and abs(counts.get(key, 0) / n - p) <= 3 * se + 1e-9
        elapsed = time.perf_counter() - t0
        ok = worst_joint <= 1e-12 and deterministic and mc_ok and elapsed < 120
        report(5, ok, f"joint kernel normalized within {worst_joint:.1e}, "
                      f"deterministic feedback, Monte Carlo within 3 sigma "
                      f"({elapsed:.1f}s)")


class TestCriterion6:
    def test_training_reproduction(self, genie15):
        t0 = time.perf_counter()
        b0 = build_initial_belief(B0_PROFILE)

        # long-run learned cost at the fine action grid
        table = ValueTable(q=10, d=15, support_limit=2, init_mode="genie",
                           genie=genie15)
        records = train(table, b0, 4000, np.random.default_rng([0, 7]), CFG)
        slots = [r.result.slots_used for r in records]
        long_run = float(np.mean(slots[-400:]))

        # fully informed baseline over sampled cycles
        rng = np.random.default_rng([1, 7])
        support = list(b0.items())
        cumulative = np.cumsum([p for _s, p in support])
        genie_policy = GeniePolicy(genie15)
        total = 0
        n_cycles = 5000
        for _ in range(n_cycles):
            pick = int(np.searchsorted(cumulative, rng.random(), side="right"))
            k = sum(support[min(pick, len(support) - 1)][0])
            cycle = run_reservation_cycle(list(range(k)), genie_policy, b0,
                                          rng, CFG)
            total += cycle.slots_used
        genie_mean = total / n_cycles

        # pre-training dominance at trial 200 (40-trial window, 10 runs)
        genie_ma, zero_ma = [], []
        for seed in range(10):
            for init, sink in (("genie", genie_ma), ("zero", zero_ma)):
                tbl = ValueTable(q=10, d=10, support_limit=2, init_mode=init,
                                 genie=genie15 if init == "genie" else None)
                recs = train(tbl, b0, 200, np.random.default_rng([seed, 7]), CFG)
                sink.append(np.mean([r.result.slots_used for r in recs[160:200]]))
        dominance = float(np.mean(genie_ma)) < float(np.mean(zero_ma))

        elapsed = time.perf_counter() - t0
        ok = (6.0 <= long_run <= 8.2 and 4.9 <= genie_mean <= 5.9
              and dominance and elapsed < 1800)
        report(6, ok, f"learned long-run cost {long_run:.2f} in [6.0, 8.2], "
                      f"genie-aided mean {genie_mean:.2f} in [4.9, 5.9], "
                      f"pre-training MA40@200 {np.mean(genie_ma):.2f} < "
                      f"no-pre-training {np.mean(zero_ma):.2f} ({elapsed:.0f}s)")


class TestCriterion7:
    def test_throughput_and_delay_orderings(self, sweep_data):
        seeds = sweep_data["seeds"]
        gamma = sweep_data["gamma"]

        light = {p: mean_over_seeds(gamma, (p, 0.05, "dynamic"), seeds)
                 for p in ("proposed", "aloha", "stack", "csma_ca")}
        light_ok = all(abs(g - 0.15) <= 0.1 * 0.15 for g in light.values())

        heavy = {p: mean_over_seeds(gamma, (p, 0.30, "dynamic"), seeds)
                 for p in ("proposed", "aloha", "stack", "csma_ca")}
        bench = {p: heavy[p] for p in ("aloha", "stack", "csma_ca")}
        heavy_ok = all(heavy["proposed"] > g for g in bench.values())
        aloha_min_ok = bench["aloha"] == min(bench.values())

        dyn = mean_over_seeds(gamma, ("proposed", 0.30, "dynamic"), seeds)
        fixed = {T: mean_over_seeds(gamma, ("proposed", 0.30, f"fixed{T}"), seeds)
                 for T in (20, 100, 400)}
        frames_ok = all(dyn >= g for g in fixed.values())

        tau = {rho: float(np.mean([sweep_data["tau"][(rho, s)] for s in seeds]))
               for rho in (2, 3, 6)}
        tau_ok = tau[2] < tau[3] < tau[6]

        elapsed = sweep_data["elapsed"]
        ok = (light_ok and heavy_ok and aloha_min_ok and frames_ok and tau_ok
              and elapsed < 1200)
        report(7, ok,
               f"light load gammas {light} all within 10% of 0.15; "
               f"heavy load {heavy} (proposed max, aloha min); "
               f"dynamic {dyn:.3f} >= fixed {fixed}; "
               f"delay rises with rho {tau} ({elapsed:.0f}s)")


class TestCriterion8:
    def test_fifo_across_all_runs(self, sweep_data):
        violations = sum(0 if check_fifo(log) else 1 for log in sweep_data["logs"])
        ok = violations == 0 and len(sweep_data["logs"]) >= 40
        report(8, ok, f"zero frame-order violations across "
                      f"{len(sweep_data['logs'])} closed-loop runs")


class TestCriterion9:
    def test_bit_identical_reruns(self, genie10, tmp_path):
        b0 = build_initial_belief(B0_PROFILE)

        metrics = []
        for _ in range(2):
            table = ValueTable(q=10, d=10, support_limit=2, init_mode="genie",
                               genie=genie10)
            train(table, b0, 60, np.random.default_rng([3, 7]), CFG)
            metrics.append(run_simulation(TrafficConfig(lam=0.30),
                                          FramePlan("dynamic"),
                                          SlotAccounting(rho=3),
                                          TablePolicy(table, CFG),
                                          8000, 5, CFG))
        sims_equal = metrics[0] == metrics[1]

        exports = []
        for i in range(2):
            table = ValueTable(q=10, d=10, support_limit=2, init_mode="genie",
                               genie=genie10)
            train(table, b0, 120, np.random.default_rng([4, 7]), CFG)
            path = tmp_path / f"table{i}.json"
            table.save(path)
            exports.append(path.read_bytes())
        tables_equal = exports[0] == exports[1]

        genie_paths = [tmp_path / f"g{i}.json" for i in range(2)]
        for p in genie_paths:
            solve_via(CFG, d=10, support_limit=2, epsilon=1e-6).save(p)
        genies_equal = genie_paths[0].read_bytes() == genie_paths[1].read_bytes()

        ok = sims_equal and tables_equal and genies_equal
        report(9, ok, "repeated runs bit-identical: metrics, trained table "
                      "exports, solver exports")
