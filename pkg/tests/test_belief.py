import numpy as np
import pytest

from resmac.belief import (
    BeliefState,
    InconsistentObservationError,
    QuantizedBelief,
    belief_update,
    build_initial_belief,
    is_lone_terminal_belief,
    is_target,
    observation_likelihood,
    quantize,
)
from resmac.model import ModelConfig, Observation, successor_distribution

CFG = ModelConfig(n_max=5, m_cap=15)


class TestBeliefState:
    def test_validation(self):
        with pytest.raises(ValueError):
            BeliefState({(1,): 0.5, (2,): 0.2})  # mass != 1
        with pytest.raises(ValueError):
            BeliefState({(1,): 0.5, (1, 1): 0.5})  # cluster counts differ
        with pytest.raises(ValueError):
            BeliefState({})

    def test_canonical_order_and_render(self):
        b = BeliefState({(3,): 0.7, (1,): 0.3})
        assert [tuple(s) for s in b.states()] == [(1,), (3,)]
        assert b.render() == "{(1):0.3,(3):0.7}"

    def test_m_shared(self):
        assert BeliefState({(1, 2): 1.0}).m_shared == 2


class TestBeliefUpdate:
    def test_sure_success(self):
        b = BeliefState({(1,): 1.0})
        out = belief_update(b, (1.0,), Observation.SUCCESS, CFG)
        assert out.prob((0,)) == 1.0

    def test_success_filters_to_lone_branch(self):
        b = BeliefState({(1,): 0.5, (2,): 0.5})
        out = belief_update(b, (1.0,), Observation.SUCCESS, CFG)
        assert out.prob((0,)) == pytest.approx(1.0)

    def test_collision_filters_to_pair_branch(self):
        b = BeliefState({(1,): 0.5, (2,): 0.5})
        out = belief_update(b, (1.0,), Observation.COLLISION, CFG)
        assert out.prob((0, 2)) == pytest.approx(1.0)
        assert out.m_shared == 2

    def test_zero_likelihood_raises(self):
        b = BeliefState({(1,): 0.5, (2,): 0.5})
        with pytest.raises(InconsistentObservationError):
            belief_update(b, (1.0,), Observation.IDLE, CFG)

    def test_cluster_count_evolution_respects_cap(self):
        tight = ModelConfig(n_max=5, m_cap=2)
        b = BeliefState({(1, 2): 1.0})
        out = belief_update(b, (0.0, 1.0), Observation.COLLISION, tight)
        assert out.m_shared == 2
        assert out.prob((1, 2)) == pytest.approx(1.0)

    def test_drained_state_survives_pruning(self):
        # mass far below the dust threshold, kept because it is the goal
        b = BeliefState({(0,): 1e-14, (5,): 1.0 - 1e-14})
        out = belief_update(b, (0.2,), Observation.IDLE, CFG)
        assert out.prob((0,)) > 0.0


class TestObservationLikelihood:
    def test_examples(self):
        assert observation_likelihood(
            BeliefState({(1,): 1.0}), (1.0,), Observation.SUCCESS, CFG) == pytest.approx(1.0)
        assert observation_likelihood(
            BeliefState({(2,): 1.0}), (0.5,), Observation.SUCCESS, CFG) == pytest.approx(0.5)
        assert observation_likelihood(
            BeliefState({(1,): 0.5, (2,): 0.5}), (1.0,), Observation.IDLE, CFG) == 0.0

    def test_likelihoods_sum_to_one(self):
        rng = np.random.default_rng(5)
        beliefs = [
            BeliefState({(1,): 0.25, (2,): 0.5, (4,): 0.25}),
            BeliefState({(1, 1): 0.4, (0, 2): 0.6}),
            BeliefState({(2, 1, 0): 0.3, (1, 1, 1): 0.2, (0, 0, 3): 0.5}),
        ]
        for b in beliefs:
            action = tuple(rng.integers(0, 5, size=b.m_shared) / 4)
            total = sum(observation_likelihood(b, action, o, CFG) for o in Observation)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_chain_rule(self):
        # prior pushed through the kernel equals the likelihood-weighted
        # mixture of posteriors
        b = BeliefState({(2, 0): 0.3, (1, 1): 0.3, (0, 2): 0.4})
        action = (0.5, 0.25)
        pushed = {}
        for s, p in b.items():
            for (nxt, _o), tp in successor_distribution(s, action, CFG).items():
                pushed[nxt] = pushed.get(nxt, 0.0) + p * tp
        mixed = {}
        for o in Observation:
            lik = observation_likelihood(b, action, o, CFG)
            if lik <= 0:
                continue
            post = belief_update(b, action, o, CFG)
            for s, p in post.items():
                mixed[tuple(s)] = mixed.get(tuple(s), 0.0) + lik * p
        for key in pushed:
            assert mixed.get(key, 0.0) == pytest.approx(pushed[key], abs=1e-9)


class TestQuantize:
    def test_rounding(self):
        b = BeliefState({(1,): 0.26, (2,): 0.74})
        assert quantize(b, 10).entries == (((1,), 3), ((2,), 7))

    def test_drops_zero_entries(self):
        b = BeliefState({(1,): 0.04, (2,): 0.96})
        assert quantize(b, 10).entries == (((2,), 10),)

    def test_coarsest_grid(self):
        b = BeliefState({(1,): 0.3, (2,): 0.3, (3,): 0.4})
        qb = quantize(b, 1)
        assert all(n in (0, 1) for _s, n in qb.entries)

    def test_ties_round_away_from_zero(self):
        b = BeliefState({(1,): 0.25, (2,): 0.75})
        assert quantize(b, 2).entries == (((1,), 1), ((2,), 2))

    def test_key_equality_and_hash(self):
        a = QuantizedBelief((((1,), 3), ((2,), 7)), 10)
        b = QuantizedBelief((((1,), 3), ((2,), 7)), 10)
        assert a == b and hash(a) == hash(b)
        assert a != QuantizedBelief((((1,), 3),), 10)

    def test_stability_under_small_perturbation(self):
        # equal keys whenever every entry moves less than half a grid cell
        # and no entry sits on a rounding boundary
        rng = np.random.default_rng(9)
        q = 10
        for _ in range(50):
            n = int(rng.integers(2, 5))
            raw = rng.random(n)
            probs = raw / raw.sum()
            margins = np.abs(np.mod(probs * q, 1.0) - 0.5) / q
            amp = 0.8 * min(margins.min(), 1.0 / (2 * q))
            if amp <= 0:
                continue
            noise = rng.uniform(-amp, amp, size=n)
            noise -= noise.mean()  # keep the perturbed belief normalized
            if np.abs(noise).max() >= margins.min():
                continue
            states = [(k + 1,) for k in range(n)]
            b = BeliefState(dict(zip(states, probs)))
            b2 = BeliefState(dict(zip(states, probs + noise)))
            assert quantize(b, q) == quantize(b2, q)

    def test_numerators_need_not_sum_to_q(self):
        b = BeliefState({(1,): 0.44, (2,): 0.28, (3,): 0.28})
        qb = quantize(b, 10)
        assert sum(n for _s, n in qb.entries) == 10  # 4 + 3 + 3
        b2 = BeliefState({(1,): 0.26, (2,): 0.26, (3,): 0.48})
        assert sum(n for _s, n in quantize(b2, 10).entries) == 11


class TestRecognizers:
    def test_lone_terminal_examples(self):
        assert is_lone_terminal_belief(BeliefState({(0, 1): 0.4, (1, 0): 0.6}))
        assert not is_lone_terminal_belief(BeliefState({(1, 1): 1.0}))
        assert not is_lone_terminal_belief(BeliefState({(0,): 1.0}))

    def test_target_examples(self):
        assert is_target(BeliefState({(0, 0): 1.0}))
        assert not is_target(BeliefState({(0,): 0.999, (1,): 0.001}))
        assert is_target(BeliefState({(): 1.0}))


class TestBuildInitialBelief:
    def test_default_profile(self):
        b = build_initial_belief([0.1, 0.1, 0.3, 0.3, 0.2])
        assert b.m_shared == 1
        assert b.prob((3,)) == pytest.approx(0.3)
        assert b.prob((0,)) == 0.0

    def test_point_mass(self):
        b = build_initial_belief([1.0])
        assert b.prob((1,)) == 1.0

    def test_include_zero_remainder(self):
        b = build_initial_belief([0.2, 0.3], include_zero=True)
        assert b.prob((0,)) == pytest.approx(0.5)

    def test_zero_state_always_present_with_include_zero(self):
        b = build_initial_belief([0.5, 0.5], include_zero=True)
        assert b.prob((0,)) > 0.0

    def test_rejects_bad_mass(self):
        with pytest.raises(ValueError):
            build_initial_belief([0.5, 0.6])
        with pytest.raises(ValueError):
            build_initial_belief([-0.1, 1.1])
        with pytest.raises(ValueError):
            build_initial_belief([0.5])  # mass missing without include_zero
