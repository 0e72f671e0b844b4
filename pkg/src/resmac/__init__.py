"""Tree-splitting reservation MAC: channel model, belief planner, simulator."""

from .belief import (
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
from .benchmarks import run_benchmark
from .genie import (
    ConvergenceError,
    GenieValueFunction,
    bellman_backup,
    expected_slots_uniform_policy,
    lift,
    singleton_shortcut,
    solve_via,
)
from .model import (
    ActionVector,
    ModelConfig,
    Observation,
    Occupancy,
    ReducedOccupancy,
    action_grid,
    count_via_updates,
    enumerate_occupancies,
    enumerate_reduced_states,
    full_state_count,
    observation_probability,
    partition_count,
    reduce_occupancy,
    sample_step,
    successor_distribution,
    transition_probability,
)
from .policy import GeniePolicy, TablePolicy
from .rtdp import (
    TrialResult,
    ValueTable,
    init_value,
    rtdp_backup,
    run_trial,
    train,
)
from .sim import (
    FramePlan,
    Metrics,
    PacketRecord,
    SlotAccounting,
    TrafficConfig,
    active_count_distribution,
    compute_metrics,
    generate_arrivals,
    run_reservation_cycle,
    run_simulation,
)

__version__ = "0.1.0"
