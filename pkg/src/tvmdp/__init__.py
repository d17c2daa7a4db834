"""Time-varying MDP planning on grid worlds under time-varying disturbance fields."""

from .disturbance import (
    GriddedFieldSeries,
    SpinningField,
    UniformField,
    VortexField,
    load_field_file,
    make_spinning,
    make_vortex,
    sample_series,
    save_field_file,
)
from .gridworld import GridWorld
from .sim import RunMetrics, Scenario, Trajectory, aggregate, rollout
from .solvers import (
    ATMDPOptions,
    Policy,
    RewardModel,
    TVMDPOptions,
    atmdp_solve,
    dtmdp_solve,
    solve_mdp,
    tvmdp_solve,
)
from .timing import MultiHopEstimator, SolverError, SolverOptions, multi_hop_times, one_hop_table
from .transition import NoiseConfig, action_pmfs

__version__ = "0.1.0"
