from .coupling import decompose, escape_stats, run_coupled
from .delay import DelaySchedule, enumerate_delays, from_live_trace, generate
from .diagnostics import (
    check_descent_inequality,
    check_local_inequality,
    classify_blocks,
    count_kinds,
    descent_experiment,
    extract_second_order_point,
    tl2_experiment,
)
from .engine import replay, run, run_live, run_synchronous, step
from .errors import (
    ApsgdError,
    ConvergenceError,
    DelayCapError,
    DivergenceError,
    InfeasibleParamsError,
    PreconditionError,
    ScheduleError,
)
from .experiments import ExperimentConfig, execute, load_config, report, sweep
from .oracles import (
    StochasticOracle,
    finite_sum,
    make_objective,
    min_eig,
    quadratic,
    saddle2d,
    sample_gradient,
)
from .params import (
    BaseConfig,
    HyperParams,
    check_conditions,
    derive_params,
    feasible_search,
)
from .tds import (
    MatrixFundamentalSolution,
    check_growth,
    fundamental_solution,
    lyapunov_trace,
    razumikhin_verify,
    rough_growth,
    simulate_linear,
)
