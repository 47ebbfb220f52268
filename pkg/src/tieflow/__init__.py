"""tieflow: stochastic tie-line interchange scheduling for multi-area grids.

Library layout:

- netmodel: case data model, loading/validation, DC shift factors
- qpsolve: strictly convex QP solver with exact dual recovery
- dispatch: regional economic dispatch and proxy-bus pricing
- stochastic: net-load uncertainty, scenario sets, sample-average estimates
- scheduler: single-interface optimization, sibis / aibis / ce runs
- oracle: grid-search optimality oracle, envelope and convexity probes
- cli: `tieflow run | oracle | compare`
"""

from .netmodel import (Area, Branch, Bus, CaseSystem, Generator, Interface,
                       ShiftFactors, CaseError, ParseError, ValidationError,
                       NetworkError, build_case, compute_all_shift_factors,
                       compute_shift_factors, load_case, project_interchange)
from .qpsolve import (KktReport, NonConvexError, IterationLimitError,
                      QpSolution, QuadraticProgram, check_kkt,
                      detect_degeneracy, solve_qp)
from .dispatch import (AreaDispatcher, DispatchInfeasibleError,
                       DispatchSolution, build_dispatch_qp, build_dispatchers,
                       solve_dispatch, total_cost, worker_count)
from .stochastic import (EstimateUnreliableError, InjectionDistribution,
                         NetLoadModel, ScenarioSet, TruncationError,
                         expected_cost, expected_lmp, expected_price_gap,
                         models_for_horizon, sample_scenarios)
from .scheduler import (ScheduleTrace, SchedulerConfig, TraceRecord,
                        optimize_interface, run_aibis, run_ce, run_sibis)
from .oracle import (CostMap, DegeneratePointError, EnvelopeReport,
                     GridInfeasibleError, GridSpec, convexity_probe,
                     envelope_check, grid_search)

__version__ = "0.1.0"
