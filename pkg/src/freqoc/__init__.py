"""freqoc: discrete-time trajectory optimization with pointwise and
DFT-band constraints, and first-order optimality certificates.

Subpackage map:

* :mod:`freqoc.problem` - problem model (dynamics/cost oracles, specs)
* :mod:`freqoc.spectrum` - DFT band constraints and the ideal filter
* :mod:`freqoc.cones` - tangent/normal cone calculus on an analytic catalog
* :mod:`freqoc.lift` - the stacked static form of a trajectory problem
* :mod:`freqoc.solver` - active-set LQ and augmented-Lagrangian solvers
* :mod:`freqoc.certificate` - residual checks of the optimality conditions
* :mod:`freqoc.models` - ready-made example problems
* :mod:`freqoc.cli` - batch driver
"""

from .certificate import CertificateOptions, CertificateReport, certify
from .cones import Ball, Box, EpigraphCone, HalfspaceIntersection, Singleton, Whole
from .models import (
    BuckParams,
    PendulumParams,
    buck_problem,
    example2_problem,
    filter_baseline,
    pendulum_problem,
    zoh_discretize,
)
from .problem import (
    DynamicsOracle,
    ProblemSpec,
    QuadraticStageCost,
    QuadraticTerminalCost,
    StageCostOracle,
    TerminalCostOracle,
    Trajectory,
    simulate,
    total_cost,
    validate,
)
from .solver import (
    Multipliers,
    Solution,
    SolverFailure,
    SolverOptions,
    adjoint_recursion_smooth,
    solve,
    solve_general,
    solve_lq,
)
from .spectrum import (
    BannedBinSet,
    FrequencyConstraint,
    build_band_constraint,
    component_spectrum,
    constraint_residual,
    dft_matrix,
    ideal_filter,
)

__version__ = "0.1.0"
