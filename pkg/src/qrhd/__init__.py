"""Quantum (Riemannian) Hamiltonian descent simulator.

Continuous optimization as quantum dynamics: the loss is the potential of a
wave function evolving under a curved-space Schrodinger equation with a
dissipative schedule.  The package discretizes the Laplace-Beltrami
operator on stereographic/constant/flat charts, integrates the dynamics
with Crank-Nicolson steps, and analyzes convergence times against
damped-oscillator lower bounds, with the query-cost arithmetic of the
interaction-picture simulation on top.
"""

from .errors import (
    BlowUpError,
    ConvergenceError,
    DomainError,
    DomainExitError,
    NumericError,
    ParameterError,
    PoleSingularityError,
    QrhdError,
    ScheduleError,
    SingularMetricError,
)
from .geometry import (
    ConstantChart,
    CurvatureBundle,
    CustomChart,
    FlatChart,
    MetricChart,
    SphereStereographicChart,
    christoffel,
    curvature_bundle,
    manifold_hessian,
    quantum_corrections,
    ricci_scalar,
    sphere_embed,
    sphere_project,
)
from .discretize import (
    Grid,
    PotentialField,
    Schedule,
    SparseOperator,
    assemble_hamiltonian,
    assemble_laplace_beltrami,
    quadratic_potential,
    spectral_norm,
    sphere_quadratic_potential,
)
from .evolve import (
    CrankNicolsonStepper,
    EvolutionTrace,
    WaveFunction,
    crank_nicolson_step,
    evolve,
    expectation_position,
    init_state,
    weighted_norm,
)
from .semiclassical import (
    RandomInstance,
    SemiclassicalState,
    StudyReport,
    StudyRun,
    Trajectory,
    convergence_bound,
    detect_t_star,
    effective_potential_gradient,
    integrate_eom,
    lambert_w_minus1,
    run_instance_study,
)
from .complexity import (
    ComplexityInputs,
    QueryReport,
    dyson_factor,
    kinetic_norm_bound,
    measured_sparsity,
    query_count,
    schedule_integral,
)

__version__ = "0.1.0"
