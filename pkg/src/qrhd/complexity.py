"""Query-cost arithmetic for interaction-picture Hamiltonian simulation.

Big-O constants are set to one, so every number below is a relative query
unit; only ratios between scenarios are meaningful.  The cost model splits
the simulation into the sparse block encoding of the kinetic term (n_A
accesses) and the controlled potential-phase walk (n_UB accesses), both
multiplied by the Dyson-series truncation factor and the repetition count
log(1/delta):

    n_query,A  = T sqrt(s alpha_H) log^2(1/eps) dyson log(1/delta)
    n_query,UB = alpha_H V_max [int_0^T a eta dt] T log^2(1/eps) dyson log(1/delta)
    dyson      = log(alpha_H T / eps) / log log(alpha_H T / eps)
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .discretize import assemble_laplace_beltrami, spectral_norm
from .errors import ParameterError


@dataclass
class ComplexityInputs:
    alpha_h: float          # max_t norm of the kinetic term
    v_max: float            # max of the potential over the domain
    schedule: object        # Schedule (a, eta, gamma)
    T: float                # simulation time
    sparsity: int           # max nonzeros per row of the kinetic matrix
    epsilon: float          # evolution error
    delta: float            # failure probability

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0) or not (0.0 < self.delta < 1.0):
            raise ParameterError("epsilon and delta must lie in (0, 1)")
        if self.T <= 0:
            raise ParameterError("simulation time must be positive")
        if self.alpha_h <= 0 or self.v_max <= 0 or self.sparsity <= 0:
            raise ParameterError("alpha_h, v_max and sparsity must be positive")


@dataclass
class QueryReport:
    alpha_h: float
    beta_h: float
    v_max: float
    T: float
    sparsity: int
    epsilon: float
    delta: float
    schedule_integral: float
    dyson_factor: float
    log_eps_sq: float
    log_delta: float
    n_query_a: float
    n_query_ub: float
    n_query_total: float
    alpha_beta_t2: float    # the alpha_H beta_H T^2 scale of the T ~ 1/gamma regime

    def to_dict(self):
        return asdict(self)


def kinetic_norm_bound(chart, grid, mass, schedule, tol=1e-4, t_samples=64,
                       representation="stencil"):
    """alpha_H = max_t (1/a(t)) ||Delta_g|| / (2 m).

    ``representation="stencil"`` measures the assembled finite-difference
    operator by power iteration.  ``representation="momentum"`` takes the
    continuum symbol sup_k g^{ij} k_i k_j over the grid's Nyquist box (the
    norm of the momentum-basis kinetic term a QFT-based implementation
    simulates).  The two differ for metrics with off-diagonal terms: local
    stencils cannot track the mixed-derivative symbol at high wavenumbers,
    so the stencil norm undershoots the momentum-basis norm.
    """
    if mass <= 0:
        raise ParameterError("mass must be positive")
    if representation == "stencil":
        D = assemble_laplace_beltrami(chart, grid)
        base = spectral_norm(D, tol=tol) / (2.0 * mass)
    elif representation == "momentum":
        kmax = np.pi / grid.spacing
        corners = kmax * np.array(
            [[(1 if (m_ >> i) & 1 else -1) for i in range(grid.dim)]
             for m_ in range(2 ** grid.dim)], dtype=float)
        nodes = grid.nodes()
        stride = max(1, nodes.shape[0] // 4096)
        worst = 0.0
        for p in nodes[::stride]:
            ginv = chart.inverse_metric_at(p)
            worst = max(worst, float(np.einsum('ci,ij,cj->c', corners, ginv, corners).max()))
        base = worst / (2.0 * mass)
    else:
        raise ParameterError(f"unknown representation {representation!r}")
    ts = np.linspace(0.0, schedule.t_end, t_samples)
    inv_a = np.array([1.0 / schedule.a_at(t) for t in ts])
    return float(base * inv_a.max())


def measured_sparsity(op):
    """Max number of stored nonzeros per row."""
    m = op.matrix if hasattr(op, "matrix") else op
    csr = m.tocsr()
    return int(np.diff(csr.indptr).max())


def schedule_integral(schedule, T, panels=10_000):
    """int_0^T a(t) eta(t) dt; closed form for the exponential schedule."""
    if T <= 0:
        raise ParameterError("T must be positive")
    gamma = schedule.gamma
    eta0 = schedule.eta_at(0.0)
    if gamma > 0 and _is_exponential(schedule) and _eta_constant(schedule, T):
        return float(eta0 * (np.exp(2.0 * gamma * T) - 1.0) / (2.0 * gamma))
    ts = np.linspace(0.0, T, 2 * panels + 1)
    vals = np.array([schedule.a_at(t) * schedule.eta_at(t) for t in ts])
    h = T / (2 * panels)
    return float(h / 3.0 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum()))


def _is_exponential(schedule, T_check=1.0):
    for t in (0.0, 0.5 * T_check, T_check):
        if abs(schedule.a_at(t) - np.exp(2.0 * schedule.gamma * t)) > 1e-12 * max(
            1.0, np.exp(2.0 * schedule.gamma * t)
        ):
            return False
    return True


def _eta_constant(schedule, T):
    e0 = schedule.eta_at(0.0)
    return all(abs(schedule.eta_at(f * T) - e0) <= 1e-12 * max(1.0, abs(e0)) for f in (0.25, 0.7, 1.0))


def dyson_factor(x):
    """log(x)/loglog(x); requires x > e so the double log is positive."""
    if x <= np.e:
        raise ParameterError("dyson factor requires alpha_H T / epsilon > e")
    lx = np.log(x)
    return float(lx / np.log(lx))


def query_count(inputs):
    """Relative query counts per the interaction-picture cost model."""
    alpha, T, eps, delta = inputs.alpha_h, inputs.T, inputs.epsilon, inputs.delta
    x = alpha * T / eps
    dy = dyson_factor(x)
    le2 = np.log(1.0 / eps) ** 2
    ld = np.log(1.0 / delta)
    integral = schedule_integral(inputs.schedule, T)
    n_a = T * np.sqrt(inputs.sparsity * alpha) * le2 * dy * ld
    n_ub = alpha * inputs.v_max * integral * T * le2 * dy * ld
    ts = np.linspace(0.0, T, 129)
    beta = float(max(inputs.schedule.a_at(t) * inputs.schedule.eta_at(t) for t in ts) * inputs.v_max)
    return QueryReport(
        alpha_h=float(alpha),
        beta_h=beta,
        v_max=float(inputs.v_max),
        T=float(T),
        sparsity=int(inputs.sparsity),
        epsilon=float(eps),
        delta=float(delta),
        schedule_integral=float(integral),
        dyson_factor=float(dy),
        log_eps_sq=float(le2),
        log_delta=float(ld),
        n_query_a=float(n_a),
        n_query_ub=float(n_ub),
        n_query_total=float(n_a + n_ub),
        alpha_beta_t2=float(alpha * beta * T * T),
    )
