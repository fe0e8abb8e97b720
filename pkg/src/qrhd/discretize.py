"""Grids and sparse discrete operators.

The kinetic operator is the divergence-form finite-difference
Laplace-Beltrami operator

    (D psi)(x) = (1/sqrt(g)) sum_ij d_i ( sqrt(g) g^{ij} d_j psi )

with homogeneous Dirichlet boundary (psi clamped to zero on the boundary
nodes and outside).  Every flux coefficient F^{ij} = sqrt(g) g^{ij} is
evaluated at the midpoint of the two nodes it couples, which makes the
assembled matrix D satisfy the weighted-symmetry identity W D = (W D)^T
with W = diag(sqrt(g) * prod h).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, ParameterError, ScheduleError, SingularMetricError


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid over a box, row-major linear indexing."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)
        object.__setattr__(self, 'shape', tuple(int(n) for n in self.shape))
        if len(self.shape) != lo.size or lo.size != hi.size:
            raise ParameterError("grid shape and box dimensions disagree")
        if any(n < 3 for n in self.shape):
            raise ParameterError("need at least 3 nodes per axis")
        if np.any(hi <= lo):
            raise ParameterError("grid box must have hi > lo")

    @classmethod
    def for_chart(cls, chart, nodes_per_axis):
        if np.isscalar(nodes_per_axis):
            shape = (int(nodes_per_axis),) * chart.dim
        else:
            shape = tuple(int(n) for n in nodes_per_axis)
        return cls(chart.lo, chart.hi, shape)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return (self.hi - self.lo) / (np.array(self.shape) - 1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [np.linspace(self.lo[i], self.hi[i], self.shape[i]) for i in range(self.dim)]

    def nodes(self):
        """All node coordinates as an (M, dim) array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def boundary_mask(self):
        """Boolean length-M mask of boundary nodes."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask.ravel()

    def ravel_index(self, multi_index):
        return int(np.ravel_multi_index(multi_index, self.shape))


@dataclass
class SparseOperator:
    """Square sparse operator with a weighted-symmetry tag and text export."""

    matrix: sp.csr_matrix
    weighted_symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix)
        return self.matrix @ other

    def to_coo_text(self):
        """One "row col real imag" line per stored entry."""
        coo = self.matrix.tocoo()
        lines = []
        for r, c, v in zip(coo.row, coo.col, coo.data):
            z = complex(v)
            lines.append(f"{r} {c} {z.real:.17g} {z.imag:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coo_text(cls, text, shape=None):
        rows, cols, vals = [], [], []
        for line in text.strip().splitlines():
            r, c, re_, im_ = line.split()
            rows.append(int(r)); cols.append(int(c))
            vals.append(float(re_) + 1j * float(im_))
        vals = np.asarray(vals)
        if np.all(vals.imag == 0):
            vals = vals.real
        if shape is None:
            n = max(max(rows), max(cols)) + 1
            shape = (n, n)
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr())


@dataclass
class PotentialField:
    """Scalar potential with optional analytic gradient and cached node values."""

    fn: object
    gradient_fn: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    def value_at(self, point):
        return float(np.real(self.fn(np.asarray(point))))

    def __call__(self, point):
        return self.fn(np.asarray(point))

    def gradient_at(self, point, step=None):
        p = np.asarray(point)
        if self.gradient_fn is not None:
            return np.asarray(self.gradient_fn(p))
        h = 1e-6 if step is None else step
        out = np.empty(p.size, dtype=complex)
        for i in range(p.size):
            ep = p.astype(complex).copy(); ep[i] += h
            em = p.astype(complex).copy(); em[i] -= h
            out[i] = (self.fn(ep) - self.fn(em)) / (2 * h)
        if np.all(out.imag == 0):
            return out.real
        return out

    def node_values(self, grid):
        key = id(grid)
        if key not in self._cache:
            vals = np.array([self.value_at(p) for p in grid.nodes()])
            if not np.all(np.isfinite(vals)):
                raise ParameterError("potential not finite at every grid node")
            self._cache[key] = vals
        return self._cache[key]


def quadratic_potential(matrix, mass):
    """V(x) = (mass/2) x^T A x with analytic gradient."""
    A = np.asarray(matrix, dtype=float)
    if not np.allclose(A, A.T, atol=1e-12):
        raise ParameterError("quadratic potential matrix must be symmetric")

    def value(x):
        return 0.5 * mass * (x @ (A @ x))

    def grad(x):
        return mass * (A @ x)

    return PotentialField(value, grad)


def sphere_quadratic_potential(matrix, mass, chart):
    """Ambient quadratic V(x) = (mass/2) x^T A x pulled back to a sphere chart."""
    A = np.asarray(matrix, dtype=float)
    if not np.allclose(A, A.T, atol=1e-12):
        raise ParameterError("quadratic potential matrix must be symmetric")

    R = chart.radius
    sign = 1.0 if chart.pole == "south" else -1.0
    n_amb = chart.ambient_dim

    def embed(v):
        s = (v @ v) / R**2
        x = np.empty(n_amb, dtype=v.dtype)
        x[:-1] = 2.0 * v / (1.0 + s)
        x[-1] = sign * R * (1.0 - s) / (1.0 + s)
        return x

    def value(v):
        x = embed(np.asarray(v))
        return 0.5 * mass * (x @ (A @ x))

    def grad(v):
        v = np.asarray(v)
        s = (v @ v) / R**2
        den = 1.0 + s
        x = embed(v)
        ax = mass * (A @ x)
        # J[a, i] = d x^a / d v^i
        Jtop = 2.0 * np.eye(v.size, dtype=v.dtype) / den - 4.0 * np.multiply.outer(v, v) / (R**2 * den**2)
        Jlast = -sign * 4.0 * v / (R * den**2)
        return Jtop.T @ ax[:-1] + Jlast * ax[-1]

    return PotentialField(value, grad)


@dataclass
class Schedule:
    """Time-dependent coefficients a(t), eta(t) and friction gamma.

    ``gamma`` is meaningful when a(t) = exp(2 gamma t); the exponential
    schedule is the package default.
    """

    a: object
    eta: object
    gamma: float = 0.0
    t_end: float = 1.0
    dt: float = 1e-2

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if self.t_end < self.dt:
            raise ParameterError("t_end must be at least dt")
        if self.a_at(0.0) <= 0:
            raise ScheduleError("a(0) must be positive")

    @classmethod
    def exponential(cls, gamma, eta=1.0, t_end=1.0, dt=1e-2):
        eta_val = float(eta)
        return cls(a=lambda t: np.exp(2.0 * gamma * t), eta=lambda t: eta_val,
                   gamma=float(gamma), t_end=float(t_end), dt=float(dt))

    def a_at(self, t):
        val = float(self.a(t) if callable(self.a) else self.a)
        return val

    def eta_at(self, t):
        return float(self.eta(t) if callable(self.eta) else self.eta)


def assemble_laplace_beltrami(chart, grid, return_weights=False):
    """Divergence-form Laplace-Beltrami operator on the grid.

    Every coupling between a node pair carries the flux coefficient
    sqrt(g) g^{ij} evaluated at the arithmetic mean of the two node
    coordinates; mixed derivatives are discretized as flux differences along
    the two diagonals of each axis pair.  Boundary rows and columns are zero
    (homogeneous Dirichlet; the wave function is clamped to zero outside).

    Returns a real ``SparseOperator`` D.  With W = diag(sqrt(g) * prod h)
    the product W D is symmetric.  With ``return_weights`` the sqrt(g) node
    array is returned as well.
    """
    if grid.dim != chart.dim:
        raise ParameterError("grid and chart dimensions disagree")
    if np.any(grid.lo < chart.lo - 1e-12) or np.any(grid.hi > chart.hi + 1e-12):
        raise ParameterError("grid box must lie inside the chart domain")
    shape = grid.shape
    dim = grid.dim
    h = grid.spacing
    nodes = grid.nodes()

    sqrt_g = chart.sqrt_det_many(nodes)
    if np.any(sqrt_g <= 0) or not np.all(np.isfinite(sqrt_g)):
        raise SingularMetricError("sqrt(det g) must be positive and finite on the grid")

    interior_flat = ~grid.boundary_mask()
    nodes_nd = nodes.reshape(shape + (dim,))
    interior = interior_flat.reshape(shape)
    lin = np.arange(grid.size).reshape(shape)

    rows = []
    cols = []
    vals = []
    center = np.zeros(grid.size)

    def slab(offset):
        """Index arrays (A, B) of all node pairs separated by `offset`."""
        src = tuple(slice(None, -o) if o > 0 else (slice(-o, None) if o < 0 else slice(None))
                    for o in offset)
        dst = tuple(slice(o, None) if o > 0 else (slice(None, o) if o < 0 else slice(None))
                    for o in offset)
        return src, dst

    def add_edges(offset, i, j, scale):
        src, dst = slab(offset)
        A = lin[src].ravel()
        B = lin[dst].ravel()
        mids = 0.5 * (nodes_nd[src].reshape(-1, dim) + nodes_nd[dst].reshape(-1, dim))
        F = chart.volume_inverse_metric_many(mids)
        if not np.all(np.isfinite(F)):
            raise SingularMetricError("metric singular at a cell face")
        C = scale * F[:, i, j]
        mA = interior.ravel()[A]
        mB = interior.ravel()[B]
        both = mA & mB
        rows.append(A[both]); cols.append(B[both]); vals.append(C[both])
        rows.append(B[both]); cols.append(A[both]); vals.append(C[both])
        np.subtract.at(center, A[mA], C[mA])
        np.subtract.at(center, B[mB], C[mB])

    for i in range(dim):
        offset = [0] * dim
        offset[i] = 1
        add_edges(offset, i, i, 1.0 / h[i] ** 2)
    for i in range(dim):
        for j in range(i + 1, dim):
            denom = 2.0 * h[i] * h[j]
            offset = [0] * dim
            offset[i] = 1; offset[j] = 1
            add_edges(offset, i, j, 1.0 / denom)
            offset[j] = -1
            add_edges(offset, i, j, -1.0 / denom)

    diag_idx = np.where(interior_flat)[0]
    rows.append(diag_idx); cols.append(diag_idx); vals.append(center[diag_idx])
    S = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    S.sum_duplicates()
    inv_sg = sp.diags(np.where(interior_flat, 1.0 / sqrt_g, 0.0))
    D = SparseOperator((inv_sg @ S).tocsr(), weighted_symmetric=True)
    if return_weights:
        return D, sqrt_g
    return D


def hamiltonian_coefficients(schedule, t, mass):
    """Scalar prefactors (kinetic, potential) of H(t)."""
    a = schedule.a_at(t)
    if a <= 0:
        raise ScheduleError(f"a({t}) = {a} must be positive")
    eta = schedule.eta_at(t)
    return 1.0 / (a * 2.0 * mass), a * eta


def assemble_hamiltonian(chart, grid, potential, schedule, t, mass,
                         include_weyl_correction=False, laplace_op=None):
    """H(t) = -(1/a) D / (2m) + a eta diag(V) [+ (1/a) diag(dV) optionally].

    The optional correction term is the ordering correction delta_v + its
    trace part, carrying the same 1/a(t) prefactor as the kinetic term.  It
    is off by default: the simulated Hamiltonian already contains the full
    Laplace-Beltrami operator, and the correction belongs to its rewriting
    in momentum-ordered form.
    """
    ck, cv = hamiltonian_coefficients(schedule, t, mass)
    D = laplace_op if laplace_op is not None else assemble_laplace_beltrami(chart, grid)
    Vd = potential.node_values(grid)
    H = (-ck) * D.matrix + sp.diags(cv * Vd)
    if include_weyl_correction:
        from .geometry import quantum_corrections
        corr = np.zeros(grid.size)
        interior = ~grid.boundary_mask()
        for k, p in enumerate(grid.nodes()):
            if interior[k]:
                dv, _ = quantum_corrections(chart, p, mass)
                corr[k] = dv
        H = H + sp.diags((ck * 2.0 * mass) * corr)  # (1/a) diag(dV)
    return SparseOperator(H.tocsr(), weighted_symmetric=True)


def spectral_norm(op, tol=1e-6, max_iterations=10_000):
    """Largest singular value by power iteration on A^H A.

    Deterministic all-ones start vector; relative tolerance on successive
    estimates.  Raises ``ConvergenceError`` carrying the last iterate if the
    tolerance is not met within ``max_iterations``.
    """
    A = op.matrix if isinstance(op, SparseOperator) else op
    if A.shape[0] != A.shape[1]:
        raise ParameterError("spectral_norm expects a square operator")
    AH = A.conjugate().T.tocsr()
    v = np.ones(A.shape[1], dtype=A.dtype) / np.sqrt(A.shape[1])
    est = 0.0
    for _ in range(max_iterations):
        w = AH @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new_est = np.sqrt(nw)
        v = w / nw
        if abs(new_est - est) <= tol * new_est:
            return float(new_est)
        est = new_est
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iterations} iterations",
        last_iterate=est,
    )
