import numpy as np
import pytest
import scipy.sparse as sp

from qrhd import (
    FlatChart,
    Grid,
    ParameterError,
    PotentialField,
    Schedule,
    SparseOperator,
    SphereStereographicChart,
    WaveFunction,
    assemble_hamiltonian,
    assemble_laplace_beltrami,
    crank_nicolson_step,
    evolve,
    expectation_position,
    init_state,
    quadratic_potential,
    weighted_norm,
)

A1 = np.array([[1.0, -0.9], [-0.9, 1.0]])


def flat_grid(dim=1, n=5, width=None):
    w = (n - 1.0) if width is None else width
    chart = FlatChart(dim, domain=(np.zeros(dim), w * np.ones(dim)))
    return chart, Grid.for_chart(chart, n)


def test_uniform_state_amplitude():
    chart, grid = flat_grid(1, 5)          # h = 1, three interior nodes
    psi = init_state(grid, chart, "uniform")
    assert psi.values[0] == 0 and psi.values[-1] == 0
    assert np.allclose(psi.values[1:4], 1 / np.sqrt(3))
    assert weighted_norm(psi) == pytest.approx(1.0, abs=1e-12)


def test_random_state_deterministic_and_normalized():
    chart, grid = flat_grid(2, 9)
    a = init_state(grid, chart, "random", seed=7)
    b = init_state(grid, chart, "random", seed=7)
    assert np.array_equal(a.values, b.values)
    c = init_state(grid, chart, "random", seed=8)
    assert not np.array_equal(a.values, c.values)
    assert weighted_norm(a) == pytest.approx(1.0, abs=1e-12)


def test_gaussian_state_weighted_norm_on_sphere():
    chart = SphereStereographicChart(3, 1.0, pole="south")
    grid = Grid.for_chart(chart, 33)
    psi = init_state(grid, chart, "gaussian", center=[0.1, -0.2], width=0.2)
    assert weighted_norm(psi) == pytest.approx(1.0, abs=1e-12)


def test_random_smooth_state_seeded():
    chart = SphereStereographicChart(3, 1.0, pole="south")
    grid = Grid.for_chart(chart, 33)
    a = init_state(grid, chart, "random-smooth", seed=3, smooth_length=0.25)
    b = init_state(grid, chart, "random-smooth", seed=3, smooth_length=0.25)
    assert np.array_equal(a.values, b.values)
    assert weighted_norm(a) == pytest.approx(1.0, abs=1e-12)


def test_init_state_validation():
    chart, grid = flat_grid(1, 5)
    with pytest.raises(ParameterError):
        init_state(grid, chart, "gaussian", width=0.0)
    with pytest.raises(ParameterError):
        init_state(grid, chart, "no-such-kind")


def test_cn_step_identity_for_zero_hamiltonian():
    chart, grid = flat_grid(1, 7)
    psi = init_state(grid, chart, "random", seed=1)
    H0 = SparseOperator(sp.csr_matrix((7, 7)))
    out = crank_nicolson_step(psi, H0, 0.37)
    assert np.array_equal(out.values, psi.values)


def test_cn_step_diagonal_cayley_phase():
    chart, grid = flat_grid(1, 9)
    psi = init_state(grid, chart, "random", seed=2)
    E = np.linspace(-2.0, 3.0, 9)
    H = SparseOperator(sp.diags(E).tocsr())
    dt = 0.05
    out = crank_nicolson_step(psi, H, dt)
    expected = psi.values * (1 - 0.5j * dt * E) / (1 + 0.5j * dt * E)
    assert np.abs(out.values - expected).max() < 1e-13


def test_cn_ground_state_is_stationary():
    # discrete harmonic well; its ground state should only acquire phase
    chart = FlatChart(1, domain=(-6.0 * np.ones(1), 6.0 * np.ones(1)))
    grid = Grid.for_chart(chart, 129)
    pot = PotentialField(lambda x: 0.5 * float(x[0]) ** 2)
    sched = Schedule(a=lambda t: 1.0, eta=lambda t: 1.0, t_end=1.0, dt=0.01)
    H = assemble_hamiltonian(chart, grid, pot, sched, 0.0, mass=1.0)
    evals, evecs = np.linalg.eigh(H.matrix.toarray())
    ground = evecs[:, 0].astype(complex)
    psi0 = WaveFunction(ground, grid, chart).normalized()
    psi = psi0
    for _ in range(100):
        psi = crank_nicolson_step(psi, H, 0.01)
    overlap = np.sum(psi0.weights * np.conj(psi0.values) * psi.values)
    assert abs(abs(overlap) - 1.0) < 1e-6


def test_time_reversal_with_frozen_hamiltonian():
    chart, grid = flat_grid(2, 17)
    pot = quadratic_potential(A1, 0.1)
    sched = Schedule.exponential(gamma=0.25, eta=0.1, t_end=1.0, dt=0.01)
    H = assemble_hamiltonian(chart, grid, pot, sched, 0.4, mass=0.1)
    psi = init_state(grid, chart, "random", seed=11)
    fwd = crank_nicolson_step(psi, H, 0.02)
    back = crank_nicolson_step(fwd, H, -0.02)
    assert np.abs(back.values - psi.values).max() < 1e-9


def test_evolve_matches_manual_stepping():
    chart = FlatChart(2)
    grid = Grid.for_chart(chart, 13)
    pot = quadratic_potential(A1, 0.1)
    sched = Schedule.exponential(gamma=0.25, eta=0.1, t_end=0.05, dt=0.01)
    initial = init_state(grid, chart, "random", seed=5)
    trace = evolve(chart, grid, pot, sched, initial,
                   sample_times=[0.05], mass=0.1)
    psi = initial
    for k in range(5):
        t_mid = k * 0.01 + 0.005
        H = assemble_hamiltonian(chart, grid, pot, sched, t_mid, mass=0.1)
        psi = crank_nicolson_step(psi, H, 0.01)
    assert np.abs(trace.positions[-1] - psi.expectation_position()).max() < 1e-10


def test_norm_conservation_and_dissipation_proxy():
    chart = SphereStereographicChart(3, 1.0, pole="south")
    grid = Grid.for_chart(chart, 33)
    from qrhd import sphere_quadratic_potential
    A2 = np.array([[1, 0, -1 / np.sqrt(2)], [0, 1, -1 / np.sqrt(2)],
                   [-1 / np.sqrt(2), -1 / np.sqrt(2), 1.0]])
    pot = sphere_quadratic_potential(A2, 1.0, chart)
    sched = Schedule.exponential(gamma=0.25, eta=1.0, t_end=6.0, dt=0.01)
    initial = init_state(grid, chart, "random-smooth", seed=4, smooth_length=0.3)
    trace = evolve(chart, grid, pot, sched, initial, mass=1.0)
    assert trace.norm_drift() < 1e-6
    nodes = grid.nodes()
    w = chart.sqrt_det_many(nodes) * grid.cell_volume

    def variance(density, center):
        p = w * density.ravel()
        p = p / p.sum()
        return float(p @ np.sum((nodes - center) ** 2, axis=1))

    # dissipative schedule concentrates the density over the run
    sched2 = Schedule.exponential(gamma=0.25, eta=1.0, t_end=6.0, dt=0.01)
    tr2 = evolve(chart, grid, pot, sched2, initial, sample_times=[0.0, 6.0],
                 frame_times=[0.0, 6.0], mass=1.0)
    v0 = variance(tr2.frames[0][1], tr2.positions[0])
    v1 = variance(tr2.frames[-1][1], tr2.positions[-1])
    assert v1 < v0


def test_no_force_keeps_centroid_and_norm():
    chart = FlatChart(2)
    grid = Grid.for_chart(chart, 33)
    pot = quadratic_potential(np.eye(2), 1.0)
    sched = Schedule(a=lambda t: 1.0, eta=lambda t: 0.0, t_end=0.5, dt=0.01,
                     gamma=0.0)
    initial = init_state(grid, chart, "gaussian", center=[0.0, 0.0], width=0.22)
    trace = evolve(chart, grid, pot, sched, initial, mass=1.0)
    assert trace.norm_drift() < 1e-8
    assert np.abs(trace.positions - trace.positions[0]).max() < 1e-10


def test_dt_refinement_second_order():
    chart = FlatChart(2)
    grid = Grid.for_chart(chart, 33)
    pot = quadratic_potential(A1, 0.1)
    initial = init_state(grid, chart, "gaussian", center=[0.3, -0.2], width=0.2)
    finals = []
    for dt in (0.04, 0.02, 0.01):
        sched = Schedule.exponential(gamma=0.25, eta=0.1, t_end=2.0, dt=dt)
        tr = evolve(chart, grid, pot, sched, initial, sample_times=[2.0], mass=0.1)
        finals.append(tr.positions[-1])
    d1 = np.linalg.norm(finals[0] - finals[1])
    d2 = np.linalg.norm(finals[1] - finals[2])
    assert d2 < d1 / 4.0 * 4.0  # the next halving shrinks the change
    assert d2 <= d1             # and monotonically so


def test_expectation_position_special_states():
    chart = FlatChart(2)
    grid = Grid.for_chart(chart, 41)
    psi = init_state(grid, chart, "gaussian", center=[0.25, -0.125], width=0.08)
    assert np.abs(expectation_position(psi) - [0.25, -0.125]).max() < 1e-10
    # delta-like state
    vals = np.zeros(grid.size, complex)
    k = grid.ravel_index((13, 27))
    vals[k] = 1.0
    delta = WaveFunction(vals, grid, chart).normalized()
    assert np.allclose(expectation_position(delta), grid.nodes()[k])
    assert weighted_norm(delta) == pytest.approx(1.0, abs=1e-12)


def test_first_crossing_interpolates():
    from qrhd.evolve import EvolutionTrace

    times = np.array([0.0, 1.0, 2.0])
    pos = np.array([[1.0, 0.0], [0.5, 0.0], [0.1, 0.0]])
    tr = EvolutionTrace(times, pos, np.ones(3))
    t = tr.first_crossing(0.3)
    assert 1.0 < t < 2.0
    assert tr.first_crossing(0.01) is None
