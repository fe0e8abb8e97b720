"""Hot integration kernels for the sphere-chart instance study.

The random-instance study integrates hundreds of damped trajectories with a
fixed-step RK4 loop; that loop is the package's dominant numeric cost.  Two
interchangeable implementations live here:

  - a numba ``@njit`` kernel looping instances and steps, and
  - a pure-numpy fallback vectorized across the instance axis.

Set the environment variable ``QRHD_DISABLE_NUMBA=1`` to force the numpy
path (the switch is read at call time).  Both paths use the closed-form
conformal-chart geometry: metric exp(xi) I with xi = 2 log(2/(1+s)),
s = |v|^2/R^2; geometric coefficients are evaluated at Re(v) while the
scalar force fields are continued to complex v.  The ordering correction
for this chart reduces to the linear function of s

    dV + dV' = (-6 d^2 + 4 d + (8 - 2 d^2) s) / (32 m R^2),

so its gradient is (4 - d^2) v / (8 m R^4).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def numba_enabled():
    if not _HAVE_NUMBA:
        return False
    flag = os.environ.get("QRHD_DISABLE_NUMBA", "")
    return flag in ("", "0")


def _rhs_batch(pos, vel, t, A, R, mass, eta, gamma, corrections, log_measure):
    """Batched acceleration; pos/vel are (n, d) complex, A is (n, d+1, d+1)."""
    d = pos.shape[1]
    R2 = R * R
    w = pos.real
    sw = np.sum(w * w, axis=1) / R2
    b = -4.0 * w / (R2 * (1.0 + sw))[:, None]          # grad xi at Re(v)
    einv = ((1.0 + sw) / 2.0) ** 2                     # e^{-xi} at Re(v)

    # Gamma^i_jk vdot^j vdot^k for the conformal connection
    bdotv = np.sum(b * vel, axis=1)
    v2 = np.sum(vel * vel, axis=1)
    gam_term = bdotv[:, None] * vel - 0.5 * v2[:, None] * b

    # ambient quadratic pulled back: grad_i V = J^T (m A x), analytic in v
    sc = np.sum(pos * pos, axis=1) / R2
    den = 1.0 + sc
    xtop = 2.0 * pos / den[:, None]
    xN = R * (1.0 - sc) / den
    axtop = mass * (np.einsum('nab,nb->na', A[:, :d, :d], xtop)
                    + A[:, :d, d] * xN[:, None])
    axN = mass * (np.einsum('nb,nb->n', A[:, d, :d], xtop) + A[:, d, d] * xN)
    pos_dot_ax = np.sum(pos * axtop, axis=1)
    grad = (2.0 / den)[:, None] * axtop \
        - (4.0 * pos / (R2 * den**2)[:, None]) * pos_dot_ax[:, None] \
        - (4.0 * pos / (R * den**2)[:, None]) * axN[:, None]

    a_t = np.exp(2.0 * gamma * t)
    if corrections:
        slope = (4.0 - d * d) / (8.0 * mass * R2 * R2)
        grad = grad + (slope / (eta * a_t * a_t)) * pos
    if log_measure:
        gxi_c = -4.0 * pos / (R2 * (1.0 + sc))[:, None]
        grad = grad - (0.5j * d / (eta * a_t)) * gxi_c

    acc = -(gam_term + 2.0 * gamma * vel + (eta / mass) * einv[:, None] * grad)
    return acc


def _integrate_batch_numpy(pos0, vel0, A, R, mass, eta, gamma, dt, n_steps,
                           stride, halfwidth, corrections, log_measure):
    n, d = pos0.shape
    pos = pos0.astype(complex).copy()
    vel = vel0.astype(complex).copy()
    n_samples = n_steps // stride + 1
    positions = np.empty((n, n_samples, d), dtype=complex)
    exit_sample = np.full(n, -1, dtype=np.int64)
    positions[:, 0] = pos

    def check(sample_idx):
        bad = (np.max(np.abs(pos.real), axis=1) > halfwidth) | ~np.isfinite(
            pos.real
        ).all(axis=1)
        newly = bad & (exit_sample < 0)
        exit_sample[newly] = sample_idx

    check(0)
    t = 0.0
    for k in range(n_steps):
        k1p = vel
        k1v = _rhs_batch(pos, vel, t, A, R, mass, eta, gamma, corrections, log_measure)
        p2 = pos + 0.5 * dt * k1p
        v2 = vel + 0.5 * dt * k1v
        k2p = v2
        k2v = _rhs_batch(p2, v2, t + 0.5 * dt, A, R, mass, eta, gamma, corrections, log_measure)
        p3 = pos + 0.5 * dt * k2p
        v3 = vel + 0.5 * dt * k2v
        k3p = v3
        k3v = _rhs_batch(p3, v3, t + 0.5 * dt, A, R, mass, eta, gamma, corrections, log_measure)
        p4 = pos + dt * k3p
        v4 = vel + dt * k3v
        k4p = v4
        k4v = _rhs_batch(p4, v4, t + dt, A, R, mass, eta, gamma, corrections, log_measure)
        pos = pos + (dt / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        vel = vel + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += dt
        if (k + 1) % stride == 0:
            idx = (k + 1) // stride
            positions[:, idx] = pos
            check(idx)
    return positions, exit_sample


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _rhs_one(pos, vel, t, A, R, mass, eta, gamma, corrections, log_measure):
        d = pos.shape[0]
        R2 = R * R
        sw = 0.0
        for i in range(d):
            sw += pos[i].real * pos[i].real
        sw /= R2
        einv = ((1.0 + sw) / 2.0) ** 2

        bdotv = 0.0 + 0.0j
        v2 = 0.0 + 0.0j
        for i in range(d):
            bi = -4.0 * pos[i].real / (R2 * (1.0 + sw))
            bdotv += bi * vel[i]
            v2 += vel[i] * vel[i]

        sc = 0.0 + 0.0j
        for i in range(d):
            sc += pos[i] * pos[i]
        sc /= R2
        den = 1.0 + sc
        xN = R * (1.0 - sc) / den

        axtop = np.empty(d, dtype=np.complex128)
        for a in range(d):
            acc = A[a, d] * xN
            for bcol in range(d):
                acc += A[a, bcol] * (2.0 * pos[bcol] / den)
            axtop[a] = mass * acc
        axN = A[d, d] * xN
        for bcol in range(d):
            axN += A[d, bcol] * (2.0 * pos[bcol] / den)
        axN *= mass

        pos_dot_ax = 0.0 + 0.0j
        for i in range(d):
            pos_dot_ax += pos[i] * axtop[i]

        a_t = np.exp(2.0 * gamma * t)
        slope = (4.0 - d * d) / (8.0 * mass * R2 * R2)
        out = np.empty(d, dtype=np.complex128)
        for i in range(d):
            grad_i = (2.0 / den) * axtop[i] \
                - (4.0 * pos[i] / (R2 * den * den)) * pos_dot_ax \
                - (4.0 * pos[i] / (R * den * den)) * axN
            if corrections:
                grad_i += (slope / (eta * a_t * a_t)) * pos[i]
            if log_measure:
                gxi_c = -4.0 * pos[i] / (R2 * (1.0 + sc))
                grad_i += -0.5j * d / (eta * a_t) * gxi_c
            bi = -4.0 * pos[i].real / (R2 * (1.0 + sw))
            gam_i = bdotv * vel[i] - 0.5 * v2 * bi
            out[i] = -(gam_i + 2.0 * gamma * vel[i] + (eta / mass) * einv * grad_i)
        return out

    @numba.njit(cache=True)
    def _integrate_batch_njit(pos0, vel0, A, R, mass, eta, gamma, dt, n_steps,
                              stride, halfwidth, corrections, log_measure):
        n, d = pos0.shape
        n_samples = n_steps // stride + 1
        positions = np.empty((n, n_samples, d), dtype=np.complex128)
        exit_sample = np.full(n, -1, dtype=np.int64)
        for inst in range(n):
            Ai = A[inst]
            pos = pos0[inst].astype(np.complex128)
            vel = vel0[inst].astype(np.complex128)
            positions[inst, 0] = pos
            bad = False
            for i in range(d):
                if abs(pos[i].real) > halfwidth or not np.isfinite(pos[i].real):
                    bad = True
            if bad:
                exit_sample[inst] = 0
            t = 0.0
            for k in range(n_steps):
                k1v = _rhs_one(pos, vel, t, Ai, R, mass, eta, gamma, corrections, log_measure)
                p2 = pos + 0.5 * dt * vel
                v2 = vel + 0.5 * dt * k1v
                k2v = _rhs_one(p2, v2, t + 0.5 * dt, Ai, R, mass, eta, gamma, corrections, log_measure)
                p3 = pos + 0.5 * dt * v2
                v3 = vel + 0.5 * dt * k2v
                k3v = _rhs_one(p3, v3, t + 0.5 * dt, Ai, R, mass, eta, gamma, corrections, log_measure)
                p4 = pos + dt * v3
                v4 = vel + dt * k3v
                k4v = _rhs_one(p4, v4, t + dt, Ai, R, mass, eta, gamma, corrections, log_measure)
                pos = pos + (dt / 6.0) * (vel + 2.0 * v2 + 2.0 * v3 + v4)
                vel = vel + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
                t += dt
                if (k + 1) % stride == 0:
                    idx = (k + 1) // stride
                    positions[inst, idx] = pos
                    if exit_sample[inst] < 0:
                        bad = False
                        for i in range(d):
                            if abs(pos[i].real) > halfwidth or not np.isfinite(pos[i].real):
                                bad = True
                        if bad:
                            exit_sample[inst] = idx
        return positions, exit_sample


def integrate_sphere_batch(pos0, vel0, A, R, mass, eta, gamma, dt, n_steps,
                           stride=10, halfwidth=None, corrections=False,
                           log_measure=False):
    """Integrate a batch of sphere-chart trajectories; returns sampled data.

    Returns (times, positions, exit_sample): sampled times (every ``stride``
    steps), complex positions of shape (n_instances, n_samples, dim), and
    per-instance index of the first out-of-domain sample (-1 if none).
    """
    pos0 = np.asarray(pos0, dtype=complex)
    vel0 = np.asarray(vel0, dtype=complex)
    A = np.asarray(A, dtype=float)
    if halfwidth is None:
        halfwidth = 4.0 * R
    times = dt * stride * np.arange(n_steps // stride + 1)
    if numba_enabled():
        positions, exit_sample = _integrate_batch_njit(
            pos0, vel0, A, float(R), float(mass), float(eta), float(gamma),
            float(dt), int(n_steps), int(stride), float(halfwidth),
            bool(corrections), bool(log_measure),
        )
    else:
        positions, exit_sample = _integrate_batch_numpy(
            pos0, vel0, A, float(R), float(mass), float(eta), float(gamma),
            float(dt), int(n_steps), int(stride), float(halfwidth),
            bool(corrections), bool(log_measure),
        )
    return times, positions, exit_sample
