import numpy as np
import pytest

from fsibeam.solver.beam import (BeamState, beam_step, damping_rate, elastic_energy, kinetic_energy,
                                 wavenumbers)
from fsibeam.solver.config import Params

L = 2.0
N = 32
X = np.arange(N) * L / N


def energy(s, p):
    return kinetic_energy(s, p) + elastic_energy(s, p)


def initial():
    return BeamState(0.1 * np.cos(2 * np.pi * X / L) + 0.02 * np.sin(6 * np.pi * X / L),
                     0.3 * np.sin(4 * np.pi * X / L), 0.0, L)


def test_undamped_trapezoid_conserves_energy():
    p = Params(gamma=0.0, L=L)
    s = initial()
    e0 = energy(s, p)
    for _ in range(500):
        s = beam_step(s, np.zeros(N), 1e-2, p)
    assert energy(s, p) == pytest.approx(e0, rel=1e-12)
    assert s.t == pytest.approx(5.0)


def test_trapezoid_discrete_energy_identity():
    """E1 - E0 = dt * (<phi, v_mid> - gamma |v_mid'|^2) with the midpoint velocity."""
    p = Params(gamma=0.07, L=L)
    s = initial()
    phi = 0.5 * np.cos(2 * np.pi * X / L)
    dt = 5e-3
    s1 = beam_step(s, phi, dt, p)
    vm = 0.5 * (s.eta_dot + s1.eta_dot)
    work = (L / N) * np.sum(phi * vm)
    lhs = energy(s1, p) - energy(s, p)
    rhs = dt * (work - damping_rate(vm, p, L))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-15)


def test_implicit_euler_dissipates():
    p = Params(gamma=0.0, L=L)
    s = initial()
    prev = energy(s, p)
    for _ in range(50):
        s = beam_step(s, np.zeros(N), 1e-2, p, scheme="implicit_euler")
        e = energy(s, p)
        assert e <= prev
        prev = e


def test_mean_load_is_not_felt():
    p = Params(L=L)
    s = initial()
    a = beam_step(s, np.zeros(N), 1e-2, p)
    b = beam_step(s, np.full(N, 3.0), 1e-2, p)
    np.testing.assert_allclose(a.eta, b.eta, atol=1e-14)
    assert abs(b.eta_dot.mean()) < 1e-15


def _damped_mode(p, k, t):
    """Closed form of rho e'' + g k^2 e' + kappa e = 0, e(0) = 1, e'(0) = 0."""
    kappa = p.beta * k**2 + p.alpha * k**4
    c = p.gamma * k**2 / (2 * p.rho_s)
    w = np.sqrt(kappa / p.rho_s - c**2)
    return np.exp(-c * t) * (np.cos(w * t) + c / w * np.sin(w * t))


def test_single_mode_second_order_in_time():
    p = Params(gamma=0.05, L=L)
    k = wavenumbers(N, L)[2]
    T = 1.0
    errs = []
    for dt in (0.02, 0.01, 0.005):
        s = BeamState(np.cos(k * X), np.zeros(N), 0.0, L)
        for _ in range(int(round(T / dt))):
            s = beam_step(s, np.zeros(N), dt, p)
        errs.append(np.abs(s.eta - _damped_mode(p, k, T) * np.cos(k * X)).max())
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.8 < r < 4.2 for r in ratios), ratios


def test_bad_arguments():
    p = Params(L=L)
    with pytest.raises(ValueError):
        beam_step(initial(), np.zeros(N), 1e-2, p, scheme="rk4")
    with pytest.raises(ValueError):
        beam_step(initial(), np.zeros(N), 0.0, p)
    with pytest.raises(ValueError):
        BeamState(np.zeros(4), np.zeros(5))
    assert not initial().eta.flags.writeable
