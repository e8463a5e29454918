import numpy as np
import pytest

from fsibeam.solver.beam import BeamState
from fsibeam.solver.coupled import (ContactDuringStep, SimState, coupled_step, detect_contact, run)
from fsibeam.solver.fluid import FluidState
from fsibeam.solver.initial import initial_state


def short(cfg, T, **grid):
    return cfg.with_overrides(grid={"T": T, **grid})


def test_rest_stays_at_rest(rest_config):
    traj = run(short(rest_config, 0.05))
    final = traj.final
    assert np.all(final.beam.eta == 0) and np.all(final.fluid.u1 == 0) and np.all(final.fluid.u2 == 0)
    assert len(traj.steps) == 50 and not traj.halted


def test_step_invariants(bump_config):
    traj = run(short(bump_config, 0.03))
    for info in traj.steps:
        assert abs(info.mean_eta_dot) <= 1e-12
        assert info.div_max <= 1e-10
        assert info.trace_mismatch <= 1e-12
        assert info.residual <= bump_config.coupling.tol


def test_mirror_symmetry_is_preserved(bump_config):
    cfg = short(bump_config, 0.02).with_overrides(initial={"regularize": False})
    traj = run(cfg)
    eta = traj.final.beam.eta
    mirrored = np.roll(eta[::-1], 1)  # x_i -> L - x_i on the periodic grid
    assert np.abs(eta - mirrored).max() <= 1e-9 * np.abs(eta).max()
    u1 = traj.final.fluid.u1  # faces x_{i+1/2} map to x_{N-1-i+1/2}, with a sign flip
    assert np.abs(u1 + u1[::-1]).max() <= 1e-8 * np.abs(u1).max()


def test_energy_decays_without_forcing(bump_config):
    from fsibeam.diagnostics import energy_ledger

    led = energy_ledger(run(short(bump_config, 0.05)))
    total = led.total
    assert np.all(np.diff(total) <= 1e-12 * total[0])


def test_detect_contact_variants():
    h = np.array([1.0, 0.5, 0.05, 0.6])
    ev = detect_contact(h, 0.1, t=0.3, L=2.0)
    assert ev.index == 2 and ev.x == pytest.approx(1.0) and ev.time == 0.3
    assert detect_contact(h, 0.01) is None
    beam = BeamState(h - 1, np.zeros(4), 0.7, 2.0)
    assert detect_contact(beam, 0.1).time == 0.7


def test_predicted_contact_raises_before_the_step():
    n, nz, L = 16, 4, 2.0
    x = np.arange(n) * L / n
    eta = np.zeros(n)
    eta[4] = -0.85
    v = np.zeros(n)
    v[4], v[12] = -10.0, 10.0
    h = 1 + eta
    sim = SimState(FluidState.rest(h, nz, L), BeamState(eta, v, 0.0, L), 0)
    from fsibeam.solver.config import CouplingConfig, Params

    with pytest.raises(ContactDuringStep) as info:
        coupled_step(sim, 0.02, Params(L=L), CouplingConfig(), eps_c=0.1)
    ev = info.value.event
    assert ev.index == 4 and ev.x == pytest.approx(x[4])
    assert ev.time == pytest.approx(0.005)


def test_contact_benchmark_halts(contact_config):
    traj = run(contact_config)
    assert traj.halted and len(traj.events) == 1
    ev = traj.events[0]
    assert ev.x == pytest.approx(contact_config.params.L / 2)
    assert ev.time < contact_config.grid.T
    assert traj.final.beam.height.min() > contact_config.contact.eps_c
    # the run stopped at the step whose extrapolation reached the threshold
    assert traj.final.t <= ev.time <= traj.final.t + contact_config.grid.dt


def test_resume_from_state_matches_straight_run(bump_config):
    cfg = short(bump_config, 0.02)
    full = run(cfg)
    half = run(short(bump_config, 0.01))
    cont = run(cfg, start=half.last_state)
    np.testing.assert_allclose(cont.final.beam.eta, full.final.beam.eta, atol=1e-12)
    np.testing.assert_allclose(cont.final.fluid.u1, full.final.fluid.u1, atol=1e-11)


def test_samples_follow_save_cadence(bump_config):
    traj = run(short(bump_config, 0.025))
    assert [s.step for s in traj.samples] == [0, 10, 20, 25]
    assert initial_state(bump_config).step == 0
