"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The summary lines are repeated at the end of the pytest run.
"""
import time

import numpy as np
import pytest

from _states import GRIDS, flat_exact, flat_forcing, korn_state, l2_error, staggered
from fsibeam import diagnostics as diag
from fsibeam import store
from fsibeam.fields import (ContainerGrid, CouplePair, ExtendedField, StreamFunction, contact_cutoff, extend,
                            lift, perp_grad, stream_function)
from fsibeam.geometry import Deformation, positive_part_shift, sublevel_slope_sup, w1inf_distance
from fsibeam.solver.coupled import SimState, run
from fsibeam.solver.config import Params
from fsibeam.solver.fluid import steady_solve
from fsibeam.solver.mac import MacGrid

DTS = (1e-3, 5e-4, 2.5e-4, 1.25e-4)


@pytest.fixture(scope="module")
def bump_dt_runs(bump_config):
    """Bump benchmark at gamma = 0.05 for each time step, with wall-clock seconds."""
    out = {}
    for dt in DTS:
        t0 = time.perf_counter()
        traj = run(bump_config.with_overrides(grid={"dt": dt, "save_every": int(round(0.01 / dt))}))
        out[dt] = (traj, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def sweep_runs(bump_config):
    gammas = list(bump_config.sweep.gammas)
    return gammas, [run(diag.member_config(bump_config, g)) for g in gammas]


def test_energy_balance(criterion, bump_config, bump_dt_runs):
    with criterion(1, "energy balance") as c:
        assert bump_config.params.gamma == 0.05
        res = [float(np.max(np.abs(diag.energy_ledger(bump_dt_runs[dt][0]).relative_residual))) for dt in DTS]
        ratios = [a / b for a, b in zip(res, res[1:])]
        slowest = max(s for _, s in bump_dt_runs.values())
        c.note("residuals " + ", ".join(f"{r:.3e}" for r in res))
        c.note("ratios " + ", ".join(f"{r:.3f}" for r in ratios))
        c.note(f"slowest run {slowest:.1f} s")
        assert res[0] <= 1e-3
        assert all(r >= 1.8 for r in ratios)
        assert slowest <= 300


def test_conservation_invariants(criterion, bump_dt_runs, contact_config, rest_config):
    with criterion(2, "conservation invariants") as c:
        runs = {"bump": bump_dt_runs[DTS[0]][0], "contact": run(contact_config), "rest": run(rest_config)}
        worst_mean = worst_div = 0.0
        for name, traj in runs.items():
            assert traj.steps, name
            worst_mean = max(worst_mean, max(abs(s.mean_eta_dot) for s in traj.steps))
            worst_div = max(worst_div, max(s.div_max for s in traj.steps))
        c.note(f"{sum(len(t.steps) for t in runs.values())} steps")
        c.note(f"max |mean eta_t| {worst_mean:.2e}, max divergence {worst_div:.2e}")
        assert worst_mean <= 1e-12
        assert worst_div <= 1e-10


def test_korn_identity(criterion):
    with criterion(3, "Korn identity") as c:
        sizes = (16, 32, 64, 128)
        res = {n: diag.korn_residual(korn_state(n, n // 2)) for n in sizes}
        ratios = [res[a] / res[b] for a, b in zip(sizes, sizes[1:])]
        c.note("residuals " + ", ".join(f"{n}: {r:.2e}" for n, r in res.items()))
        c.note("ratios " + ", ".join(f"{r:.2f}" for r in ratios))
        assert res[64] <= 1e-3
        assert all(r >= 3.0 for r in ratios)


def test_lower_envelope(criterion, sweep_runs):
    with criterion(4, "lower envelope") as c:
        gammas, trajs = sweep_runs
        rows = diag.envelope_study(trajs[-1], [0.2, 0.1, 0.05])
        spread = diag.row_bound_spread(rows)
        for r in rows:
            c.note(f"delta {r['delta']:g}: N={r['N']} gap {r['max_gap']:.3f} "
                   f"violations {r['below_violations'] + r['gap_violations']}")
        c.note(f"gamma {gammas[-1]:g}, row-bound spread {spread:.1%}")
        assert all(r["below_violations"] == 0 and r["gap_violations"] == 0 for r in rows)
        assert spread <= 0.10


def _random_profile(rng, n=256, L=2.0):
    x = np.arange(n) * L / n
    k = np.arange(1, 6)
    amp = rng.normal(size=5) / k**2
    phase = rng.uniform(0, 2 * np.pi, 5)
    p = np.sum(amp[:, None] * np.cos(2 * np.pi * k[:, None] * x / L + phase[:, None]), axis=0)
    return p - p.min() + rng.uniform(0, 0.03)  # nonnegative, sometimes touching zero


# heights are stored as 1 + eta, so differences carry rounding at the unit scale
ROUNDOFF = 4 * np.finfo(float).eps


def test_positive_part_bound(criterion):
    with criterion(5, "positive-part bound") as c:
        rng = np.random.default_rng(20240611)
        mus = (0.2, 0.1, 0.05)
        violations = strict = monotone_failures = 0
        worst = 0.0
        for _ in range(50):
            h = _random_profile(rng)
            sups = []
            for mu in mus:
                gap = w1inf_distance(positive_part_shift(h, mu, 2.0), Deformation.from_height(h, 2.0))
                bound = mu + sublevel_slope_sup(h, mu, 2.0)
                worst = max(worst, gap - bound)
                violations += gap > bound + ROUNDOFF
                strict += gap > bound
                sups.append(sublevel_slope_sup(h, mu, 2.0))
            monotone_failures += any(b > a for a, b in zip(sups, sups[1:]))
        c.note(f"150 checks, {violations} violations beyond {ROUNDOFF:.1e} roundoff "
               f"({strict} at the last bit), max(gap - bound) {worst:.3e}")
        c.note(f"{monotone_failures} profiles with a slope bound growing as mu shrinks")
        assert violations == 0 and monotone_failures == 0


def test_projector_decay(criterion):
    with criterion(6, "projector-competitor decay") as c:
        L = 2.0
        g = ContainerGrid(64, 161, L, 2.0)
        h = 1 + 0.3 * np.cos(2 * np.pi * g.x / L)
        d = 0.5 * np.sin(2 * np.pi * g.x / L)
        pair = CouplePair(lift(d, 0.3, g, h), d)
        levels = range(2, 9)
        rows = diag.projector_error_study(pair, h, [positive_part_shift(h, 2.0**-j, L) for j in levels],
                                          labels=[str(j) for j in levels])
        errs = [r.error for r in rows]
        c.note("errors " + ", ".join(f"{e:.3g}" for e in errs))
        c.note(f"final/initial {errs[-1] / errs[0]:.4f}")
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] <= 0.1 * errs[0]


def test_operator_algebra(criterion):
    with criterion(7, "operator algebra") as c:
        L, lam = 2.0, 0.25
        g = ContainerGrid(32, 81, L, 2.0)
        dvel = np.cos(2 * np.pi * g.x / L) + 0.3 * np.sin(6 * np.pi * g.x / L)
        w = lift(dvel, lam, g)
        up, low = g.y >= lam, g.y <= lam / 2
        lift_ok = (np.all(w.u1[:, up] == 0) and np.array_equal(w.u2[:, up], np.repeat(dvel[:, None], up.sum(), 1))
                   and np.all(w.u1[:, low] == 0) and np.all(w.u2[:, low] == 0))
        c.note(f"lift exact: {lift_ok}")

        errs = []
        for nx, ny in ((16, 21), (32, 41), (64, 81), (128, 161)):
            gg = ContainerGrid(nx, ny, L, 2.0)
            X, Y = gg.mesh()
            psi = np.sin(2 * np.pi * X / L) * np.sin(np.pi * (Y + 1) / 5) ** 2
            errs.append(np.abs(stream_function(ExtendedField(*perp_grad(psi, gg), gg)).psi - psi).max())
        orders = [np.log2(a / b) for a, b in zip(errs, errs[1:])]
        c.note("round-trip orders " + ", ".join(f"{o:.2f}" for o in orders))

        h = 1 + 0.3 * np.cos(2 * np.pi * g.x / L)
        region = lift(dvel, 0.3, g, h)
        back = extend(region.restrict(), dvel, h, g)
        exact = np.array_equal(back.u1, region.u1) and np.array_equal(back.u2, region.u2)
        c.note(f"extend/restrict bit-exact: {exact}")
        assert lift_ok and exact
        assert len(orders) == 3 and min(orders) >= 1.9


def test_vanishing_viscosity_trend(criterion, bump_config, sweep_runs):
    with criterion(8, "vanishing-viscosity trend") as c:
        gammas, trajs = sweep_runs
        rep = diag.gamma_sweep(bump_config, gammas, trajectories=trajs)
        c.note("velocity " + ", ".join(f"{v:.3e}" for v in rep.cauchy_velocity))
        c.note("beam " + ", ".join(f"{v:.3e}" for v in rep.cauchy_beam))
        c.note(f"min height {min(float(np.min(m.min_height)) for m in rep.members):.4f}")
        assert gammas == [0.1, 0.05, 0.025, 0.0125]
        assert rep.velocity_trend_ok and rep.beam_trend_ok and rep.positivity_ok
        assert not any(m.halted for m in rep.members)


def test_solver_verification(criterion, tmp_path, bump_config):
    with criterion(9, "solver verification") as c:
        prm = Params(mu=0.1, L=2.0)
        orders = {}
        for kind, convective in (("wall", True), ("lid", False)):
            errs = []
            for n in GRIDS:
                g = MacGrid(n, n // 2, 2.0)
                h = np.ones(n)
                Ue, top = staggered(g, h, lambda x, y: flat_exact(kind, x, y))
                st = steady_solve(g, h, prm, forcing=flat_forcing(kind, convective),
                                  advecting=Ue if convective else None, interface=top)
                errs.append(l2_error(g, h, st.U, Ue))
            orders[kind] = [np.log2(a / b) for a, b in zip(errs, errs[1:])]
        c.note("orders " + "; ".join(f"{k}: " + ", ".join(f"{o:.2f}" for o in v) for k, v in orders.items()))
        # the coarsest grid anchors the sequence; the order is read off the last two doublings
        mms_ok = all(min(v[1:]) >= 1.9 for v in orders.values())

        cfg = bump_config.with_overrides(grid={"T": 0.1})
        original, manifest = store.run_and_store(cfg, tmp_path / "orig")
        resumed = store.continue_run(manifest, 0.05)
        dev = max(max(np.abs(a.beam.eta - b.beam.eta).max(), np.abs(a.fluid.u1 - b.fluid.u1).max(),
                      np.abs(a.fluid.u2 - b.fluid.u2).max())
                  for a, b in zip(original.samples, resumed.samples))
        limit = 10 * cfg.coupling.tol
        c.note(f"resume deviation {dev:.2e} (limit {limit:.0e})")

        replay = run(cfg)
        bitwise = all(store.encode_state(SimState(a.fluid, a.beam, a.step))
                      == store.encode_state(SimState(b.fluid, b.beam, b.step))
                      for a, b in zip(original.samples, replay.samples))
        stored = store.load_trajectory(manifest)
        reload_ok = all(np.array_equal(a.beam.eta, b.beam.eta) and np.array_equal(a.fluid.u1, b.fluid.u1)
                        for a, b in zip(original.samples, stored.samples))
        c.note(f"replay bit-identical: {bitwise}, reload bit-identical: {reload_ok}")
        assert mms_ok and dev <= limit and bitwise and reload_ok
        assert len(resumed.samples) == len(original.samples)


def _contact_stream(g, rng, L):
    h = 1.2 * (1 - np.cos(2 * np.pi * g.x / L)) / 2  # touches zero only at x = 0
    k = np.arange(1, 4)
    mod = 1 + 0.3 * np.sum(rng.normal(size=(3, 1)) * np.cos(2 * np.pi * k[:, None] * g.x / L
                                                            + rng.uniform(0, 6, (3, 1))), axis=0)
    b = np.sin(np.pi * g.x / L) * mod
    s = np.clip(g.y[None, :] / np.maximum(h[:, None], 1e-12), 0, 1)
    psi = b[:, None] * s**2 * (3 - 2 * s)
    psi[h == 0] = 0.0
    return StreamFunction(psi, psi[:, -1].copy(), h == 0, g, h)


def test_contact_cutoff(criterion):
    with criterion(10, "contact cutoff") as c:
        L, eps = 2.0, 0.25
        g = ContainerGrid(64, 81, L, 2.0)
        rng = np.random.default_rng(7)
        outside = (g.x < eps / 2) | (g.x > L - eps / 2)
        support_bad = strip_bad = 0
        for _ in range(20):
            out = contact_cutoff(_contact_stream(g, rng, L), (0.0, L), eps)
            support_bad += int(np.any(out.pair.w.u1[outside] != 0) or np.any(out.pair.w.u2[outside] != 0)
                               or np.any(out.pair.d[outside] != 0))
            strip_bad += out.violations
        c.note(f"20 stream functions: {support_bad} support failures, {strip_bad} strip violations")
        assert support_bad == 0 and strip_bad == 0
