"""Energy bookkeeping, boundedness checks and parameter studies on stored trajectories."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fields import (ContainerGrid, CouplePair, ExtendedField, SobolevConfig, ddx, ddy, extend,
                     projector_competitor, xs_distance)
from .geometry import EnvelopeError, as_deformation, build_lower_envelope, w1inf_distance
from .solver import beam as beam_mod
from .solver import mac
from .solver.config import RunConfig
from .solver.coupled import Trajectory, run

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# energy ledger


@dataclass(frozen=True)
class EnergyLedger:
    times: np.ndarray
    fluid_kinetic: np.ndarray
    beam_kinetic: np.ndarray
    elastic: np.ndarray
    damping: np.ndarray  # cumulative gamma int int |d_tx eta|^2
    viscous: np.ndarray  # cumulative mu int int |grad u|^2
    config_hash: str = ""

    @property
    def total(self) -> np.ndarray:
        return self.fluid_kinetic + self.beam_kinetic + self.elastic

    @property
    def initial_total(self) -> float:
        return float(self.total[0]) if self.total.size else 0.0

    @property
    def residual(self) -> np.ndarray:
        """(current total + cumulative dissipation) - initial total."""
        return self.total + self.damping + self.viscous - self.initial_total

    @property
    def relative_residual(self) -> np.ndarray:
        e0 = self.initial_total
        return self.residual / e0 if e0 > 0 else self.residual

    def summary(self) -> dict:
        rel = self.relative_residual
        return {
            "initial_energy": self.initial_total,
            "final_energy": float(self.total[-1]),
            "max_energy": float(self.total.max()),
            "viscous_dissipation": float(self.viscous[-1]),
            "damping_dissipation": float(self.damping[-1]),
            "final_relative_residual": float(rel[-1]),
            "max_abs_relative_residual": float(np.max(np.abs(rel))),
            "config_hash": self.config_hash,
        }

    def columns(self) -> dict:
        return {
            "t": self.times, "fluid_kinetic": self.fluid_kinetic, "beam_kinetic": self.beam_kinetic,
            "elastic": self.elastic, "damping_cumulative": self.damping, "viscous_cumulative": self.viscous,
            "total": self.total, "residual": self.residual,
        }

    def to_csv(self, path) -> Path:
        return write_table(path, self.columns(), self.config_hash)


def sample_energies(sample, params):
    return (sample.fluid.kinetic_energy(params.rho_f), beam_mod.kinetic_energy(sample.beam, params),
            beam_mod.elastic_energy(sample.beam, params))


def energy_ledger(trajectory: Trajectory, params=None, recompute: bool = False) -> EnergyLedger:
    """Energies at every stored sample and dissipation accumulated up to it.

    Dissipation comes from the per-step records; with ``recompute=True`` it is
    rebuilt from the stored states instead, which needs one sample per step.
    """
    params = params or trajectory.config.params
    samples = trajectory.samples
    energies = np.array([sample_energies(s, params) for s in samples]) if samples else np.zeros((0, 3))
    if recompute:
        steps = [s.step for s in samples]
        if steps != list(range(steps[0], steps[0] + len(steps))):
            raise ValueError("recomputing dissipation needs a sample at every step")
        visc = [0.0]
        damp = [0.0]
        for prev, cur in zip(samples, samples[1:]):
            dt = cur.t - prev.t
            visc.append(visc[-1] + dt * cur.fluid.dissipation_rate(params.mu))
            damp.append(damp[-1] + dt * beam_mod.damping_rate(cur.beam.eta_dot, params, cur.beam.L))
        viscous, damping = np.array(visc), np.array(damp)
    else:
        viscous, damping = trajectory.cumulative_dissipation()
    return EnergyLedger(
        times=np.array([s.t for s in samples]),
        fluid_kinetic=energies[:, 0], beam_kinetic=energies[:, 1], elastic=energies[:, 2],
        damping=np.asarray(damping, dtype=float), viscous=np.asarray(viscous, dtype=float),
        config_hash=trajectory.config.config_hash(),
    )


# ---------------------------------------------------------------------------
# Korn identity


def _staggered_gradients(u1, u2, h, L):
    """Physical velocity derivatives where MAC differences are compact.

    Normal derivatives live at cell centres and shear derivatives at cell
    corners; on a flat channel this makes the discrete Korn identity an exact
    summation by parts.
    """
    nx, nz = u1.shape
    g = mac.MacGrid(nx, nz, L)
    m = mac.Metrics.of(g, h)
    zc, zf = g.zc[None, :], g.zf[None, :]
    u1g = np.concatenate([-u1[:, :1], u1, -u1[:, -1:]], axis=1)  # no-slip ghosts
    left = np.roll(u1g, 1, axis=0)
    hc, hf = m.h[:, None], m.hf[:, None]

    # centres (x_i, zc)
    d1z_c = 0.25 * ((u1g[:, 2:] - u1g[:, :-2]) + (left[:, 2:] - left[:, :-2])) / g.dz
    d2z_c = (u2[:, 1:] - u2[:, :-1]) / g.dz
    du1dx = (u1 - np.roll(u1, 1, axis=0)) / g.dx - zc * m.hxc[:, None] / hc * d1z_c
    du2dy = d2z_c / hc
    w_centre = (m.h * g.dx * g.dz)[:, None] * np.ones((1, nz))

    # corners (x_{i+1/2}, zf)
    pad = np.concatenate([d2z_c[:, :1], d2z_c, d2z_c[:, -1:]], axis=1)
    zmid = 0.5 * (pad[:, 1:] + pad[:, :-1])
    d2z_f = 0.5 * (zmid + np.roll(zmid, -1, axis=0))
    du1dy = (u1g[:, 1:] - u1g[:, :-1]) / g.dz / hf
    du2dx = (np.roll(u2, -1, axis=0) - u2) / g.dx - zf * m.hxf[:, None] / hf * d2z_f
    w_corner = (m.hf * g.dx * g.dz)[:, None] * np.ones((1, nz + 1))
    w_corner[:, [0, -1]] *= 0.5
    return du1dx, du2dy, w_centre, du1dy, du2dx, w_corner


def korn_terms(u1, u2, h, L: float = 1.0) -> tuple[float, float]:
    """``(int |grad u + grad u^T|^2, 2 int |grad u|^2)`` on the staggered quadrature."""
    a, d, wc, b, c, wf = _staggered_gradients(np.asarray(u1, float), np.asarray(u2, float),
                                              np.asarray(h, float), L)
    lhs = np.sum(wc * (4 * a**2 + 4 * d**2)) + np.sum(wf * 2 * (b + c) ** 2)
    rhs = 2 * (np.sum(wc * (a**2 + d**2)) + np.sum(wf * (b**2 + c**2)))
    return float(lhs), float(rhs)


def korn_residual(fluid, h=None, L: float | None = None) -> float:
    """``|LHS - RHS| / RHS`` of the Korn equality; 0 when both sides vanish.

    ``fluid`` is a FluidState or a raw ``(u1, u2)`` pair (then ``h`` is required).
    """
    if isinstance(fluid, tuple):
        u1, u2 = fluid
        L = 1.0 if L is None else L
    else:
        u1, u2, L = fluid.u1, fluid.u2, fluid.L
        h = fluid.h if h is None else h
    lhs, rhs = korn_terms(u1, u2, h, L)
    if rhs == 0.0:
        return 0.0 if lhs == 0.0 else math.inf
    return abs(lhs - rhs) / rhs


# ---------------------------------------------------------------------------
# extended fields and L4 bounds


def container_for(config: RunConfig) -> ContainerGrid:
    g = config.grid
    return ContainerGrid(g.nx, g.container_rows, config.params.L, g.M)


def extended_velocity(sample, grid: ContainerGrid, trace_tol: float = 1e-8) -> ExtendedField:
    """Fluid velocity in the channel, beam velocity above it, zero below the floor."""
    fluid = sample.fluid
    return extend(fluid.sample, fluid.interface_velocity, fluid.h, grid, trace_tol=trace_tol)


def _time_weights(times: np.ndarray) -> np.ndarray:
    if times.size == 1:
        return np.ones(1)
    w = np.zeros(times.size)
    dt = np.diff(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


@dataclass(frozen=True)
class L4Report:
    l4_norm: float  # space-time L4 norm of the extended velocity
    l2_norms: np.ndarray
    gradient_norms: np.ndarray
    l4_space: np.ndarray
    interpolation_ratio: float  # max_t |u|_4^2 / (|u|_2 |grad u|_2 + |u|_2^2)

    def __float__(self) -> float:
        return self.l4_norm


def l4_bound_check(fields_or_trajectory, times=None, grid: ContainerGrid | None = None) -> L4Report:
    """Space-time L4 norm of extended velocities and the interpolation-inequality ratio."""
    if isinstance(fields_or_trajectory, Trajectory):
        tr = fields_or_trajectory
        grid = grid or container_for(tr.config)
        fields = [extended_velocity(s, grid) for s in tr.samples]
        times = tr.times
    else:
        fields = list(fields_or_trajectory)
        times = np.zeros(1) if times is None else np.asarray(times, dtype=float)
    if not fields:
        return L4Report(0.0, np.zeros(0), np.zeros(0), np.zeros(0), 0.0)
    g = fields[0].grid
    w = g.cell_weights()
    l4, l2, gr = [], [], []
    for f in fields:
        mag2 = f.u1**2 + f.u2**2
        l4.append(float(np.sum(w * mag2**2)) ** 0.25)
        l2.append(math.sqrt(float(np.sum(w * mag2))))
        grad2 = sum(ddx(u, g.dx) ** 2 + ddy(u, g.dy) ** 2 for u in (f.u1, f.u2))
        gr.append(math.sqrt(float(np.sum(w * grad2))))
    l4, l2, gr = map(np.array, (l4, l2, gr))
    tw = _time_weights(np.asarray(times)) if len(fields) > 1 else np.ones(1)
    total = float(np.sum(tw * l4**4)) ** 0.25
    denom = l2 * gr + l2**2
    ratio = float(np.max(np.where(denom > 0, l4**2 / np.where(denom > 0, denom, 1.0), 0.0)))
    return L4Report(total, l2, gr, l4, ratio)


# ---------------------------------------------------------------------------
# gamma sweep


@dataclass
class SweepMember:
    gamma: float
    config_hash: str
    times: np.ndarray
    min_height: np.ndarray
    ledger: dict
    l4_norm: float
    energy_excess: float  # max over time of energy minus the regularized initial energy
    halted: bool = False


@dataclass
class SweepReport:
    gammas: list
    members: list
    times: np.ndarray
    cauchy_velocity: list  # successive ||u_i - u_{i+1}|| in L2 of space-time on the container
    cauchy_density_velocity: list  # same with the fluid density indicator
    cauchy_beam: list  # successive ||d_t eta_i - d_t eta_{i+1}|| in L2((0,T)x(0,L))
    pairwise_velocity: np.ndarray
    pairwise_beam: np.ndarray
    envelope: dict
    unregularized_initial_energy: float
    limit_energy_ok: bool
    base_config_hash: str
    notes: dict = field(default_factory=dict)

    @staticmethod
    def _strictly_decreasing(seq) -> bool:
        return all(b < a for a, b in zip(seq, seq[1:]))

    @property
    def velocity_trend_ok(self) -> bool:
        return self._strictly_decreasing(self.cauchy_velocity)

    @property
    def beam_trend_ok(self) -> bool:
        return self._strictly_decreasing(self.cauchy_beam)

    @property
    def positivity_ok(self) -> bool:
        return all(float(np.min(m.min_height)) > 0 for m in self.members if m.gamma > 0)

    def to_dict(self) -> dict:
        return {
            "gammas": list(self.gammas),
            "base_config_hash": self.base_config_hash,
            "times": self.times.tolist(),
            "members": [
                {"gamma": m.gamma, "config_hash": m.config_hash, "min_height": float(np.min(m.min_height)),
                 "l4_norm": m.l4_norm, "energy_excess": m.energy_excess, "halted": m.halted, "ledger": m.ledger}
                for m in self.members
            ],
            "cauchy_velocity": list(self.cauchy_velocity),
            "cauchy_density_velocity": list(self.cauchy_density_velocity),
            "cauchy_beam": list(self.cauchy_beam),
            "pairwise_velocity": self.pairwise_velocity.tolist(),
            "pairwise_beam": self.pairwise_beam.tolist(),
            "envelope": self.envelope,
            "unregularized_initial_energy": self.unregularized_initial_energy,
            "checks": {"velocity_trend": self.velocity_trend_ok, "beam_trend": self.beam_trend_ok,
                       "positivity": self.positivity_ok, "limit_energy": self.limit_energy_ok},
            "notes": self.notes,
        }

    def write(self, directory) -> dict:
        directory = Path(directory)
        (directory / "tables").mkdir(parents=True, exist_ok=True)
        paths = {"report": directory / "sweep_report.json"}
        paths["report"].write_text(json.dumps(self.to_dict(), indent=2))
        h = self.base_config_hash
        paths["members"] = write_table(directory / "tables" / "members.csv", {
            "gamma": [m.gamma for m in self.members],
            "min_height": [float(np.min(m.min_height)) for m in self.members],
            "l4_norm": [m.l4_norm for m in self.members],
            "energy_excess": [m.energy_excess for m in self.members],
            "final_relative_residual": [m.ledger["final_relative_residual"] for m in self.members],
        }, [m.config_hash for m in self.members])
        paths["cauchy"] = write_table(directory / "tables" / "cauchy.csv", {
            "gamma_a": self.gammas[:-1], "gamma_b": self.gammas[1:],
            "velocity": self.cauchy_velocity, "density_velocity": self.cauchy_density_velocity,
            "beam_velocity": self.cauchy_beam,
        }, h)
        cols = {"t": self.times}
        for m in self.members:
            cols[f"min_height_gamma_{m.gamma:g}"] = m.min_height[: self.times.size]
        paths["min_height"] = write_table(directory / "tables" / "min_height.csv", cols, h)
        return paths


def _run_member(config_dict: dict, base_dir: str):
    cfg = RunConfig.from_dict(config_dict, base_dir)
    return run(cfg)


def member_config(base: RunConfig, gamma: float) -> RunConfig:
    return base.with_overrides(name=f"{base.name}_gamma_{gamma:g}", params={"gamma": gamma},
                               initial={"regularize": True})


def gamma_sweep(base: RunConfig, gammas=None, delta: float | None = None, workers: int = 1,
                trajectories: list | None = None) -> SweepReport:
    """Run one member per damping value and measure the Cauchy trend between neighbours.

    All members share the regularized initial-data pipeline; the lower
    envelope is built from the smallest-damping run as a proxy for the limit.
    """
    gammas = [float(g) for g in (gammas if gammas is not None else base.sweep.gammas)]
    if any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be strictly decreasing")
    delta = delta if delta is not None else base.sweep.deltas[-1]
    configs = [member_config(base, g) for g in gammas]
    if trajectories is None:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_member, c.to_dict(), c.base_dir) for c in configs]
                trajectories = [f.result() for f in futures]
        else:
            trajectories = [run(c) for c in configs]

    grid = container_for(base)
    n_common = min(len(t.samples) for t in trajectories)
    times = trajectories[0].times[:n_common]
    tw = _time_weights(times)
    cw = grid.cell_weights()
    extended = [[extended_velocity(s, grid) for s in tr.samples[:n_common]] for tr in trajectories]
    fluid_masks = [[(f.tags == 1) for f in ext] for ext in extended]
    rho_f = base.params.rho_f
    dx = base.params.L / base.grid.nx

    def vel_dist(i, j, density=False):
        total = 0.0
        for k in range(n_common):
            a, b = extended[i][k], extended[j][k]
            if density:
                ra = rho_f * fluid_masks[i][k]
                rb = rho_f * fluid_masks[j][k]
                d1, d2 = ra * a.u1 - rb * b.u1, ra * a.u2 - rb * b.u2
            else:
                d1, d2 = a.u1 - b.u1, a.u2 - b.u2
            total += tw[k] * float(np.sum(cw * (d1**2 + d2**2)))
        return math.sqrt(total)

    def beam_dist(i, j):
        total = 0.0
        for k in range(n_common):
            diff = trajectories[i].samples[k].beam.eta_dot - trajectories[j].samples[k].beam.eta_dot
            total += tw[k] * dx * float(np.sum(diff**2))
        return math.sqrt(total)

    n = len(gammas)
    pv = np.zeros((n, n))
    pb = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            pv[i, j] = pv[j, i] = vel_dist(i, j)
            pb[i, j] = pb[j, i] = beam_dist(i, j)
    cauchy_v = [float(pv[i, i + 1]) for i in range(n - 1)]
    cauchy_rv = [vel_dist(i, i + 1, density=True) for i in range(n - 1)]
    cauchy_b = [float(pb[i, i + 1]) for i in range(n - 1)]

    members = []
    for g, cfg, tr in zip(gammas, configs, trajectories):
        led = energy_ledger(tr)
        l4 = l4_bound_check(tr, grid=grid)
        members.append(SweepMember(
            gamma=g, config_hash=cfg.config_hash(), times=tr.times, min_height=tr.min_heights(),
            ledger=led.summary(), l4_norm=l4.l4_norm,
            energy_excess=float(np.max(led.total - led.initial_total)), halted=tr.halted,
        ))

    # energy of the unregularized data bounds the energy of the limit candidate
    from .solver.initial import initial_state

    raw = initial_state(base.with_overrides(initial={"regularize": False}))
    from .solver.coupled import Sample

    e_raw = float(sum(sample_energies(Sample(0, 0.0, raw.fluid, raw.beam), base.params)))
    finest = energy_ledger(trajectories[-1])
    limit_ok = bool(np.all(finest.total <= e_raw * (1 + 1e-12) + 1e-14))

    envelope = {"delta": delta, "source_gamma": gammas[-1]}
    try:
        env = build_lower_envelope(trajectories[-1].height_history(), delta, gamma0=gammas[-1])
        envelope.update({"epsilon": env.epsilon, "N": env.N, "theta": env.theta,
                         "max_gap": env.max_gap, "min_margin": env.min_margin})
    except EnvelopeError as exc:
        envelope["error"] = str(exc)

    return SweepReport(
        gammas=gammas, members=members, times=times, cauchy_velocity=cauchy_v,
        cauchy_density_velocity=cauchy_rv, cauchy_beam=cauchy_b, pairwise_velocity=pv, pairwise_beam=pb,
        envelope=envelope, unregularized_initial_energy=e_raw, limit_energy_ok=limit_ok,
        base_config_hash=base.config_hash(),
        notes={"norm": "unweighted extended velocity; density-weighted variant uses rho_f on fluid nodes",
               "comparison_times": int(n_common)},
    )


# ---------------------------------------------------------------------------
# lower-envelope and projector studies


def envelope_study(trajectory: Trajectory, deltas, theta: float = 0.2, tol: float = 1e-12) -> list:
    """One row per delta: envelope parameters and nodewise violation counts."""
    history = trajectory.height_history()
    H, D = history.heights, history.slopes
    rows = []
    for delta in deltas:
        env = build_lower_envelope(history, delta, theta=theta, tol=tol)
        k = np.array([env.interval_of(t) for t in history.times])
        margin = H - env.values[k]
        gap = np.max(np.abs(margin), axis=1) + np.max(np.abs(D - env.slopes[k]), axis=1)
        rows.append({
            "delta": float(delta), "epsilon": env.epsilon, "N": env.N, "theta": env.theta,
            "holder_constant": env.holder_constant, "max_gap": float(gap.max()),
            "min_margin": float(margin.min()), "below_violations": int(np.sum(margin < -tol)),
            "gap_violations": int(np.sum(gap > delta + tol)),
            "row_w1inf_max": float(env.row_w1inf_norms().max()),
            "envelope": env,
        })
    return rows


def row_bound_spread(rows) -> float:
    """Relative spread of the row-wise W^{1,inf} bounds across deltas."""
    b = np.array([r["row_w1inf_max"] for r in rows])
    return float((b.max() - b.min()) / b.max()) if b.size and b.max() > 0 else 0.0


@dataclass(frozen=True)
class ProjectorRow:
    label: str
    gap: float  # discrete W^{1,inf} distance between h and the lower height
    error: float  # X^s distance from the pair to its competitor


def projector_error_study(pair: CouplePair, h, family, cfg: SobolevConfig = SobolevConfig(),
                          labels=None) -> list:
    """Decay table of the competitor distance against the height gap."""
    grid = pair.w.grid
    hd = as_deformation(h, grid.L)
    rows = []
    for idx, hb in enumerate(family):
        hbd = as_deformation(hb, grid.L)
        if np.any(hbd.h > hd.h + 1e-14):
            raise ValueError(f"family member {idx} is not below h")
        comp = projector_competitor(pair, hd, hbd, cfg)
        label = labels[idx] if labels is not None else str(idx)
        rows.append(ProjectorRow(label, w1inf_distance(hd, hbd), xs_distance(pair, comp, cfg)))
    return rows


# ---------------------------------------------------------------------------
# contact components


@dataclass(frozen=True)
class ComponentFlux:
    start: int  # first node index (periodic)
    nodes: int
    flux: float  # integral of d_t eta over the component
    min_height: float


@dataclass(frozen=True)
class FluxReport:
    components: list
    contact_flux: float  # contribution of nodes at or below the threshold
    global_flux: float


def component_flux_report(state, h=None, eps_c: float = 0.0) -> FluxReport:
    """Connected components of ``{h > eps_c}`` and the volume rate on each."""
    beam = getattr(state, "beam", state)
    heights = beam.height if h is None else np.asarray(h, dtype=float)
    rate = np.asarray(beam.eta_dot, dtype=float)
    dx = beam.L / rate.size
    live = heights > eps_c
    n = rate.size
    comps = []
    if live.all():
        comps.append(ComponentFlux(0, n, float(np.sum(rate) * dx), float(heights.min())))
    elif live.any():
        start = int(np.argmin(live))  # a contact node; walk once around the period from it
        order = (start + np.arange(n)) % n
        run_nodes = []
        for i in list(order) + [start]:
            if live[i]:
                run_nodes.append(i)
            elif run_nodes:
                idx = np.array(run_nodes)
                comps.append(ComponentFlux(int(idx[0]), idx.size, float(np.sum(rate[idx]) * dx),
                                           float(heights[idx].min())))
                run_nodes = []
    contact = float(np.sum(rate[~live]) * dx)
    return FluxReport(comps, contact, float(np.sum(rate) * dx))


# ---------------------------------------------------------------------------
# tables


def write_table(path, columns: dict, config_hash) -> Path:
    """CSV with a ``config_hash`` column on every row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    n = max((len(np.atleast_1d(v)) for v in columns.values()), default=0)
    hashes = list(config_hash) if isinstance(config_hash, (list, tuple)) else [config_hash] * n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["config_hash"])
        for i in range(n):
            row = []
            for k in names:
                v = np.atleast_1d(columns[k])
                val = v[i] if i < len(v) else ""
                row.append(repr(float(val)) if isinstance(val, (float, np.floating)) else val)
            w.writerow(row + [hashes[i]])
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_json_default))
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
