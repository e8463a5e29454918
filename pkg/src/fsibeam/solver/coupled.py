"""Partitioned fluid-beam time stepping, contact detection and the run loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import beam as beam_mod
from .beam import BeamState
from .config import RunConfig
from . import mac
from .fluid import FluidState, FluidStepSystem, traction_on_beam

log = logging.getLogger(__name__)


class CouplingError(RuntimeError):
    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class ContactEvent:
    time: float
    x: float
    index: int
    min_height: float
    phase: str = "halted"
    step: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


class ContactDuringStep(RuntimeError):
    def __init__(self, event: ContactEvent):
        super().__init__(f"contact at t={event.time:.6g}, x={event.x:.6g}")
        self.event = event


@dataclass(frozen=True)
class SimState:
    fluid: FluidState
    beam: BeamState
    step: int = 0

    @property
    def t(self) -> float:
        return self.beam.t


@dataclass(frozen=True)
class StepInfo:
    step: int
    t: float
    dt: float
    iterations: int
    residual: float
    diss_mu: float  # dt * mu int |grad u|^2
    diss_gamma: float  # dt * gamma int |d_x eta_dot|^2
    div_max: float
    mean_eta_dot: float
    trace_mismatch: float
    gauge: float
    cfl: float

    def to_dict(self) -> dict:
        return asdict(self)


def detect_contact(state, eps_c: float, t: Optional[float] = None, L: Optional[float] = None,
                   phase: str = "halted") -> Optional[ContactEvent]:
    """Event iff ``min(1 + eta) <= eps_c``. Accepts a SimState, BeamState or height array."""
    if isinstance(state, SimState):
        state = state.beam
    if isinstance(state, BeamState):
        heights, t, L = state.height, state.t if t is None else t, state.L
    else:
        heights = np.asarray(state, dtype=float)
        t = 0.0 if t is None else t
        L = 1.0 if L is None else L
    i = int(np.argmin(heights))
    if heights[i] > eps_c:
        return None
    return ContactEvent(float(t), i * L / heights.size, i, float(heights[i]), phase)


def _predicted_contact(beam: BeamState, dt: float, eps_c: float, phase: str, step: int):
    """First time in ``[t, t + dt]`` where the linearly extrapolated height reaches ``eps_c``."""
    h = beam.height
    rate = beam.eta_dot
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(rate < 0, (h - eps_c) / -rate, np.inf)
    tau = np.where(h <= eps_c, 0.0, tau)
    i = int(np.argmin(tau))
    if tau[i] > dt:
        return None
    return ContactEvent(beam.t + float(tau[i]), i * beam.dx, i, float(h[i] + tau[i] * rate[i]), phase, step)


def coupled_step(sim: SimState, dt: float, params, coupling, eps_c: float = 0.0, forcing=None,
                 phase: str = "halted"):
    """One strongly coupled step; returns ``(SimState, StepInfo)``.

    The new geometry is extrapolated from the current beam state and held
    fixed while the interface velocity is iterated to a fixed point with
    Aitken relaxation: fluid solve with imposed velocity, load from the fluid
    residual, beam update.
    """
    b0 = sim.beam
    event = _predicted_contact(b0, dt, eps_c, phase, sim.step)
    if event is not None:
        raise ContactDuringStep(event)
    h_new = b0.height + dt * b0.eta_dot
    system = FluidStepSystem(sim.fluid, h_new, dt, params, forcing=forcing, convection=coupling.convection)

    v = np.array(b0.eta_dot)
    residuals = []
    omega = coupling.omega0
    r_prev = None
    for it in range(1, coupling.max_iter + 1):
        sol = system.solve(v)
        load = traction_on_beam(sol, system.grid)
        b1 = beam_mod.beam_step(b0, load.load, dt, params, scheme="implicit_euler")
        r = b1.eta_dot - v
        scale = max(np.linalg.norm(b1.eta_dot), np.linalg.norm(v))
        res = float(np.linalg.norm(r) / scale) if scale > 0 else 0.0
        residuals.append(res)
        if res <= coupling.tol or np.linalg.norm(r) <= 1e-14:
            break
        if r_prev is not None:
            dr = r - r_prev
            denom = float(dr @ dr)
            if denom > 0:
                omega = -omega * float(r_prev @ dr) / denom
        omega = float(np.clip(omega, -2.0, 2.0)) if np.isfinite(omega) else coupling.omega0
        if omega == 0.0:
            omega = coupling.omega0
        r_prev = r
        v = v + omega * r
    else:
        raise CouplingError(f"coupling did not converge in {coupling.max_iter} iterations", residuals)

    # back-solve with the accepted beam velocity so the trace matches exactly
    sol = system.solve(b1.eta_dot, pressure=True)
    load = traction_on_beam(sol, system.grid)
    fluid = system.state(sol)
    U = sol.U
    diss_mu = dt * params.mu * float(U @ (system.K @ U))
    diss_gamma = dt * beam_mod.damping_rate(b1.eta_dot, params, b1.L)
    div = (system.B @ U) / mac.cell_areas(system.grid, system.h_new)
    info = StepInfo(
        step=sim.step + 1,
        t=b1.t,
        dt=dt,
        iterations=it,
        residual=residuals[-1],
        diss_mu=diss_mu,
        diss_gamma=diss_gamma,
        div_max=float(np.max(np.abs(div))),
        mean_eta_dot=float(np.mean(b1.eta_dot)),
        trace_mismatch=float(np.max(np.abs(fluid.interface_velocity - b1.eta_dot))),
        gauge=load.gauge,
        cfl=system.cfl,
    )
    return SimState(fluid, b1, sim.step + 1), info


@dataclass(frozen=True)
class Sample:
    step: int
    t: float
    fluid: FluidState
    beam: BeamState


@dataclass
class Trajectory:
    config: RunConfig
    samples: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    events: list = field(default_factory=list)
    eps_c: float = 0.0
    initial: Optional[Sample] = None
    last_state: Optional[SimState] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def final(self) -> Sample:
        return self.samples[-1]

    def heights(self) -> np.ndarray:
        return np.array([s.beam.height for s in self.samples])

    def min_heights(self) -> np.ndarray:
        return self.heights().min(axis=1)

    def height_history(self):
        from ..geometry import HeightHistory

        return HeightHistory(self.times, self.heights(), self.config.params.L, self.config.grid.M)

    def cumulative_dissipation(self):
        """Cumulative viscous and damping dissipation at every sample."""
        n_steps = len(self.steps)
        mu = np.concatenate([[0.0], np.cumsum([s.diss_mu for s in self.steps])]) if n_steps else np.zeros(1)
        gam = np.concatenate([[0.0], np.cumsum([s.diss_gamma for s in self.steps])]) if n_steps else np.zeros(1)
        idx = [s.step for s in self.samples]
        return mu[idx], gam[idx]

    @property
    def halted(self) -> bool:
        return bool(self.events)


def cfl_substeps(sim: SimState, dt: float, safety: float) -> int:
    g = sim.fluid.grid
    umax = max(float(np.max(np.abs(sim.fluid.u1))), float(np.max(np.abs(sim.fluid.u2))))
    if umax == 0.0:
        return 1
    hmin = float(np.min(sim.fluid.h))
    dt_cfl = safety * min(g.dx, hmin * g.dz) / umax
    return max(1, math.ceil(dt / dt_cfl - 1e-12))


def run(config: RunConfig, start: Optional[SimState] = None, on_sample: Optional[Callable] = None,
        forcing=None, trajectory: Optional[Trajectory] = None, until_step: Optional[int] = None) -> Trajectory:
    """Integrate to ``T``; stops at the first contact event."""
    from .initial import initial_state

    grid_cfg = config.grid
    if start is None:
        start = initial_state(config)
    h0min = float(np.min(start.beam.height)) if trajectory is None or trajectory.initial is None \
        else float(np.min(trajectory.initial.beam.height))
    eps_c = config.contact.threshold(h0min)
    if trajectory is None:
        trajectory = Trajectory(config, eps_c=eps_c)
        trajectory.initial = Sample(start.step, start.t, start.fluid, start.beam)
        trajectory.samples.append(trajectory.initial)
    phase = "halted" if config.contact.policy == "halt" else "flagged"

    event = detect_contact(start, eps_c, phase=phase)
    sim = start
    n_total = grid_cfg.n_steps if until_step is None else until_step
    dt = grid_cfg.dt
    while sim.step < n_total and event is None:
        nsub = cfl_substeps(sim, dt, config.coupling.cfl_safety)
        t_target = (sim.step + 1) * dt
        sub = sim
        infos = []
        try:
            for k in range(nsub):
                sub_dt = (t_target - sub.t) / (nsub - k)
                nxt, info = coupled_step(sub, sub_dt, config.params, config.coupling, eps_c, forcing, phase)
                infos.append(info)
                sub = SimState(nxt.fluid, nxt.beam, sim.step + 1 if k == nsub - 1 else sim.step)
        except ContactDuringStep as exc:
            event = exc.event
            break
        combined = infos[0]
        for info in infos[1:]:
            combined = _combine(combined, info)
        trajectory.steps.append(StepInfo(**{**combined.to_dict(), "step": sim.step + 1}))
        sim = sub
        if nsub > 1:
            log.info("step %d used %d CFL substeps", sim.step, nsub)
        event = detect_contact(sim, eps_c, phase=phase)
        if event is not None:
            event = ContactEvent(event.time, event.x, event.index, event.min_height, phase, sim.step)
        if sim.step % grid_cfg.save_every == 0 or sim.step == n_total or event is not None:
            sample = Sample(sim.step, sim.t, sim.fluid, sim.beam)
            trajectory.samples.append(sample)
            if on_sample is not None:
                on_sample(sample, sim)
    if event is not None:
        trajectory.events.append(event)
        if trajectory.samples[-1].step != sim.step:
            trajectory.samples.append(Sample(sim.step, sim.t, sim.fluid, sim.beam))
        log.warning("contact at t=%.6g x=%.4g (min height %.3g)", event.time, event.x, event.min_height)
    trajectory.last_state = sim
    return trajectory


def _combine(a: StepInfo, b: StepInfo) -> StepInfo:
    return StepInfo(
        step=b.step,
        t=b.t,
        dt=a.dt + b.dt,
        iterations=a.iterations + b.iterations,
        residual=max(a.residual, b.residual),
        diss_mu=a.diss_mu + b.diss_mu,
        diss_gamma=a.diss_gamma + b.diss_gamma,
        div_max=max(a.div_max, b.div_max),
        mean_eta_dot=max(a.mean_eta_dot, b.mean_eta_dot, key=abs),
        trace_mismatch=max(a.trace_mismatch, b.trace_mismatch),
        gauge=b.gauge,
        cfl=max(a.cfl, b.cfl),
    )
