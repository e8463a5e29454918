"""Initial data: named profiles, compatibility checks and the gamma-regularization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fields import _cubic_columns, mollify_periodic, zeta
from ..geometry import read_height_csv
from . import mac
from .beam import BeamState
from .coupled import SimState
from .fluid import FluidState
from .mac import MacGrid


class InitialDataError(ValueError):
    def __init__(self, failures: dict):
        self.failures = dict(failures)
        text = "; ".join(f"{k}: max residual {v:.3g}" for k, v in self.failures.items())
        super().__init__(f"invalid initial data ({text})")


@dataclass(frozen=True)
class InitialTriple:
    eta0: np.ndarray
    eta1: np.ndarray
    u0: FluidState
    lift_height: float = 0.0

    @property
    def L(self) -> float:
        return self.u0.L

    @property
    def grid(self) -> MacGrid:
        return self.u0.grid

    def sim_state(self) -> SimState:
        return SimState(self.u0, BeamState(self.eta0, self.eta1, 0.0, self.L), 0)


def profile_shape(kind: str, x, L: float, center: float = 0.5, sharpness: int = 2, mode: int = 1):
    """Unit-amplitude, mean-free shapes; ``bump`` dips at ``center * L``."""
    x = np.asarray(x, dtype=float)
    theta = 2 * np.pi * (x / L - center)
    if kind == "rest":
        return np.zeros_like(x)
    if kind == "bump":
        s = ((1 + np.cos(theta)) / 2) ** sharpness
        return -(s - s.mean())
    if kind == "cosine":
        return np.cos(mode * theta)
    raise ValueError(f"unknown profile {kind!r}")


def lift_stream(grid: MacGrid, h, d, lift_height: float) -> np.ndarray:
    """Corner stream function ``b(x) zeta(y / lambda)`` realizing interface velocity ``d``."""
    m = mac.Metrics.of(grid, h)
    b = mac.corner_antiderivative(d, grid.L)
    y = m.hf[:, None] * grid.zf[None, :]
    z, _ = zeta(y / lift_height)
    return b[:, None] * z


def lifted_velocity(grid: MacGrid, h, d, lift_height: float) -> FluidState:
    """Solenoidal fluid state whose interface trace is exactly ``d``."""
    h = np.asarray(h, dtype=float)
    if lift_height >= np.min(0.5 * (h + np.roll(h, -1))):
        raise ValueError("lift height must lie below the channel")
    psi = lift_stream(grid, h, d, lift_height)
    U = mac.velocities_from_stream(grid, h, psi)
    return FluidState.from_vector(grid, U, None, h)


def validate_initial_data(eta0, eta1, u0: FluidState, tol: float = 1e-10) -> InitialTriple:
    """Check positivity, zero mean velocity, solenoidality and trace compatibility.

    Every failing condition is reported with its maximal residual.
    """
    eta0 = np.asarray(eta0, dtype=float)
    eta1 = np.asarray(eta1, dtype=float)
    failures = {}
    if eta0.shape != eta1.shape or u0.h.shape != eta0.shape:
        raise ValueError("initial arrays live on different grids")
    hmin = float(np.min(1 + eta0))
    if not hmin > 0:
        failures["positive height"] = -hmin
    scale = max(1.0, float(np.max(np.abs(eta1))))
    mean1 = abs(float(np.mean(eta1)))
    if mean1 > tol * scale:
        failures["mean-free velocity"] = mean1
    geo = float(np.max(np.abs(u0.h - (1 + eta0))))
    if geo > tol:
        failures["fluid height matches displacement"] = geo
    if hmin > 0 and geo <= tol:
        div = float(np.max(np.abs(u0.divergence())))
        if div > tol * max(1.0, float(np.max(np.abs(u0.U)))):
            failures["divergence"] = div
    trace = float(np.max(np.abs(u0.interface_velocity - eta1)))
    if trace > tol * scale:
        failures["interface trace"] = trace
    if failures:
        raise InitialDataError(failures)
    return InitialTriple(eta0, eta1, u0)


def regularize_initial_data(triple: InitialTriple, gamma: float, lift_height: float | None = None) -> InitialTriple:
    """Smooth the data at scale ``gamma`` while keeping it compatible.

    The displacement and velocity are mollified; the fluid velocity is split
    into a lift of the interface velocity plus a remainder with zero trace.
    The remainder is compressed vertically by ``sigma = 1 + 2 C gamma / lambda``
    (``C`` the measured sup-norm change of the displacement per unit ``gamma``)
    so it fits under the smoothed interface, mollified in ``x``, and the lift of
    the smoothed interface velocity is added back.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    grid = triple.grid
    L = grid.L
    eta0, eta1 = triple.eta0, triple.eta1
    h0 = 1 + eta0
    lam = lift_height or triple.lift_height or 0.5 * float(np.min(h0))
    eta0_g = mollify_periodic(eta0, gamma, L)
    eta1_g = mollify_periodic(eta1, gamma, L)
    eta1_g = eta1_g - eta1_g.mean()
    h0_g = 1 + eta0_g
    if not lam < float(np.min(0.5 * (h0_g + np.roll(h0_g, -1)))) or not lam < float(np.min(0.5 * (h0 + np.roll(h0, -1)))):
        raise ValueError(f"lift height {lam:.3g} is infeasible for minimum height {np.min(h0_g):.3g}")
    C = float(np.max(np.abs(eta0_g - eta0))) / gamma
    sigma = 1 + 2 * C * gamma / lam

    psi0 = mac.stream_from_velocities(grid, h0, triple.u0.U)
    remainder = psi0 - lift_stream(grid, h0, eta1, lam)
    m_old = mac.Metrics.of(grid, h0)
    m_new = mac.Metrics.of(grid, h0_g)
    # sample the remainder at sigma * y' in the old column, in mapped coordinates
    zq = sigma * (m_new.hf[:, None] * grid.zf[None, :]) / m_old.hf[:, None]
    contracted = _cubic_columns(remainder, 0.0, grid.dz, zq)
    contracted[:, 0] = 0.0
    contracted[:, -1] = 0.0
    smoothed = np.stack([mollify_periodic(contracted[:, j], gamma, L) for j in range(grid.nz + 1)], axis=1)
    psi = lift_stream(grid, h0_g, eta1_g, lam) + smoothed
    psi[:, 0] = 0.0
    U = mac.velocities_from_stream(grid, h0_g, psi)
    u0 = FluidState.from_vector(grid, U, None, h0_g)
    return InitialTriple(eta0_g, eta1_g, u0, lam)


def _load_profile(cfg, path_key: str, n: int):
    """Second CSV column: height ``1 + eta`` for the displacement file, velocity otherwise."""
    path = getattr(cfg.initial, path_key)
    _, values = read_height_csv(cfg.resolve(path))
    if values.size != n:
        raise ValueError(f"{path} has {values.size} nodes, grid has {n}")
    return values - 1.0 if path_key == "eta0_file" else values


def initial_triple(config) -> InitialTriple:
    g = config.grid
    L = config.params.L
    grid = MacGrid(g.nx, g.nz, L)
    ini = config.initial
    x = grid.x
    if ini.profile == "file":
        eta0 = _load_profile(config, "eta0_file", g.nx)
    else:
        eta0 = ini.amplitude * profile_shape(ini.profile, x, L, ini.center, ini.sharpness, ini.mode)
    if ini.eta1_file:
        eta1 = _load_profile(config, "eta1_file", g.nx)
        eta1 = eta1 - eta1.mean()
    else:
        kind = ini.velocity_profile or ("bump" if ini.profile == "file" else ini.profile)
        eta1 = ini.velocity * profile_shape(kind, x, L, ini.center, ini.sharpness, ini.mode)
    h0 = 1 + eta0
    lam = ini.lift_height or 0.5 * float(np.min(h0))
    if np.any(eta1 != 0):
        u0 = lifted_velocity(grid, h0, eta1, lam)
    else:
        u0 = FluidState.rest(h0, g.nz, L)
    triple = validate_initial_data(eta0, eta1, u0)
    triple = InitialTriple(triple.eta0, triple.eta1, triple.u0, lam)
    if ini.regularize and config.params.gamma > 0:
        triple = regularize_initial_data(triple, config.params.gamma, lam)
    return triple


def initial_state(config) -> SimState:
    return initial_triple(config).sim_state()
