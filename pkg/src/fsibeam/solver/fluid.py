"""Fluid state and the semi-implicit ALE Navier-Stokes step on the mapped channel."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import mac
from .mac import MacGrid

log = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    pass


class CFLWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FluidState:
    """Staggered velocities and pressure; ``h`` is the channel height the
    velocities live on and ``u2[:, -1]`` is the interface velocity."""

    u1: np.ndarray  # (nx, nz)
    u2: np.ndarray  # (nx, nz + 1), bottom row zero
    p: np.ndarray  # (nx, nz)
    h: np.ndarray  # (nx,)
    t: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        arrays = {}
        for name in ("u1", "u2", "p", "h"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            arrays[name] = a
        nx, nz = arrays["u1"].shape
        if arrays["u2"].shape != (nx, nz + 1) or arrays["p"].shape != (nx, nz) or arrays["h"].shape != (nx,):
            raise ValueError("inconsistent fluid array shapes")
        if np.any(arrays["u2"][:, 0] != 0.0):
            raise ValueError("no-slip floor violated: u2 must vanish at z = 0")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @classmethod
    def rest(cls, h, nz: int, L: float, t: float = 0.0) -> "FluidState":
        nx = len(h)
        return cls(np.zeros((nx, nz)), np.zeros((nx, nz + 1)), np.zeros((nx, nz)), h, t, L)

    @classmethod
    def from_vector(cls, grid: MacGrid, U, P, h, t: float = 0.0) -> "FluidState":
        u1, u2 = grid.unpack(np.asarray(U, dtype=float))
        p = np.zeros(grid.npress) if P is None else np.asarray(P, dtype=float)
        return cls(u1, u2, p.reshape(grid.nx, grid.nz), h, t, grid.L)

    @property
    def grid(self) -> MacGrid:
        return MacGrid(self.u1.shape[0], self.u1.shape[1], self.L)

    @property
    def U(self) -> np.ndarray:
        return self.grid.pack(self.u1, self.u2)

    @property
    def interface_velocity(self) -> np.ndarray:
        return self.u2[:, -1]

    def kinetic_energy(self, rho_f: float) -> float:
        U = self.U
        return 0.5 * rho_f * float(U @ (mac.mass_weights(self.grid, self.h) * U))

    def divergence(self) -> np.ndarray:
        """Per-cell mapped divergence (net flux over cell area)."""
        g = self.grid
        return (mac.divergence_matrix(g, self.h) @ self.U / mac.cell_areas(g, self.h)).reshape(g.nx, g.nz)

    def dissipation_rate(self, mu: float) -> float:
        """``mu * int |grad u|^2``."""
        G, w = mac.gradient_matrix(self.grid, self.h)
        gu = G @ self.U
        return mu * float(gu @ (w * gu))

    def sample(self, x, y):
        """Physical velocity at points ``(x, y)`` with ``0 <= y <= h(x)``; bilinear
        in the mapped coordinates, zero outside the channel."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.grid
        hq = np.interp(x, g.x, self.h, period=self.L)
        with np.errstate(divide="ignore", invalid="ignore"):
            zq = np.where(hq > 0, y / hq, np.inf)
        inside = (zq >= 0) & (zq <= 1)
        zq = np.where(inside, zq, 0.0)
        u1w = np.concatenate([np.zeros((g.nx, 1)), self.u1, np.zeros((g.nx, 1))], axis=1)
        z1 = np.concatenate([[0.0], g.zc, [1.0]])
        v1 = _bilinear(u1w, g.xf[0], g.dx, z1, x, zq, self.L)
        v2 = _bilinear(self.u2, 0.0, g.dx, g.zf, x, zq, self.L)
        return np.where(inside, v1, 0.0), np.where(inside, v2, 0.0)


def _bilinear(values, x0, dx, znodes, xq, zq, L):
    nx = values.shape[0]
    s = np.mod(xq - x0, L) / dx
    i0 = np.floor(s).astype(int)
    fx = s - i0
    i0 = np.mod(i0, nx)
    i1 = np.mod(i0 + 1, nx)
    j0 = np.clip(np.searchsorted(znodes, zq, side="right") - 1, 0, len(znodes) - 2)
    fz = (zq - znodes[j0]) / (znodes[j0 + 1] - znodes[j0])
    return ((1 - fx) * (1 - fz) * values[i0, j0] + fx * (1 - fz) * values[i1, j0]
            + (1 - fx) * fz * values[i0, j0 + 1] + fx * fz * values[i1, j0 + 1])


@dataclass
class FluidSolution:
    U: np.ndarray
    P: np.ndarray | None = None
    lift_load: np.ndarray | None = None  # mean-free load from testing with interface lifts
    interface_residual: np.ndarray | None = None  # momentum residual on interface unknowns


@dataclass(frozen=True)
class Traction:
    load: np.ndarray  # mean-free force per unit length on the beam
    gauge: float  # removed constant mode (pressure normalization)
    raw: np.ndarray = field(repr=False, default=None)


def forcing_vector(grid: MacGrid, h, forcing, t: float) -> np.ndarray:
    """Body force sampled at the velocity unknowns; ``forcing(x, y, t) -> (f1, f2)``."""
    m = mac.Metrics.of(grid, h)
    X1, Z1 = np.meshgrid(grid.xf, grid.zc, indexing="ij")
    f1, _ = forcing(X1, Z1 * m.hf[:, None], t)
    X2, Z2 = np.meshgrid(grid.x, grid.zf[1:], indexing="ij")
    _, f2 = forcing(X2, Z2 * m.h[:, None], t)
    return np.concatenate([np.broadcast_to(f1, X1.shape).ravel(), np.broadcast_to(f2, X2.shape).ravel()])


class FluidStepSystem:
    """One backward-Euler ALE step for fixed old/new geometry, factored once.

    Velocities are sought as discrete curls of a corner stream function, so
    they are solenoidal by construction and the pressure drops out. The
    unknowns are the interior stream values plus the net channel flux; the
    interface velocity enters through the top stream values. ``solve(v)``
    reuses the factorization, which is what the coupling iteration needs.
    """

    def __init__(self, state: FluidState, h_new, dt: float, params, forcing=None,
                 convection: bool = True, steady: bool = False, advecting=None, t_new=None):
        self.grid = grid = state.grid
        self.h_old = np.asarray(state.h, dtype=float)
        self.h_new = np.asarray(h_new, dtype=float)
        if np.min(self.h_new) <= 0:
            raise LinearSolveError("channel height must stay positive inside a fluid solve")
        self.dt = dt
        self.t_new = state.t + dt if t_new is None else t_new
        rho, mu = params.rho_f, params.mu
        W0 = mac.mass_weights(grid, self.h_old)
        W1 = mac.mass_weights(grid, self.h_new)
        U0 = state.U
        self.K = mac.stiffness_matrix(grid, self.h_new)
        self.B = mac.divergence_matrix(grid, self.h_new)
        A = mu * self.K
        rhs = np.zeros(grid.nu)
        if not steady:
            A = A + sp.diags(0.5 * rho * (W0 + W1) / dt)
            rhs += rho * W0 * U0 / dt
        if convection:
            adv = U0 if advecting is None else advecting
            h_ref = self.h_old if not steady else self.h_new
            A = A + rho * mac.convection_matrix(grid, adv, self.h_new, h_ref, dt)
        if forcing is not None:
            rhs += rho * W1 * forcing_vector(grid, self.h_new, forcing, self.t_new)
        self.A = A.tocsr()
        self.rhs = rhs

        umax = float(np.max(np.abs(U0))) if U0.size else 0.0
        hmin = float(np.min(self.h_new))
        self.cfl = umax * dt / min(grid.dx, hmin * grid.dz) if umax > 0 else 0.0
        if convection and self.cfl > 1.0:
            warnings.warn(f"CFL number {self.cfl:.3g} exceeds 1", CFLWarning, stacklevel=2)

        nx, nz = grid.nx, grid.nz
        C = mac.curl_matrix(grid, self.h_new)
        corners = np.arange(nx * (nz + 1)).reshape(nx, nz + 1)
        top_cols = corners[:, -1]
        self._Cb = C[:, top_cols].tocsr()
        flux = sp.csr_matrix(self._Cb @ np.ones((nx, 1)))
        self._Cq = sp.hstack([C[:, corners[:, 1:-1].ravel()], flux]).tocsr()
        self._CqT = self._Cq.T.tocsr()
        self._CbT = self._Cb.T.tocsr()
        reduced = (self._CqT @ self.A @ self._Cq).tocsc()
        try:
            self._lu = splu(reduced, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearSolveError(f"fluid factorization failed: {exc}") from exc
        self._pressure_lu = None

    def solve(self, v, pressure: bool = False) -> FluidSolution:
        v = np.asarray(v, dtype=float)
        g = self.grid
        Ub = self._Cb @ mac.corner_antiderivative(v, g.L)
        q = self._lu.solve(self._CqT @ (self.rhs - self.A @ Ub))
        if not np.all(np.isfinite(q)):
            raise LinearSolveError("non-finite fluid solution")
        U = self._Cq @ q + Ub
        r = self.A @ U - self.rhs
        ell = mac.lift_transpose(self._CbT @ r, g.L)
        sol = FluidSolution(U, lift_load=-(ell - ell.mean()) / g.dx)
        if pressure:
            self.recover_pressure(sol)
        return sol

    def recover_pressure(self, sol: FluidSolution) -> FluidSolution:
        """Least-squares pressure from the interior momentum rows (consistent
        system, so the interior residual vanishes); mean pressure is zero."""
        g = self.grid
        inner, top = g.inner, g.top
        if self._pressure_lu is None:
            B_I = self.B[:, inner]
            N = (B_I @ B_I.T).tocsc()[1:, 1:]
            self._B_I = B_I
            self._pressure_lu = splu(N.tocsc(), permc_spec="COLAMD")
        r = self.A @ sol.U - self.rhs
        P = np.concatenate([[0.0], self._pressure_lu.solve((self._B_I @ r[inner])[1:])])
        P -= P.mean()
        sol.P = P
        sol.interface_residual = (r - self.B.T @ P)[top]
        return sol

    def residual(self, U, P) -> np.ndarray:
        return self.A @ U - self.B.T @ P - self.rhs

    def state(self, sol: FluidSolution) -> FluidState:
        return FluidState.from_vector(self.grid, sol.U, sol.P, self.h_new, self.t_new)


def traction_on_beam(solution: FluidSolution, grid: MacGrid) -> Traction:
    """Force per unit length exerted by the fluid on the beam.

    With a pressure, this is minus the momentum residual on the interface
    unknowns; its mean is the free pressure constant and is returned as the
    gauge. Without one, the mean-free load obtained by testing the residual
    with solenoidal interface lifts is used and the gauge is unknown (nan).
    """
    if solution.interface_residual is not None:
        raw = -np.asarray(solution.interface_residual) / grid.dx
        gauge = float(raw.mean())
        return Traction(raw - gauge, gauge, raw)
    return Traction(np.asarray(solution.lift_load), float("nan"), None)


def fluid_step(fluid: FluidState, h, h_dot, dt: float, params, forcing=None,
               convection: bool = True) -> FluidState:
    """Advance the fluid to height ``h`` with interface velocity ``h_dot``."""
    system = FluidStepSystem(fluid, h, dt, params, forcing=forcing, convection=convection)
    return system.state(system.solve(h_dot, pressure=True))


def steady_solve(grid: MacGrid, h, params, forcing=None, advecting=None, interface=None) -> FluidState:
    """Steady Stokes/Oseen problem on a static domain (used for verification)."""
    rest = FluidState.rest(h, grid.nz, grid.L)
    system = FluidStepSystem(rest, h, 1.0, params, forcing=forcing, convection=advecting is not None,
                             steady=True, advecting=advecting, t_new=0.0)
    v = np.zeros(grid.nx) if interface is None else interface
    return system.state(system.solve(v, pressure=True))
