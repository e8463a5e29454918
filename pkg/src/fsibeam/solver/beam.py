"""Damped periodic beam ``rho_s eta_tt + alpha eta_xxxx - beta eta_xx - gamma eta_txx = phi``."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SCHEMES = ("trapezoid", "implicit_euler")


@dataclass(frozen=True)
class BeamState:
    eta: np.ndarray
    eta_dot: np.ndarray
    t: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        eta_dot = np.array(self.eta_dot, dtype=float)
        if eta.shape != eta_dot.shape or eta.ndim != 1:
            raise ValueError("displacement and velocity must be matching 1-D arrays")
        eta.setflags(write=False)
        eta_dot.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "eta_dot", eta_dot)

    @property
    def height(self) -> np.ndarray:
        return 1.0 + self.eta

    @property
    def dx(self) -> float:
        return self.L / self.eta.size


def wavenumbers(n: int, L: float) -> np.ndarray:
    return 2 * np.pi * np.fft.rfftfreq(n, d=L / n)


def _stiffness_symbol(k, params):
    return params.beta * k**2 + params.alpha * k**4


def beam_step(state: BeamState, phi, dt: float, params, scheme: str = "trapezoid") -> BeamState:
    """Advance one step per Fourier mode. The mean of the load is not felt:
    the zero mode of the velocity is held at zero (volume conservation)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown beam scheme {scheme!r}")
    if dt <= 0:
        raise ValueError("time step must be positive")
    n = state.eta.size
    k = wavenumbers(n, state.L)
    kappa = _stiffness_symbol(k, params)
    damp = params.gamma * k**2
    rho = params.rho_s
    e0 = np.fft.rfft(state.eta)
    v0 = np.fft.rfft(state.eta_dot)
    f = np.fft.rfft(np.asarray(phi, dtype=float))
    if scheme == "implicit_euler":
        v1 = (rho * v0 / dt - kappa * e0 + f) / (rho / dt + damp + kappa * dt)
        v1[0] = 0.0
        e1 = e0 + dt * v1
    else:
        v1 = (f + v0 * (rho / dt - damp / 2 - kappa * dt / 4) - kappa * e0) / (rho / dt + damp / 2 + kappa * dt / 4)
        v1[0] = 0.0
        e1 = e0 + dt * (v0 + v1) / 2
    return BeamState(np.fft.irfft(e1, n), np.fft.irfft(v1, n), state.t + dt, state.L)


def _mode_sum(values, L, symbol):
    n = values.size
    c = np.fft.fft(np.asarray(values, dtype=float)) / n
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    return L * float(np.sum(symbol(k) * np.abs(c) ** 2))


def kinetic_energy(state: BeamState, params) -> float:
    return 0.5 * params.rho_s * _mode_sum(state.eta_dot, state.L, lambda k: np.ones_like(k))


def elastic_energy(state: BeamState, params) -> float:
    return 0.5 * _mode_sum(state.eta, state.L, lambda k: _stiffness_symbol(k, params))


def damping_rate(eta_dot, params, L: float) -> float:
    """``gamma * int |d/dx eta_dot|^2``."""
    return params.gamma * _mode_sum(eta_dot, L, lambda k: k**2)


def with_time(state: BeamState, t: float) -> BeamState:
    return replace(state, t=t)
