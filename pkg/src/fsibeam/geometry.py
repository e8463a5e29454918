"""Beam heights, the vertical ALE stretch between two subgraph domains, and
lower envelopes of a height trajectory.

Heights are sampled on a uniform periodic grid ``x_i = i * L / Nx``.  Spatial
derivatives are centred periodic differences, except for clipped profiles
``[h - mu]_+`` whose derivative is carried along explicitly (chain rule on the
parent's derivative) so the kink is never smeared.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class EnvelopeError(RuntimeError):
    """Raised when no admissible lower envelope exists for the requested gap."""


def periodic_derivative(values: np.ndarray, L: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    dx = L / values.shape[-1]
    return (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1)) / (2.0 * dx)


def spectral_h2_norm(values: np.ndarray, L: float) -> np.ndarray:
    """Discrete H^2 norm(s) along the last axis via Fourier multipliers."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    coef = np.fft.fft(values, axis=-1) / n
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
    return np.sqrt(L * np.sum((1.0 + k**2) ** 2 * np.abs(coef) ** 2, axis=-1))


@dataclass(frozen=True)
class Deformation:
    """Periodic displacement ``eta`` with height ``h = 1 + eta``.

    ``slope`` optionally overrides the finite-difference derivative of ``h``;
    clipped profiles use it to keep the exact one-sided structure at kinks.
    """

    eta: np.ndarray
    L: float = 1.0
    M: float = np.inf
    slope: np.ndarray | None = None
    tol: float = 1e-12

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.ndim != 1:
            raise ValueError("eta must be one-dimensional")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        if self.slope is not None:
            slope = np.array(self.slope, dtype=float)
            if slope.shape != eta.shape:
                raise ValueError("slope shape does not match eta")
            slope.setflags(write=False)
            object.__setattr__(self, "slope", slope)
        h = 1.0 + eta
        if np.any(h < -self.tol) or np.any(h > self.M + self.tol):
            raise ValueError(
                f"height out of [0, M]: min={h.min():.3e}, max={h.max():.3e}, M={self.M}"
            )

    @classmethod
    def from_height(cls, h, L: float = 1.0, M: float = np.inf, slope=None) -> "Deformation":
        return cls(np.asarray(h, dtype=float) - 1.0, L=L, M=M, slope=slope)

    @property
    def h(self) -> np.ndarray:
        return 1.0 + self.eta

    @property
    def nx(self) -> int:
        return self.eta.size

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    def derivative(self) -> np.ndarray:
        if self.slope is not None:
            return np.array(self.slope)
        return periodic_derivative(self.h, self.L)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.h, dtype=dtype)

    def to_csv(self, path) -> None:
        write_height_csv(path, self.x, self.h)


def as_deformation(h, L: float | None = None) -> Deformation:
    """Accept a Deformation or a plain height array."""
    if isinstance(h, Deformation):
        if L is not None and not np.isclose(L, h.L):
            raise ValueError("period mismatch")
        return h
    return Deformation.from_height(h, L=1.0 if L is None else L)


def write_height_csv(path, x: np.ndarray, h: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "h"])
        for xi, hi in zip(x, h):
            writer.writerow([repr(float(xi)), repr(float(hi))])


def read_height_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def positive_part_shift(h, mu: float, L: float | None = None) -> Deformation:
    """``max(h - mu, 0)`` with derivative ``h' * 1{h > mu}``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    d = as_deformation(h, L)
    active = d.h > mu
    return Deformation.from_height(
        np.where(active, d.h - mu, 0.0), L=d.L, M=d.M, slope=np.where(active, d.derivative(), 0.0)
    )


def sublevel_slope_sup(h, mu: float, L: float | None = None) -> float:
    """Largest ``|h'|`` over nodes where ``h <= mu`` (0 if there are none)."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    d = as_deformation(h, L)
    if np.any(d.h < -d.tol):
        raise ValueError("height must be nonnegative")
    mask = d.h <= mu
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(d.derivative()[mask])))


def w1inf_distance(h1, h2, L: float | None = None) -> float:
    a, b = as_deformation(h1, L), as_deformation(h2, L)
    if a.nx != b.nx or not np.isclose(a.L, b.L):
        raise ValueError("grid mismatch")
    return float(np.max(np.abs(a.h - b.h)) + np.max(np.abs(a.derivative() - b.derivative())))


def w1inf_norm(h, L: float | None = None) -> float:
    d = as_deformation(h, L)
    return float(np.max(np.abs(d.h)) + np.max(np.abs(d.derivative())))


# ---------------------------------------------------------------------------
# ALE stretch


@dataclass(frozen=True)
class AleMap:
    """``chi(x, y) = (x, m(x) (y + 1) - 1)`` mapping the subgraph of ``target``
    (the lower height) onto the subgraph of ``source``."""

    m: np.ndarray
    dm: np.ndarray
    source: Deformation
    target: Deformation

    @property
    def L(self) -> float:
        return self.source.L

    def _interp(self, values, x):
        xs = self.source.x
        return np.interp(np.mod(x, self.L), xs, values, period=self.L)

    def chi(self, x, y):
        x = np.asarray(x, dtype=float)
        return x, self._interp(self.m, x) * (np.asarray(y) + 1.0) - 1.0

    def chi_inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        return x, (np.asarray(y) + 1.0) / self._interp(self.m, x) - 1.0

    def cofactor(self, x, y) -> np.ndarray:
        """Transposed cofactor of the Jacobian, shape ``(..., 2, 2)``."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        m = self._interp(self.m, x)
        dm = self._interp(self.dm, x)
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 0] = m
        out[..., 1, 0] = -dm * (y + 1.0)
        out[..., 1, 1] = 1.0
        return out


def ale_map(h, hb, L: float | None = None) -> AleMap:
    src, tgt = as_deformation(h, L), as_deformation(hb, L)
    if src.nx != tgt.nx:
        raise ValueError("grid mismatch")
    excess = tgt.h - src.h
    if np.any(excess > 1e-14 * max(1.0, np.max(np.abs(src.h)))):
        raise ValueError(f"lower height exceeds upper height by {excess.max():.3e}")
    if np.any(tgt.h < -tgt.tol):
        raise ValueError("lower height must be nonnegative")
    denom = tgt.h + 1.0
    m = (src.h + 1.0) / denom
    dm = (src.derivative() * denom - (src.h + 1.0) * tgt.derivative()) / denom**2
    return AleMap(m=m, dm=dm, source=src, target=tgt)


# ---------------------------------------------------------------------------
# Lower envelopes


@dataclass(frozen=True)
class HeightHistory:
    """Sampled height trajectory: ``heights[n]`` at ``times[n]``."""

    times: np.ndarray
    heights: np.ndarray
    L: float
    M: float = np.inf

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        hs = np.atleast_2d(np.asarray(self.heights, dtype=float))
        if t.ndim != 1 or hs.shape[0] != t.size:
            raise ValueError("times and heights disagree")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "heights", hs)

    @property
    def slopes(self) -> np.ndarray:
        return periodic_derivative(self.heights, self.L)


@dataclass(frozen=True)
class LowerEnvelope:
    values: np.ndarray  # (N, Nx), one row per interval
    slopes: np.ndarray
    edges: np.ndarray  # (N + 1,)
    t_k: np.ndarray
    delta: float
    epsilon: float
    N: int
    theta: float
    L: float
    holder_constant: float
    gamma0: float | None = None
    max_gap: float = 0.0
    min_margin: float = 0.0
    notes: dict = field(default_factory=dict)

    def interval_of(self, t: float) -> int:
        k = int(np.searchsorted(self.edges, t, side="right") - 1)
        return min(max(k, 0), self.N - 1)

    def row(self, k: int) -> Deformation:
        return Deformation.from_height(self.values[k], L=self.L, slope=self.slopes[k])

    def row_w1inf_norms(self) -> np.ndarray:
        return np.max(np.abs(self.values), axis=1) + np.max(np.abs(self.slopes), axis=1)

    def to_json(self, directory, stem: str = "envelope") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        x = np.arange(self.values.shape[1]) * self.L / self.values.shape[1]
        intervals = []
        for k in range(self.N):
            name = f"{stem}_k{k:04d}.csv"
            write_height_csv(directory / name, x, self.values[k])
            intervals.append(
                {"k": k, "t_start": float(self.edges[k]), "t_end": float(self.edges[k + 1]),
                 "t_k": float(self.t_k[k]), "file": name}
            )
        payload = {
            "parameters": {"delta": self.delta, "epsilon": self.epsilon, "N": self.N, "theta": self.theta},
            "L": self.L,
            "gamma0": self.gamma0,
            "holder_constant": self.holder_constant,
            "max_gap": self.max_gap,
            "min_margin": self.min_margin,
            "notes": self.notes,
            "intervals": intervals,
        }
        path = directory / f"{stem}.json"
        path.write_text(json.dumps(payload, indent=2))
        return path

    @classmethod
    def from_json(cls, path) -> "LowerEnvelope":
        path = Path(path)
        payload = json.loads(path.read_text())
        rows, t_k, edges = [], [], []
        for item in payload["intervals"]:
            _, h = read_height_csv(path.parent / item["file"])
            rows.append(h)
            t_k.append(item["t_k"])
            edges.append(item["t_start"])
        edges.append(payload["intervals"][-1]["t_end"])
        p = payload["parameters"]
        values = np.array(rows)
        # clipped rows: derivative of the parent is not stored, so recompute
        # with the chain-rule convention applied to the stored row
        slopes = np.where(values > 0, periodic_derivative(values, payload["L"]), 0.0)
        return cls(values=values, slopes=slopes, edges=np.array(edges), t_k=np.array(t_k),
                   delta=p["delta"], epsilon=p["epsilon"], N=p["N"], theta=p["theta"],
                   L=payload["L"], holder_constant=payload["holder_constant"],
                   gamma0=payload.get("gamma0"), max_gap=payload.get("max_gap", 0.0),
                   min_margin=payload.get("min_margin", 0.0), notes=payload.get("notes", {}))


def _c1_distance_matrix(heights: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    n = heights.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        out[i] = np.max(np.abs(heights - heights[i]), axis=1) + np.max(np.abs(slopes - slopes[i]), axis=1)
    return out


def _windowed_holder(dist: np.ndarray, times: np.ndarray, theta: float, window: float) -> float:
    lag = np.abs(times[:, None] - times[None, :])
    mask = (lag > 0) & (lag <= window * (1 + 1e-12))
    if not mask.any():
        return 0.0
    return float(np.max(dist[mask] / lag[mask] ** theta))


def build_lower_envelope(
    trajectory: HeightHistory,
    delta: float,
    theta: float = 0.2,
    gamma0: float | None = None,
    tol: float = 1e-12,
) -> LowerEnvelope:
    """Piecewise-constant-in-time profile ``[h(t_k) - 2 eps]_+`` below the
    trajectory with discrete W^{1,inf} gap at most ``delta``.

    ``eps`` is the largest value (bisection) with ``4 eps + slope_sup(2 eps) <= delta``
    over every sample; the interval count is the smallest with
    ``C dt^theta < eps`` where ``C`` is the Hoelder ratio over sample pairs at most
    one interval apart.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    H = trajectory.heights
    D = trajectory.slopes
    times = trajectory.times
    L = trajectory.L
    dx = L / H.shape[1]
    if np.any(H < -tol):
        raise ValueError("trajectory contains negative heights")

    def slope_sup(eps: float) -> float:
        mask = H <= 2.0 * eps
        return float(np.max(np.abs(D[mask]))) if mask.any() else 0.0

    def excess(eps: float) -> float:
        return 4.0 * eps + slope_sup(eps) - delta

    floor = 2.0 * dx * float(np.max(np.abs(D)))
    eps_max = 0.5 * float(np.max(H))
    if eps_max <= floor:
        raise EnvelopeError(f"trajectory too flat to resolve: max h/2={eps_max:.3e} <= floor {floor:.3e}")
    if excess(eps_max) <= 0:
        eps = eps_max
    else:
        lo = floor
        if excess(lo) > 0:
            raise EnvelopeError(
                f"no epsilon above grid floor {floor:.3e}: 4*eps + slope_sup = "
                f"{excess(lo) + delta:.4e} > delta = {delta:.4e} (slope sup {slope_sup(lo):.4e})"
            )
        hi = eps_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if excess(mid) <= 0:
                lo = mid
            else:
                hi = mid
        eps = lo

    dist = _c1_distance_matrix(H, D)
    T = float(times[-1] - times[0])
    max_gap = float(np.max(np.diff(times))) if times.size > 1 else T
    n_max = max(1, int(np.floor(T / max_gap + 1e-9))) if T > 0 else 1

    def admissible(n: int) -> bool:
        dt = T / n
        return _windowed_holder(dist, times, theta, dt) * dt**theta < eps

    if T == 0 or admissible(1):
        n_int = 1
    elif not admissible(n_max):
        n_int = n_max
        log.warning("trajectory sampling too coarse for eps=%.3e; using one sample per interval", eps)
    else:
        lo_n, hi_n = 1, n_max
        while hi_n - lo_n > 1:
            mid = (lo_n + hi_n) // 2
            if admissible(mid):
                hi_n = mid
            else:
                lo_n = mid
        n_int = hi_n
    dt_int = T / n_int if T > 0 else 1.0
    holder = _windowed_holder(dist, times, theta, dt_int)

    edges = times[0] + dt_int * np.arange(n_int + 1)
    edges[-1] = times[-1]
    idx = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, n_int - 1)
    h2 = spectral_h2_norm(H, L)
    values = np.zeros((n_int, H.shape[1]))
    slopes = np.zeros_like(values)
    t_k = np.zeros(n_int)
    for k in range(n_int):
        members = np.flatnonzero(idx == k)
        if members.size == 0:
            raise EnvelopeError(f"interval {k} contains no trajectory sample")
        best = members[np.argmin(h2[members])]
        t_k[k] = times[best]
        active = H[best] > 2.0 * eps
        values[k] = np.where(active, H[best] - 2.0 * eps, 0.0)
        slopes[k] = np.where(active, D[best], 0.0)

    rows, row_slopes = values[idx], slopes[idx]
    margin = H - rows
    gap = np.max(np.abs(margin), axis=1) + np.max(np.abs(D - row_slopes), axis=1)
    if np.any(margin < -tol) or np.any(gap > delta + tol):
        raise EnvelopeError(
            f"envelope verification failed: min margin {margin.min():.3e}, max gap {gap.max():.3e}"
        )
    return LowerEnvelope(
        values=values, slopes=slopes, edges=edges, t_k=t_k, delta=float(delta), epsilon=float(eps),
        N=n_int, theta=float(theta), L=L, holder_constant=holder, gamma0=gamma0,
        max_gap=float(gap.max()), min_margin=float(margin.min()),
        notes={"epsilon_floor": floor, "epsilon_max": eps_max, "t_k_rule": "min H2 sample in interval"},
    )


def history_from_deformations(times: Sequence[float], deformations: Sequence[Deformation]) -> HeightHistory:
    L = deformations[0].L
    return HeightHistory(np.asarray(times), np.array([d.h for d in deformations]), L, deformations[0].M)
