"""Velocity fields on the fixed container ``(0, L) x (-1, 2M)``.

The container is sampled on a collocated node grid, periodic in ``x`` and
including both ends in ``y``.  Nodes are tagged by region relative to a beam
height ``h``: substrate (``y <= 0``), fluid (``0 < y < h``) and the virtual
medium above the beam (``y >= h``), where an admissible field equals
``(0, d(x))``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import convolve1d

from .geometry import Deformation, ale_map, as_deformation

SUBSTRATE, FLUID, VIRTUAL = 0, 1, 2


class TraceMismatchError(ValueError):
    pass


class IntegrationPathError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid and elementary operators


@dataclass(frozen=True)
class ContainerGrid:
    nx: int
    ny: int
    L: float = 1.0
    M: float = 2.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid too small")
        if self.M <= 0:
            raise ValueError("M must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dy(self) -> float:
        return (2.0 * self.M + 1.0) / (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return -1.0 + np.arange(self.ny) * self.dy

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def y_weights(self) -> np.ndarray:
        w = np.full(self.ny, self.dy)
        w[0] = w[-1] = 0.5 * self.dy
        return w

    def cell_weights(self) -> np.ndarray:
        return self.dx * self.y_weights()[None, :] * np.ones((self.nx, 1))

    def tags(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        y = self.y[None, :]
        out = np.full((self.nx, self.ny), FLUID, dtype=np.int8)
        out[np.broadcast_to(y <= 0.0, out.shape)] = SUBSTRATE
        out[(y >= h[:, None]) & (y > 0.0)] = VIRTUAL
        return out


def ddx(f: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * dx)


def ddy(f: np.ndarray, dy: float) -> np.ndarray:
    return np.gradient(f, dy, axis=1, edge_order=2)


def perp_grad(psi: np.ndarray, grid: ContainerGrid):
    """Discrete ``(-d_y psi, d_x psi)``."""
    return -ddy(psi, grid.dy), ddx(psi, grid.dx)


def divergence(u1: np.ndarray, u2: np.ndarray, grid: ContainerGrid) -> np.ndarray:
    return ddx(u1, grid.dx) + ddy(u2, grid.dy)


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, and its derivative."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    ti = np.where(inside, t, 0.5)
    f = np.exp(-1.0 / ti)
    g = np.exp(-1.0 / (1.0 - ti))
    val = np.where(inside, f / (f + g), np.where(t >= 1.0, 1.0, 0.0))
    der = np.where(inside, f * g * (1.0 / ti**2 + 1.0 / (1.0 - ti) ** 2) / (f + g) ** 2, 0.0)
    return val, der


def zeta(s):
    """Lift profile: 0 for s <= 1/2, 1 for s >= 1; returns (value, derivative)."""
    val, der = smooth_step(2.0 * np.asarray(s, dtype=float) - 1.0)
    return val, 2.0 * der


def antiderivative(d: np.ndarray, L: float) -> np.ndarray:
    """Mean-free periodic antiderivative by Fourier division."""
    d = np.asarray(d, dtype=float)
    n = d.size
    coef = np.fft.rfft(d)
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=L / n)
    out = np.zeros_like(coef)
    out[1:] = coef[1:] / (1j * k[1:])
    if n % 2 == 0:
        out[-1] = 0.0
    return np.fft.irfft(out, n)


def _check_mean_free(d: np.ndarray, tol: float = 1e-12) -> None:
    if abs(np.mean(d)) > tol * max(1.0, float(np.max(np.abs(d)))):
        raise ValueError(f"d is not mean-free (mean {np.mean(d):.3e})")


# ---------------------------------------------------------------------------
# field types


@dataclass(frozen=True)
class ExtendedField:
    u1: np.ndarray
    u2: np.ndarray
    grid: ContainerGrid
    h: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.grid.nx, self.grid.ny)
        for name in ("u1", "u2"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.h is not None:
            object.__setattr__(self, "h", np.asarray(self.h, dtype=float))

    @property
    def tags(self) -> np.ndarray:
        if self.h is None:
            raise ValueError("field carries no height")
        return self.grid.tags(self.h)

    def divergence(self) -> np.ndarray:
        return divergence(self.u1, self.u2, self.grid)

    def top_trace(self) -> np.ndarray:
        return np.array(self.u2[:, -1])

    def __sub__(self, other: "ExtendedField") -> "ExtendedField":
        return ExtendedField(self.u1 - other.u1, self.u2 - other.u2, self.grid, self.h)

    def __add__(self, other: "ExtendedField") -> "ExtendedField":
        return ExtendedField(self.u1 + other.u1, self.u2 + other.u2, self.grid, self.h)

    def scaled(self, c: float) -> "ExtendedField":
        return ExtendedField(c * self.u1, c * self.u2, self.grid, self.h)

    def l2_norm(self, mask: np.ndarray | None = None) -> float:
        w = self.grid.cell_weights()
        if mask is not None:
            w = w * mask
        return float(np.sqrt(np.sum(w * (self.u1**2 + self.u2**2))))

    def region_violations(self) -> dict:
        """Max deviations from the region conditions of an admissible field."""
        tags = self.tags
        sub = tags == SUBSTRATE
        vir = tags == VIRTUAL
        d = self.u2[:, -1][:, None] * np.ones_like(self.u2)
        return {
            "substrate": float(np.max(np.abs(np.hypot(self.u1, self.u2)[sub]), initial=0.0)),
            "virtual_u1": float(np.max(np.abs(self.u1[vir]), initial=0.0)),
            "virtual_u2": float(np.max(np.abs((self.u2 - d)[vir]), initial=0.0)),
        }

    def restrict(self) -> "FluidSample":
        mask = self.tags == FLUID
        return FluidSample(np.where(mask, self.u1, 0.0), np.where(mask, self.u2, 0.0), mask,
                           self.top_trace(), self.grid)

    def save(self, path) -> None:
        save_grid_arrays(path, self.grid, {"u1": self.u1, "u2": self.u2},
                         extra={"h": None if self.h is None else self.h.tolist()})

    @classmethod
    def load(cls, path) -> "ExtendedField":
        grid, arrays, extra = load_grid_arrays(path)
        return cls(arrays["u1"], arrays["u2"], grid, extra.get("h"))


@dataclass(frozen=True)
class FluidSample:
    """Values on the fluid-tagged nodes of a container grid."""

    u1: np.ndarray
    u2: np.ndarray
    mask: np.ndarray
    d: np.ndarray
    grid: ContainerGrid


@dataclass(frozen=True)
class StreamFunction:
    psi: np.ndarray
    b: np.ndarray
    contact: np.ndarray
    grid: ContainerGrid
    h: np.ndarray | None = None
    path_residual: float = 0.0

    def save(self, path) -> None:
        save_grid_arrays(path, self.grid, {"psi": self.psi},
                         extra={"b": self.b.tolist(), "contact": self.contact.tolist(),
                                "h": None if self.h is None else self.h.tolist()})


@dataclass(frozen=True)
class CouplePair:
    w: ExtendedField
    d: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))

    def trace_mismatch(self) -> float:
        return float(np.max(np.abs(self.w.u2[:, -1] - self.d)))

    def mean(self) -> float:
        return float(np.mean(self.d))


@dataclass(frozen=True)
class SobolevConfig:
    kappa: float = 0.25
    s: float = 0.1
    stride: int = 1  # y-subsampling of the Gagliardo double sum

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ValueError("kappa must lie in (0, 1/2)")
        if not 0.0 <= self.s < self.kappa / 2:
            raise ValueError(f"s must lie in [0, kappa/2) = [0, {self.kappa / 2})")
        if self.stride < 1:
            raise ValueError("stride must be positive")


# ---------------------------------------------------------------------------
# binary layout shared with checkpoints of container fields

_MAGIC = b"FSBGRID1"


def save_grid_arrays(path, grid: ContainerGrid, arrays: dict, extra: dict | None = None) -> None:
    path = Path(path)
    names = sorted(arrays)
    header = {"nx": grid.nx, "ny": grid.ny, "L": grid.L, "M": grid.M, "dtype": "<f8", "arrays": names}
    head = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes(order="C"))
    sidecar = dict(header, **(extra or {}))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_grid_arrays(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a container-grid file")
    n = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16:16 + n])
    grid = ContainerGrid(header["nx"], header["ny"], header["L"], header["M"])
    size = grid.nx * grid.ny * 8
    offset = 16 + n
    arrays = {}
    for name in header["arrays"]:
        chunk = raw[offset:offset + size]
        if len(chunk) != size:
            raise ValueError(f"{path} is truncated")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(grid.nx, grid.ny).copy()
        offset += size
    sidecar = path.with_suffix(path.suffix + ".json")
    extra = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return grid, arrays, extra


def save_csv_1d(path, x: np.ndarray, columns: dict) -> None:
    names = list(columns)
    data = np.column_stack([x] + [np.asarray(columns[k]) for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(["x"] + names), comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# operators


def _evaluate(v, x, y):
    if hasattr(v, "sample"):
        return v.sample(x, y)
    return v(x, y)


def extend(v, d, h, grid: ContainerGrid, trace_tol: float = 1e-8, contact_tol: float = 0.0) -> ExtendedField:
    """Bar extension: ``v`` in the fluid, ``(0, d)`` above the beam, 0 below the floor.

    ``v`` is either a :class:`FluidSample` (taken node by node), an object with a
    ``sample(x, y)`` method, or a callable ``(x, y) -> (u1, u2)``.
    """
    hd = as_deformation(h, grid.L)
    hv = hd.h
    d = np.asarray(d, dtype=float)
    if hv.size != grid.nx or d.size != grid.nx:
        raise ValueError("height / trace arrays do not match the container grid")
    if np.any(hv > 2.0 * grid.M):
        raise ValueError("height exceeds the container")
    tags = grid.tags(hv)
    fluid = tags == FLUID
    u1 = np.zeros((grid.nx, grid.ny))
    u2 = np.zeros((grid.nx, grid.ny))
    if isinstance(v, FluidSample):
        if not np.array_equal(v.mask, fluid):
            raise ValueError("fluid sample does not match the region tags of h")
        u1[fluid] = v.u1[fluid]
        u2[fluid] = v.u2[fluid]
    else:
        X, Y = grid.mesh()
        if fluid.any():
            a1, a2 = _evaluate(v, X[fluid], Y[fluid])
            u1[fluid] = a1
            u2[fluid] = a2
        live = hv > contact_tol
        if live.any():
            t1, t2 = _evaluate(v, grid.x[live], hv[live])
            mismatch = max(np.max(np.abs(t1)), np.max(np.abs(np.asarray(t2) - d[live])))
            if mismatch > trace_tol * max(1.0, float(np.max(np.abs(d)))):
                raise TraceMismatchError(f"trace of v differs from (0, d) by {mismatch:.3e}")
    virtual = tags == VIRTUAL
    u2[virtual] = np.broadcast_to(d[:, None], u2.shape)[virtual]
    return ExtendedField(u1, u2, grid, hv)


def lift(d, lam: float, grid: ContainerGrid, h=None) -> ExtendedField:
    """Divergence-free field ``perp_grad(b(x) zeta(y / lam))`` with ``b' = d``."""
    d = np.asarray(d, dtype=float)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if d.size != grid.nx:
        raise ValueError("d does not match the grid")
    _check_mean_free(d)
    b = antiderivative(d, grid.L)
    z, dz = zeta(grid.y / lam)
    u1 = -b[:, None] * dz[None, :] / lam
    u2 = d[:, None] * z[None, :]
    hv = None if h is None else as_deformation(h, grid.L).h
    return ExtendedField(u1, u2, grid, hv)


def stream_function(w: ExtendedField, contact_tol: float = 0.0, check_tol: float | None = None) -> StreamFunction:
    """Integrate ``-w1`` upward from the container floor.

    The consistency residual ``max |d_x psi - w2|`` measures the discrete
    divergence accumulated along the integration path.
    """
    grid = w.grid
    psi = -cumulative_trapezoid(w.u1, dx=grid.dy, axis=1, initial=0.0)
    contact = np.zeros(grid.nx, dtype=bool)
    if w.h is not None:
        tags = w.tags
        psi[tags == SUBSTRATE] = 0.0
        virtual = tags == VIRTUAL
        first = np.argmax(virtual, axis=1)
        has = virtual.any(axis=1)
        base = psi[np.arange(grid.nx), first]
        psi = np.where(virtual & has[:, None], base[:, None], psi)
        contact = w.h <= contact_tol
        psi[contact] = 0.0
    residual = float(np.max(np.abs(ddx(psi, grid.dx) - w.u2)))
    if check_tol is not None and residual > check_tol:
        raise IntegrationPathError(f"integration paths disagree by {residual:.3e} (tolerance {check_tol:.1e})")
    return StreamFunction(psi, np.array(psi[:, -1]), contact, grid, w.h, residual)


def _cubic_columns(values: np.ndarray, y0: float, dy: float, yq: np.ndarray) -> np.ndarray:
    """Four-point Lagrange interpolation along axis 1 at positions ``yq``
    (broadcast against ``values``); zero outside the node range."""
    ny = values.shape[1]
    yq = np.broadcast_to(yq, values.shape)
    s = (yq - y0) / dy
    outside = (s < -1e-12) | (s > ny - 1 + 1e-12)
    j = np.clip(np.floor(s).astype(int), 1, ny - 3)
    t = s - j
    w = (
        -t * (t - 1) * (t - 2) / 6.0,
        (t + 1) * (t - 1) * (t - 2) / 2.0,
        -(t + 1) * t * (t - 2) / 2.0,
        (t + 1) * t * (t - 1) / 6.0,
    )
    rows = np.arange(values.shape[0])[:, None]
    out = sum(wk * values[rows, j + k - 1] for k, wk in enumerate(w))
    return np.where(outside, 0.0, out)


def vertical_contraction(v: ExtendedField, sigma: float, h=None) -> ExtendedField:
    """``(sigma v1(x, sigma y), v2(x, sigma y))``; samples beyond the container top are 0."""
    if sigma < 1.0:
        raise ValueError("sigma must be >= 1")
    grid = v.grid
    if sigma == 1.0:
        return ExtendedField(v.u1, v.u2, grid, v.h if h is None else h)
    yq = (sigma * grid.y)[None, :]
    u1 = sigma * _cubic_columns(v.u1, grid.y[0], grid.dy, yq)
    u2 = _cubic_columns(v.u2, grid.y[0], grid.dy, yq)
    return ExtendedField(u1, u2, grid, h)


@dataclass(frozen=True)
class Trace:
    u1: np.ndarray
    u2: np.ndarray
    h_half_norm: float
    h1_norm: float

    @property
    def constant(self) -> float:
        return self.h_half_norm / self.h1_norm if self.h1_norm > 0 else 0.0


def hs_norm_1d(d: np.ndarray, sigma: float, L: float) -> float:
    d = np.asarray(d, dtype=float)
    n = d.size
    coef = np.fft.fft(d) / n
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
    return float(np.sqrt(L * np.sum((1.0 + k**2) ** sigma * np.abs(coef) ** 2)))


def h1_norm_below(v: ExtendedField, h) -> float:
    """Discrete H^1 norm over ``{-1 < y < h(x)}``."""
    grid = v.grid
    hv = as_deformation(h, grid.L).h
    mask = grid.y[None, :] < hv[:, None]
    w = grid.cell_weights() * mask
    total = 0.0
    for u in (v.u1, v.u2):
        total += np.sum(w * (u**2 + ddx(u, grid.dx) ** 2 + ddy(u, grid.dy) ** 2))
    return float(np.sqrt(total))


def trace_at_interface(v, h, grid: ContainerGrid | None = None) -> Trace:
    """Both velocity components along the graph ``y = h(x)``."""
    if isinstance(v, ExtendedField):
        grid = v.grid
    if grid is None:
        raise ValueError("a container grid is required for sampled fields")
    hv = as_deformation(h, grid.L).h
    if np.any(hv > 2.0 * grid.M) or np.any(hv < -1.0):
        raise ValueError("height exceeds the container")
    if isinstance(v, ExtendedField):
        s = (hv - grid.y[0]) / grid.dy
        j = np.clip(np.floor(s).astype(int), 0, grid.ny - 2)
        t = s - j
        rows = np.arange(grid.nx)
        t1 = (1 - t) * v.u1[rows, j] + t * v.u1[rows, j + 1]
        t2 = (1 - t) * v.u2[rows, j] + t * v.u2[rows, j + 1]
        h1 = h1_norm_below(v, hv)
    else:
        t1, t2 = _evaluate(v, grid.x, hv)
        h1 = float("nan")
    t1, t2 = np.asarray(t1, float), np.asarray(t2, float)
    half = float(np.hypot(hs_norm_1d(t1, 0.5, grid.L), hs_norm_1d(t2, 0.5, grid.L)))
    return Trace(t1, t2, half, h1)


def _sobolev_s(cfg) -> float:
    s = cfg.s if isinstance(cfg, SobolevConfig) else float(cfg)
    if not 0.0 <= s < 1.0:
        raise ValueError("s must lie in [0, 1)")
    return s


def hs_norm_parts(v: ExtendedField, cfg=SobolevConfig()) -> tuple[float, float]:
    """Squared Fourier-side and Gagliardo-side contributions of the H^s norm."""
    s = _sobolev_s(cfg)
    stride = cfg.stride if isinstance(cfg, SobolevConfig) else 1
    grid = v.grid
    k = 2.0 * np.pi * np.fft.fftfreq(grid.nx, d=grid.dx)
    wy = grid.y_weights()
    fourier = 0.0
    gag = 0.0
    ys = grid.y[::stride]
    wsub = np.full(ys.size, grid.dy * stride)
    wsub[0] *= 0.5
    wsub[-1] *= 0.5
    dist = np.abs(ys[:, None] - ys[None, :])
    off = dist > 0.5 * grid.dy
    kernel = np.where(off, wsub[:, None] * wsub[None, :] / np.where(off, dist, 1.0) ** (1 + 2 * s), 0.0)
    for u in (v.u1, v.u2):
        c = np.fft.fft(u, axis=0) / grid.nx
        fourier += grid.L * np.sum((1.0 + k[:, None] ** 2) ** s * np.abs(c) ** 2 * wy[None, :])
        if s > 0:
            cs = c[:, ::stride]
            diff2 = np.abs(cs[:, :, None] - cs[:, None, :]) ** 2
            gag += grid.L * float(np.sum(diff2 * kernel[None, :, :]))
    return float(fourier), float(gag)


def hs_norm(v: ExtendedField, cfg=SobolevConfig()) -> float:
    fourier, gag = hs_norm_parts(v, cfg)
    return float(np.sqrt(fourier + gag))


def h2s_norm_1d(d: np.ndarray, cfg=SobolevConfig(), L: float = 1.0) -> float:
    return hs_norm_1d(d, 2.0 * _sobolev_s(cfg), L)


def xs_distance(a: CouplePair, b: CouplePair, cfg=SobolevConfig()) -> float:
    return hs_norm(a.w - b.w, cfg) + h2s_norm_1d(a.d - b.d, cfg, a.w.grid.L)


def x0_inner(a: CouplePair, b: CouplePair, rho_f: float = 1.0, rho_s: float = 1.0) -> float:
    """Density-weighted L^2 pairing of two couples."""
    grid = a.w.grid
    w = grid.cell_weights()
    fluid = rho_f * np.sum(w * (a.w.u1 * b.w.u1 + a.w.u2 * b.w.u2))
    return float(fluid + rho_s * grid.dx * np.sum(a.d * b.d))


def projector_competitor(pair: CouplePair, h, hb, cfg=SobolevConfig()) -> CouplePair:
    """Competitor in the space attached to the lower height ``hb``.

    The field is pulled back through the vertical stretch with the cofactor
    multiplier (which keeps it solenoidal), then shifted so the floor trace of
    the normal component vanishes; the beam velocity absorbs the same shift.
    """
    grid = pair.w.grid
    hd, hbd = as_deformation(h, grid.L), as_deformation(hb, grid.L)
    if not np.isfinite(pair.w.u1).all() or not np.isfinite(pair.w.u2).all():
        raise ValueError("non-finite input field")
    amap = ale_map(hd, hbd)
    m, dm = amap.m[:, None], amap.dm[:, None]
    y = grid.y[None, :]
    yq = m * (y + 1.0) - 1.0
    top = yq > 2.0 * grid.M
    w1 = np.where(top, 0.0, _cubic_columns(pair.w.u1, grid.y[0], grid.dy, yq))
    w2 = np.where(top, pair.d[:, None], _cubic_columns(pair.w.u2, grid.y[0], grid.dy, yq))
    wc1 = m * w1
    wc2 = -dm * (y + 1.0) * w1 + w2
    # floor trace of the pulled-back normal component: chi(x, 0) = (x, m - 1)
    m0 = amap.m
    f1 = _cubic_columns(pair.w.u1, grid.y[0], grid.dy, (m0 - 1.0)[:, None] * np.ones((1, grid.ny)))[:, 0]
    f2 = _cubic_columns(pair.w.u2, grid.y[0], grid.dy, (m0 - 1.0)[:, None] * np.ones((1, grid.ny)))[:, 0]
    correction = -amap.dm * f1 + f2
    upper = grid.y[None, :] >= 0.0
    v1 = np.where(upper, wc1, 0.0)
    v2 = np.where(upper, wc2 - correction[:, None], 0.0)
    d = pair.d - correction
    out = ExtendedField(v1, v2, grid, hbd.h)
    return CouplePair(out, d, info={"correction": correction, "correction_mean": float(np.mean(correction)),
                                    "gap": float(np.max(np.abs(hd.h - hbd.h)) + np.max(np.abs(hd.derivative() - hbd.derivative())))})


@dataclass(frozen=True)
class StripCheck:
    side: str
    quantity: str
    lhs: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300


@dataclass(frozen=True)
class CutoffResult:
    pair: CouplePair
    cutoff: np.ndarray
    strips: list

    @property
    def violations(self) -> int:
        return sum(not s.ok for s in self.strips)


def cutoff_profile(x: np.ndarray, a: float, b: float, eps: float, L: float):
    """Smooth cutoff equal to 1 on ``[a+eps, b-eps]`` and supported in
    ``[a+eps/2, b-eps/2]``; intervals may wrap around the period."""
    length = (b - a) % L or L
    r = np.mod(x - a, L)
    up, dup = smooth_step((r - eps / 2) / (eps / 2))
    down, ddown = smooth_step((length - eps / 2 - r) / (eps / 2))
    inside = r < length
    val = np.where(inside, up * down, 0.0)
    der = np.where(inside, (dup * down - up * ddown) / (eps / 2), 0.0)
    return val, der


def contact_cutoff(psi: StreamFunction, interval: tuple[float, float], eps: float,
                   contact_tol: float = 0.0) -> CutoffResult:
    """Cut a stream function off near the contact points bounding ``interval``."""
    grid = psi.grid
    a, b = interval
    length = (b - a) % grid.L or grid.L
    if not 0 < eps < length / 4:
        raise ValueError("eps must lie in (0, (b - a)/4)")
    if psi.h is not None:
        hv = psi.h
        r = np.mod(grid.x - a, grid.L)
        interior = (r > 0.5 * grid.dx) & (r < length - 0.5 * grid.dx)
        ends = np.isclose(r, 0.0, atol=0.5 * grid.dx) | np.isclose(r, length, atol=0.5 * grid.dx)
        if np.any(hv[interior] <= contact_tol) or np.any(hv[ends] > contact_tol):
            raise ValueError("interval is not a connected component of {h > contact tolerance}")
    chi, dchi = cutoff_profile(grid.x, a, b, eps, grid.L)
    dpx = ddx(psi.psi, grid.dx)
    dpy = ddy(psi.psi, grid.dy)
    w1 = -chi[:, None] * dpy
    w2 = chi[:, None] * dpx + dchi[:, None] * psi.psi
    db = ddx(psi.b[:, None], grid.dx)[:, 0]
    d = chi * db + dchi * psi.b
    pair = CouplePair(ExtendedField(w1, w2, grid, psi.h), d)
    return CutoffResult(pair, chi, strip_poincare_checks(psi, interval, eps))


def strip_poincare_checks(psi: StreamFunction, interval: tuple[float, float], eps: float) -> list:
    """Discrete forms of the strip bounds
    ``int psi^2 / 2 <= eps^2/4 int |grad psi|^2`` and ``int b^2/2 <= eps^2/4 int |b'|^2``
    on ``[a, a+eps]`` and ``[b-eps, b]``; psi vanishes on the outer column of each strip."""
    grid = psi.grid
    a, b = interval
    length = (b - a) % grid.L or grid.L
    r = np.mod(grid.x - a, grid.L)
    wy = grid.y_weights()
    out = []
    ia = int(np.argmin(np.minimum(r, grid.L - r)))
    ncell = int(np.floor(eps / grid.dx + 1e-9))
    for side, start, step in (("left", ia, 1), ("right", (ia + int(round(length / grid.dx))) % grid.nx, -1)):
        cols = (start + step * np.arange(ncell + 1)) % grid.nx
        P = psi.psi[cols]
        B = psi.b[cols]
        wx = np.full(cols.size, grid.dx)
        wx[0] = wx[-1] = 0.5 * grid.dx
        lhs_psi = 0.5 * np.sum(wx[:, None] * wy[None, :] * P**2)
        dPx = np.diff(P, axis=0) / grid.dx
        Pmid = 0.5 * (P[1:] + P[:-1])
        dPy = ddy(Pmid, grid.dy) if Pmid.shape[0] else Pmid
        rhs_psi = 0.25 * eps**2 * np.sum(grid.dx * wy[None, :] * (dPx**2 + dPy**2))
        lhs_b = 0.5 * np.sum(wx * B**2)
        rhs_b = 0.25 * eps**2 * np.sum(grid.dx * (np.diff(B) / grid.dx) ** 2)
        out.append(StripCheck(side, "psi", float(lhs_psi), float(rhs_psi)))
        out.append(StripCheck(side, "b", float(lhs_b), float(rhs_b)))
    return out


def mollify_periodic(eta0, gamma: float, L: float = 1.0) -> np.ndarray:
    """Periodic convolution with a normalized bump of radius ``gamma``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    eta0 = np.asarray(eta0, dtype=float)
    n = eta0.size
    dx = L / n
    r = int(np.floor(gamma / dx))
    if r < 1:
        return eta0.copy()
    r = min(r, (n - 1) // 2)
    offsets = np.arange(-r, r + 1) * dx
    q = offsets / gamma
    kernel = np.where(np.abs(q) < 1, np.exp(-1.0 / np.maximum(1e-300, 1.0 - q**2)), 0.0)
    kernel /= kernel.sum()
    return convolve1d(eta0, kernel, mode="wrap")


def h2_norm_1d(eta: np.ndarray, L: float) -> float:
    return hs_norm_1d(eta, 2.0, L)


__all__ = [
    "ContainerGrid", "ExtendedField", "FluidSample", "StreamFunction", "CouplePair", "SobolevConfig",
    "extend", "lift", "stream_function", "vertical_contraction", "trace_at_interface", "hs_norm",
    "hs_norm_parts", "h2s_norm_1d", "hs_norm_1d", "projector_competitor", "contact_cutoff",
    "mollify_periodic", "perp_grad", "divergence", "zeta", "smooth_step", "antiderivative",
    "xs_distance", "x0_inner", "Trace", "CutoffResult", "StripCheck", "Deformation",
]
