"""Staggered operators on the mapped channel ``y = h(x) z``, ``z in (0, 1)``.

Layout, with ``x_i = i dx`` the beam nodes:

* ``u1`` at ``(x_{i+1/2}, z_{j+1/2})``, ``j = 0..Nz-1``; zero at both walls.
* ``u2`` at ``(x_i, z_j)``, ``j = 1..Nz``; the bottom row is zero and the top row
  is the interface velocity.
* ``p`` at ``(x_i, z_{j+1/2})``.

Velocities are Cartesian components of the physical field.  Every operator is
assembled as a sparse matrix acting on the packed velocity vector
``U = [u1.ravel(), u2[:, 1:].ravel()]`` (the interface row is part of ``U``).
The viscous operator is ``G^T W G`` and the skew convection ``(A - A^T)/2`` so
the discrete energy identity holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class MacGrid:
    nx: int
    nz: int
    L: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.nz < 2:
            raise ValueError("grid too small")

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dz(self) -> float:
        return 1.0 / self.nz

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def xf(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def zc(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5) * self.dz

    @property
    def zf(self) -> np.ndarray:
        return np.arange(self.nz + 1) * self.dz

    @property
    def n1(self) -> int:
        return self.nx * self.nz

    @property
    def nu(self) -> int:
        return 2 * self.nx * self.nz

    @property
    def npress(self) -> int:
        return self.nx * self.nz

    @property
    def top(self) -> np.ndarray:
        return self.n1 + np.arange(self.nx) * self.nz + self.nz - 1

    @property
    def inner(self) -> np.ndarray:
        mask = np.ones(self.nu, dtype=bool)
        mask[self.top] = False
        return np.flatnonzero(mask)

    # index helpers (vectorized); ghost rows of u1 reflect with a sign flip
    def i1(self, i, j):
        i = np.mod(i, self.nx)
        j = np.asarray(j)
        sign = np.where((j < 0) | (j >= self.nz), -1.0, 1.0)
        jj = np.where(j < 0, 0, np.where(j >= self.nz, self.nz - 1, j))
        return i * self.nz + jj, sign

    def i2(self, i, jf):
        i = np.mod(i, self.nx)
        jf = np.asarray(jf)
        valid = (jf >= 1) & (jf <= self.nz)
        return np.where(valid, self.n1 + i * self.nz + jf - 1, -1), valid.astype(float)

    def pack(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(u1).ravel(), np.asarray(u2)[:, 1:].ravel()])

    def unpack(self, U: np.ndarray):
        u1 = U[: self.n1].reshape(self.nx, self.nz)
        u2 = np.zeros((self.nx, self.nz + 1))
        u2[:, 1:] = U[self.n1:].reshape(self.nx, self.nz)
        return u1, u2


@dataclass(frozen=True)
class Metrics:
    h: np.ndarray  # at x_i
    hf: np.ndarray  # at x_{i+1/2}
    hxc: np.ndarray  # dh/dx at x_i
    hxf: np.ndarray  # dh/dx at x_{i+1/2}

    @classmethod
    def of(cls, grid: MacGrid, h) -> "Metrics":
        h = np.asarray(h, dtype=float)
        if h.shape != (grid.nx,):
            raise ValueError("height does not match the grid")
        hf = 0.5 * (h + np.roll(h, -1))
        return cls(h=h, hf=hf, hxc=(hf - np.roll(hf, 1)) / grid.dx, hxf=(np.roll(h, -1) - h) / grid.dx)


_PATTERNS: dict = {}


class _Triplets:
    """COO accumulator; with a ``key`` the CSR pattern is computed once per grid
    and later calls only scatter the values."""

    def __init__(self, key=None):
        self.key = key
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float))
        keep = cols >= 0
        self.rows.append(rows[keep].ravel())
        self.cols.append(cols[keep].ravel())
        self.vals.append(vals[keep].ravel())

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        vals = np.concatenate(self.vals)
        pattern = _PATTERNS.get((self.key, shape)) if self.key is not None else None
        if pattern is None or pattern[0] != vals.size:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            flat = rows.astype(np.int64) * shape[1] + cols
            uniq, slot = np.unique(flat, return_inverse=True)
            indices = (uniq % shape[1]).astype(np.int32)
            indptr = np.searchsorted(uniq // shape[1], np.arange(shape[0] + 1)).astype(np.int32)
            pattern = (vals.size, slot, indices, indptr)
            if self.key is not None:
                _PATTERNS[(self.key, shape)] = pattern
        _, slot, indices, indptr = pattern
        data = np.bincount(slot, weights=vals, minlength=indices.size)
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=shape)


def _ij(nx, n):
    return np.meshgrid(np.arange(nx), np.arange(n), indexing="ij")


def mass_weights(grid: MacGrid, h) -> np.ndarray:
    """Quadrature weights of the velocity unknowns (cell areas in physical space)."""
    m = Metrics.of(grid, h)
    w1 = np.repeat(m.hf, grid.nz) * grid.dx * grid.dz
    w2 = np.repeat(m.h, grid.nz) * grid.dx * grid.dz
    w2 = w2.reshape(grid.nx, grid.nz)
    w2[:, -1] *= 0.5
    return np.concatenate([w1, w2.ravel()])


def cell_areas(grid: MacGrid, h) -> np.ndarray:
    return np.repeat(np.asarray(h, float), grid.nz) * grid.dx * grid.dz


def _ubar1(grid: MacGrid, I, jf):
    """Columns/coefficients of the four-point average of u1 at (x_i, z_jf), 1 <= jf <= Nz-1."""
    out = []
    for di in (0, -1):
        for dj in (0, -1):
            c, s = grid.i1(I + di, jf + dj)
            out.append((c, 0.25 * s))
    return out


def divergence_matrix(grid: MacGrid, h) -> sp.csr_matrix:
    """Net outward volume flux of each cell of the mapped grid."""
    m = Metrics.of(grid, h)
    I, J = _ij(grid.nx, grid.nz)
    rows = I * grid.nz + J
    t = _Triplets(("div", grid))
    c, s = grid.i1(I, J)
    t.add(rows, c, s * grid.dz * m.hf[I])
    c, s = grid.i1(I - 1, J)
    t.add(rows, c, -s * grid.dz * m.hf[np.mod(I - 1, grid.nx)])
    zf = grid.zf
    # upper face
    c, v = grid.i2(I, J + 1)
    t.add(rows, c, v * grid.dx)
    inner_top = (J + 1) <= grid.nz - 1
    for cc, coef in _ubar1(grid, I, np.minimum(J + 1, grid.nz - 1)):
        t.add(rows, np.where(inner_top, cc, -1), -grid.dx * zf[np.minimum(J + 1, grid.nz)] * m.hxc[I] * coef)
    # lower face
    c, v = grid.i2(I, J)
    t.add(rows, c, -v * grid.dx)
    inner_bot = J >= 1
    for cc, coef in _ubar1(grid, I, np.maximum(J, 1)):
        t.add(rows, np.where(inner_bot, cc, -1), grid.dx * zf[J] * m.hxc[I] * coef)
    return t.matrix((grid.npress, grid.nu))


def gradient_matrix(grid: MacGrid, h):
    """Sampled physical velocity gradients and their quadrature weights.

    ``U^T G^T diag(w) G U`` approximates ``int |grad u|^2`` over the fluid.
    """
    m = Metrics.of(grid, h)
    nx, nz, dx, dz = grid.nx, grid.nz, grid.dx, grid.dz
    zc, zf = grid.zc, grid.zf
    t = _Triplets(("grad", grid))
    weights = []
    row0 = 0

    # d/dx of u1 at cell centres
    I, J = _ij(nx, nz)
    rows = row0 + I * nz + J
    cross = -zc[J] * m.hxc[I] / m.h[I]
    for di, sgn in ((0, 1.0), (-1, -1.0)):
        c, s = grid.i1(I + di, J)
        t.add(rows, c, sgn * s / dx)
    for di in (0, -1):
        for dj, sgn in ((1, 1.0), (-1, -1.0)):
            c, s = grid.i1(I + di, J + dj)
            t.add(rows, c, cross * sgn * s * 0.25 / dz)
    weights.append((m.h[I] * dx * dz).ravel())
    row0 += nx * nz

    # d/dy of u1 at horizontal faces (walls included, half weight)
    I, JF = _ij(nx, nz + 1)
    rows = row0 + I * (nz + 1) + JF
    c, s = grid.i1(I, JF)
    t.add(rows, c, s / (dz * m.hf[I]))
    c, s = grid.i1(I, JF - 1)
    t.add(rows, c, -s / (dz * m.hf[I]))
    w = m.hf[I] * dx * dz * np.where((JF == 0) | (JF == nz), 0.5, 1.0)
    weights.append(w.ravel())
    row0 += nx * (nz + 1)

    # d/dx of u2 at (x_{i+1/2}, z_jf), jf = 1..Nz
    I, JF = np.meshgrid(np.arange(nx), np.arange(1, nz + 1), indexing="ij")
    rows = row0 + I * nz + (JF - 1)
    for di, sgn in ((1, 1.0), (0, -1.0)):
        c, v = grid.i2(I + di, JF)
        t.add(rows, c, sgn * v / dx)
    cross = -zf[JF] * m.hxf[I] / m.hf[I]
    top = JF == nz
    for di in (0, 1):
        up, vu = grid.i2(I + di, np.where(top, JF, JF + 1))
        lo, vl = grid.i2(I + di, JF - 1)
        scale = np.where(top, 0.5 / dz, 0.25 / dz)
        t.add(rows, up, cross * vu * scale)
        t.add(rows, lo, -cross * vl * scale)
    w = m.hf[I] * dx * dz * np.where(top, 0.5, 1.0)
    weights.append(w.ravel())
    row0 += nx * nz

    # d/dy of u2 at cell centres
    I, J = _ij(nx, nz)
    rows = row0 + I * nz + J
    c, v = grid.i2(I, J + 1)
    t.add(rows, c, v / (dz * m.h[I]))
    c, v = grid.i2(I, J)
    t.add(rows, c, -v / (dz * m.h[I]))
    weights.append((m.h[I] * dx * dz).ravel())
    row0 += nx * nz

    return t.matrix((row0, grid.nu)), np.concatenate(weights)


def stiffness_matrix(grid: MacGrid, h) -> sp.csr_matrix:
    G, w = gradient_matrix(grid, h)
    return (G.T @ sp.diags(w) @ G).tocsr()


def convection_matrix(grid: MacGrid, U_adv: np.ndarray, h_new, h_old, dt: float) -> sp.csr_matrix:
    """Skew-symmetric transport by the velocity relative to the moving mesh.

    Rows are weighted by the new cell areas; the mesh moves vertically with
    speed ``z (h_new - h_old) / dt``.
    """
    m = Metrics.of(grid, h_new)
    ht = (np.asarray(h_new) - np.asarray(h_old)) / dt
    hft = 0.5 * (ht + np.roll(ht, -1))
    nx, nz, dx, dz = grid.nx, grid.nz, grid.dx, grid.dz
    u1, u2 = grid.unpack(U_adv)
    W = mass_weights(grid, h_new)
    t = _Triplets(("conv", grid))

    # rows of u1 unknowns
    I, J = _ij(nx, nz)
    rows, _ = grid.i1(I, J)
    cx = u1
    c2 = 0.25 * (u2[:, :-1] + u2[:, 1:] + np.roll(u2[:, :-1], -1, 0) + np.roll(u2[:, 1:], -1, 0))
    z = grid.zc[J]
    cz = (c2 - z * m.hxf[I] * cx - z * hft[I]) / m.hf[I]
    w = W[rows]
    for di, sgn in ((1, 1.0), (-1, -1.0)):
        c, s = grid.i1(I + di, J)
        t.add(rows, c, w * cx * sgn * s / (2 * dx))
    for dj, sgn in ((1, 1.0), (-1, -1.0)):
        c, s = grid.i1(I, J + dj)
        t.add(rows, c, w * cz * sgn * s / (2 * dz))

    # rows of u2 unknowns
    I, JF = np.meshgrid(np.arange(nx), np.arange(1, nz + 1), indexing="ij")
    rows, _ = grid.i2(I, JF)
    u1w = np.zeros((nx, nz + 2))
    u1w[:, 1:-1] = u1
    avg = 0.25 * (u1w[:, :-1] + u1w[:, 1:] + np.roll(u1w[:, :-1], 1, 0) + np.roll(u1w[:, 1:], 1, 0))
    cx = avg[:, 1:]
    cx[:, -1] = 0.0
    z = grid.zf[JF]
    cz = (u2[:, 1:] - z * m.hxc[I] * cx - z * ht[I]) / m.h[I]
    w = W[rows]
    for di, sgn in ((1, 1.0), (-1, -1.0)):
        c, v = grid.i2(I + di, JF)
        t.add(rows, c, w * cx * sgn * v / (2 * dx))
    top = JF == nz
    up, vu = grid.i2(I, np.where(top, JF, JF + 1))
    lo, vl = grid.i2(I, JF - 1)
    scale = np.where(top, 1.0 / dz, 0.5 / dz)
    t.add(rows, up, w * cz * vu * scale)
    t.add(rows, lo, -w * cz * vl * scale)
    # the top row's own column for the one-sided difference
    tr, _ = grid.i2(I, JF)
    t.add(np.where(top, rows, -1), np.where(top, tr, -1), np.zeros_like(w))

    A = t.matrix((grid.nu, grid.nu))
    return (0.5 * (A - A.T)).tocsr()


def velocities_from_stream(grid: MacGrid, h, psi: np.ndarray) -> np.ndarray:
    """Exactly solenoidal velocities from corner values ``psi[i, jf]`` at
    ``(x_{i+1/2}, z_jf)``; ``psi[:, 0]`` must vanish (no flux through the floor)."""
    m = Metrics.of(grid, h)
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (grid.nx, grid.nz + 1):
        raise ValueError("stream function does not match the grid")
    u1 = -(psi[:, 1:] - psi[:, :-1]) / (grid.dz * m.hf[:, None])
    f2 = (psi - np.roll(psi, 1, axis=0)) / grid.dx
    u1w = np.zeros((grid.nx, grid.nz + 2))
    u1w[:, 1:-1] = u1
    avg = 0.25 * (u1w[:, :-1] + u1w[:, 1:] + np.roll(u1w[:, :-1], 1, 0) + np.roll(u1w[:, 1:], 1, 0))
    avg[:, 0] = 0.0
    avg[:, -1] = 0.0
    u2 = f2 + grid.zf[None, :] * m.hxc[:, None] * avg
    u2[:, 0] = 0.0
    return grid.pack(u1, u2)


def stream_from_velocities(grid: MacGrid, h, U: np.ndarray) -> np.ndarray:
    m = Metrics.of(grid, h)
    u1, _ = grid.unpack(U)
    psi = np.zeros((grid.nx, grid.nz + 1))
    psi[:, 1:] = -np.cumsum(grid.dz * m.hf[:, None] * u1, axis=1)
    return psi


def corner_antiderivative(d: np.ndarray, L: float) -> np.ndarray:
    """``b`` at ``x_{i+1/2}`` with ``(b_{i+1/2} - b_{i-1/2}) / dx = d_i`` and zero mean."""
    d = np.asarray(d, dtype=float)
    b = np.cumsum(d) * (L / d.size)
    return b - b.mean()


def curl_matrix(grid: MacGrid, h) -> sp.csr_matrix:
    """Sparse form of :func:`velocities_from_stream` acting on ``psi.ravel()``."""
    m = Metrics.of(grid, h)
    nx, nz, dx, dz = grid.nx, grid.nz, grid.dx, grid.dz
    ncol = nx * (nz + 1)

    def col(i, jf):
        return np.mod(i, nx) * (nz + 1) + jf

    t1 = _Triplets(("curl1", grid))
    I, J = _ij(nx, nz)
    rows = I * nz + J
    t1.add(rows, col(I, J + 1), -1.0 / (dz * m.hf[I]))
    t1.add(rows, col(I, J), 1.0 / (dz * m.hf[I]))
    C1 = t1.matrix((grid.n1, ncol))

    t2 = _Triplets(("curl2", grid))
    I, JF = np.meshgrid(np.arange(nx), np.arange(1, nz + 1), indexing="ij")
    rows = I * nz + (JF - 1)
    t2.add(rows, col(I, JF), np.full(I.shape, 1.0 / dx))
    t2.add(rows, col(I - 1, JF), np.full(I.shape, -1.0 / dx))
    D2 = t2.matrix((grid.n1, ncol))

    # face average of u1 scaled by the metric term (zero on the top face)
    ta = _Triplets(("curlavg", grid))
    inner = JF <= nz - 1
    scale = np.where(inner, grid.zf[JF] * m.hxc[I], 0.0)
    for cc, coef in _ubar1(grid, I, np.minimum(JF, nz - 1)):
        ta.add(rows, np.where(inner, cc, -1), scale * coef)
    Avg = ta.matrix((grid.n1, grid.n1))
    return sp.vstack([C1, D2 + Avg @ C1]).tocsr()


def lift_transpose(y: np.ndarray, L: float) -> np.ndarray:
    """Adjoint of :func:`corner_antiderivative`."""
    y = np.asarray(y, dtype=float)
    z = y - y.mean()
    return (L / y.size) * np.cumsum(z[::-1])[::-1]
