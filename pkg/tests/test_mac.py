import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsibeam.solver import mac
from fsibeam.solver.mac import MacGrid

L = 2.0


def height(g, amp=0.2):
    return 1 + amp * np.cos(2 * np.pi * g.x / L)


def random_stream(g, rng):
    psi = rng.normal(size=(g.nx, g.nz + 1))
    psi[:, 0] = 0.0
    return psi


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5))
def test_stream_velocities_are_discretely_solenoidal(seed, amp):
    g = MacGrid(12, 6, L)
    h = height(g, amp)
    U = mac.velocities_from_stream(g, h, random_stream(g, np.random.default_rng(seed)))
    D = mac.divergence_matrix(g, h)
    assert np.abs(D @ U).max() < 1e-11 * max(1.0, np.abs(U).max())


def test_curl_matrix_matches_direct_formula():
    g = MacGrid(10, 5, L)
    h = height(g, 0.3)
    psi = random_stream(g, np.random.default_rng(3))
    np.testing.assert_allclose(mac.curl_matrix(g, h) @ psi.ravel(), mac.velocities_from_stream(g, h, psi), atol=1e-12)


def test_stream_round_trip():
    g = MacGrid(10, 5, L)
    h = height(g, 0.3)
    psi = random_stream(g, np.random.default_rng(4))
    back = mac.stream_from_velocities(g, h, mac.velocities_from_stream(g, h, psi))
    np.testing.assert_allclose(back, psi, atol=1e-12)


def test_pack_unpack():
    g = MacGrid(6, 3, L)
    U = np.arange(g.nu, dtype=float)
    u1, u2 = g.unpack(U)
    assert np.all(u2[:, 0] == 0)
    assert np.array_equal(g.pack(u1, u2), U)
    _, top = g.unpack(np.isin(np.arange(g.nu), g.top).astype(float))
    assert np.all(top[:, -1] == 1) and top[:, :-1].sum() == 0


def test_mass_weights_sum_to_area():
    g = MacGrid(16, 8, L)
    h = height(g, 0.3)
    w = mac.mass_weights(g, h)
    # u1 cells tile the fluid once; u2 rows are trapezoidal with a half top row
    assert w[: g.n1].sum() == pytest.approx(L, rel=1e-12)
    assert mac.cell_areas(g, h).sum() == pytest.approx(L, rel=1e-12)


def test_stiffness_symmetric_semidefinite():
    g = MacGrid(8, 4, L)
    K = mac.stiffness_matrix(g, height(g, 0.3)).toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_convection_is_skew():
    g = MacGrid(8, 4, L)
    rng = np.random.default_rng(0)
    h0 = height(g, 0.2)
    h1 = h0 + 0.01 * np.sin(2 * np.pi * g.x / L)
    C = mac.convection_matrix(g, rng.normal(size=g.nu), h1, h0, 1e-2)
    U = rng.normal(size=g.nu)
    assert abs(U @ (C @ U)) < 1e-12 * np.abs(C).sum()


def test_antiderivative_and_its_adjoint():
    n = 16
    rng = np.random.default_rng(1)
    d = rng.normal(size=n)
    d -= d.mean()
    b = mac.corner_antiderivative(d, L)
    np.testing.assert_allclose((b - np.roll(b, 1)) / (L / n), d, atol=1e-12)
    assert abs(b.mean()) < 1e-14
    y = rng.normal(size=n)
    assert b @ y == pytest.approx(d @ mac.lift_transpose(y, L), rel=1e-12)


def _dirichlet_oracle(amp, nq=200):
    """Gauss-Legendre integral of |grad u|^2 for u = (sin(kx) s(1-s), 0), s = y/h(x)."""
    k = 2 * np.pi / L
    xg, wx = np.polynomial.legendre.leggauss(nq)
    sg, ws = np.polynomial.legendre.leggauss(40)
    x = (xg + 1) * L / 2
    s = (sg + 1) / 2
    wx, ws = wx * L / 2, ws / 2
    h = 1 + amp * np.cos(k * x)
    hx = -amp * k * np.sin(k * x)
    X = x[:, None]
    S = s[None, :]
    q = S * (1 - S)
    dq = 1 - 2 * S
    ux = k * np.cos(k * X) * q - np.sin(k * X) * dq * S * hx[:, None] / h[:, None]
    uy = np.sin(k * X) * dq / h[:, None]
    # dy = h ds
    return float(np.sum(wx[:, None] * ws[None, :] * h[:, None] * (ux**2 + uy**2)))


@pytest.mark.parametrize("amp", [0.0, 0.2])
def test_stiffness_dirichlet_energy_second_order(amp):
    exact = _dirichlet_oracle(amp)
    errs = []
    for n in (16, 32, 64):
        g = MacGrid(n, n // 2, L)
        h = height(g, amp)
        hf = 0.5 * (h + np.roll(h, -1))
        z = g.zc[None, :]
        u1 = np.sin(2 * np.pi * g.xf[:, None] / L) * z * (1 - z) * np.ones_like(hf)[:, None]
        U = g.pack(u1, np.zeros((g.nx, g.nz + 1)))
        errs.append(abs(U @ (mac.stiffness_matrix(g, h) @ U) - exact))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert min(ratios) > 3.0, (errs, ratios)
