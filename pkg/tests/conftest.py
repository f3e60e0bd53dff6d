"""Independent oracles shared by the test modules.

Nothing here calls the closed-form integrals of the package; everything is
built from Gauss-Legendre quadrature on raw trig functions.
"""
import sys

import numpy as np
import pytest

from adeopt.spectral import BasisKind


def gl(points=64):
    x, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (x + 1.0), 0.5 * w


def trig(fn, modes, x):
    return getattr(np, fn)(np.pi * np.outer(modes, x))


def quad_factor(fns, r1, r2, r3, points=64):
    """T[a,b,c] = int fns0(r1[a] pi x) fns1(r2[b] pi x) fns2(r3[c] pi x) dx."""
    x, w = gl(points)
    F1, F2, F3 = trig(fns[0], r1, x), trig(fns[1], r2, x), trig(fns[2], r3, x)
    return np.einsum("ax,bx,cx,x->abc", F1, F2, F3, w)


def quad_tensors(basis, N, M, points=64):
    """Dense A[m,n,k,l,i,j], B[...] (zero-based over the basis modes and 1..M)."""
    t = basis.fn
    d = "cos" if t == "sin" else "sin"
    r = basis.modes(N)
    v = np.arange(1, M + 1)
    Ax = quad_factor((t, "sin", d), r, v, r, points)
    Ay = quad_factor((t, "cos", t), r, v, r, points)
    Bx = quad_factor((t, "cos", t), r, v, r, points)
    By = quad_factor((t, "sin", d), r, v, r, points)
    A = np.einsum("mki,nlj->mnklij", Ax, Ay)
    B = np.einsum("mki,nlj->mnklij", Bx, By)
    return A, B


def galerkin_advection(basis, N, velocity, points=48):
    """A[(mn),(ij)] = int psi_mn (v . grad psi_ij) / (sigma_m sigma_n) by 2-D quadrature.

    ``velocity(X, Y) -> (v1, v2)`` on the quadrature mesh.
    """
    x, w = gl(points)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    v1, v2 = velocity(X, Y)
    r = basis.modes(N)
    T = trig(basis.fn, r, x)
    if basis is BasisKind.SINE_SINE:
        dT = np.pi * r[:, None] * trig("cos", r, x)
    else:
        dT = -np.pi * r[:, None] * trig("sin", r, x)
    # psi_mn(X,Y) = T[m,ix] T[n,iy]
    test = np.einsum("mx,ny->mnxy", T, T)
    dpsi_dx = np.einsum("ix,jy->ijxy", dT, T)
    dpsi_dy = np.einsum("ix,jy->ijxy", T, dT)
    adv = v1 * dpsi_dx + v2 * dpsi_dy
    A = np.einsum("mnxy,ijxy,xy->mnij", test, adv, W)
    sigma = np.where(r == 0, 1.0, 0.5)
    A /= np.outer(sigma, sigma)[:, :, None, None]
    S = len(r) ** 2
    return A.reshape(S, S)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
