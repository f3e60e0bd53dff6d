"""Trigonometric bases on the unit square and the mode-coupling tensors.

The scalar is expanded as ``phi = sum a_ij T(i pi x) T(j pi y)`` with ``T``
either ``sin`` (homogeneous Dirichlet walls, modes from 1) or ``cos``
(insulated walls, modes from 0).  The velocity is expanded as

    v1 = sum alpha_kl sin(k pi x) cos(l pi y)
    v2 = sum beta_kl  cos(k pi x) sin(l pi y)

for ``k, l = 1..M``.  Projecting ``v . grad phi`` on the test function
``T(m pi x) T(n pi y)`` produces the six-index tensors ``A`` and ``B``, each
a product of one x-integral and one y-integral of three trig factors.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .errors import BasisMismatch, CapacityError, ValidationError

DROP_TOL = 1e-14
DEFAULT_ENTRY_BUDGET = 5_000_000


class Trig(NamedTuple):
    """One factor ``fn(mode * pi * x)`` of a product integrand."""

    fn: str
    mode: int


FactorLike = Union[Trig, tuple]


class BasisKind(enum.Enum):
    SINE_SINE = "sine"
    COSINE_COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "BasisKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for kind in cls:
            if key in (kind.value, kind.name.lower()):
                return kind
        raise ValidationError(f"unknown basis {value!r}; expected 'sine' or 'cosine'")

    @property
    def fn(self) -> str:
        return "sin" if self is BasisKind.SINE_SINE else "cos"

    @property
    def dfn(self) -> str:
        """The trig function produced by differentiating ``fn``."""
        return "cos" if self is BasisKind.SINE_SINE else "sin"

    @property
    def dsign(self) -> float:
        # d/dx sin(i pi x) = +i pi cos(i pi x); d/dx cos(i pi x) = -i pi sin(i pi x)
        return 1.0 if self is BasisKind.SINE_SINE else -1.0

    @property
    def first_mode(self) -> int:
        return 1 if self is BasisKind.SINE_SINE else 0

    def modes(self, N: int) -> np.ndarray:
        """Wavenumbers kept per axis for truncation ``N`` (highest wavenumber N)."""
        return np.arange(self.first_mode, N + 1)

    def size(self, N: int) -> int:
        return N + 1 - self.first_mode


def mass_weights(basis: BasisKind, N: int) -> np.ndarray:
    """``sigma_m = int_0^1 T(m pi x)^2 dx`` for every kept mode."""
    sigma = np.full(basis.size(N), 0.5)
    if basis is BasisKind.COSINE_COSINE:
        sigma[0] = 1.0
    return sigma


def mean_weights(basis: BasisKind, N: int) -> np.ndarray:
    """``int_0^1 T(m pi x) dx`` for every kept mode."""
    m = basis.modes(N)
    if basis is BasisKind.COSINE_COSINE:
        return (m == 0).astype(float)
    return np.where(m % 2 == 1, 2.0 / (np.pi * np.maximum(m, 1)), 0.0)


# --------------------------------------------------------------------------
# closed-form 1-D integrals on [0, 1]

def integral_sin_cos(k: int, m: int) -> float:
    """``int_0^1 sin(k pi x) cos(m pi x) dx``."""
    if k == m or k == 0:
        return 0.0
    return (k - k * math.cos(m * math.pi) * math.cos(k * math.pi)) / (math.pi * (k * k - m * m))


def integral_sin_sin2_sin(l: int, n: int) -> float:
    """``int_0^1 sin(l pi y) sin(2 pi y) sin(n pi y) dy``.

    The rational closed form is valid whenever its denominator is nonzero.
    When a factor vanishes (``l - n = +-2`` or ``l + n = 2``) the modes have
    equal parity and the integral is exactly zero.
    """
    den = (-2 + l - n) * (2 + l - n) * (-2 + l + n) * (2 + l + n)
    if den == 0:
        return 0.0
    return 4 * l * n * (-1 + math.cos(l * math.pi) * math.cos(n * math.pi)) / (den * math.pi)


def _as_factor(f: FactorLike) -> Trig:
    fn, mode = f
    if fn not in ("sin", "cos"):
        raise ValidationError(f"factor function must be 'sin' or 'cos', got {fn!r}")
    return Trig(fn, int(mode))


_PRODUCT = {
    # (fa, fb) -> [(coef, fn, sign of b in the combined frequency a +- b)]
    ("cos", "cos"): ((0.5, "cos", -1), (0.5, "cos", 1)),
    ("sin", "sin"): ((0.5, "cos", -1), (-0.5, "cos", 1)),
    ("sin", "cos"): ((0.5, "sin", 1), (0.5, "sin", -1)),
    ("cos", "sin"): ((0.5, "sin", 1), (-0.5, "sin", -1)),
}


def _integrate_single(fn: str, s: int) -> float:
    if fn == "cos":
        return 1.0 if s == 0 else 0.0
    if s % 2 == 0:
        return 0.0
    return 2.0 / (s * math.pi)


def integral_product(*factors: FactorLike) -> float:
    """Exact ``int_0^1 prod f(p pi x) dx`` for integer wavenumbers.

    The product is expanded by product-to-sum identities into single
    harmonics; zero combined frequencies are integrated by their own branch.
    """
    terms = [(1.0, "cos", 0)]
    for f in map(_as_factor, factors):
        nxt = []
        for coef, fn, a in terms:
            for c, out, sgn in _PRODUCT[(fn, f.fn)]:
                nxt.append((coef * c, out, a + sgn * f.mode))
        terms = nxt
    return math.fsum(coef * _integrate_single(fn, s) for coef, fn, s in terms)


def integral_triple(f1: FactorLike, f2: FactorLike, f3: FactorLike) -> float:
    return integral_product(f1, f2, f3)


def quadrature_oracle(integrand: Union[Sequence[FactorLike], Callable], points: int = 64) -> float:
    """Gauss-Legendre value of a 1-D integral on [0, 1].

    ``integrand`` is either a sequence of factor specs (empty means the
    constant 1) or a vectorised callable.
    """
    if points < 2:
        raise ValidationError("quadrature needs at least 2 points")
    x, w = np.polynomial.legendre.leggauss(points)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if callable(integrand):
        vals = np.asarray(integrand(x), dtype=float)
    else:
        vals = np.ones_like(x)
        for f in map(_as_factor, integrand):
            vals = vals * getattr(np, f.fn)(f.mode * np.pi * x)
    return float(np.dot(w, vals))


# --------------------------------------------------------------------------
# coupling tensors

def factor_table(fns: tuple[str, str, str], r1, r2, r3) -> np.ndarray:
    """Table ``T[a, b, c] = int fns[0](r1[a]) fns[1](r2[b]) fns[2](r3[c])``."""
    out = np.zeros((len(r1), len(r2), len(r3)))
    for a, p in enumerate(r1):
        for b, q in enumerate(r2):
            for c, s in enumerate(r3):
                out[a, b, c] = integral_triple((fns[0], p), (fns[1], q), (fns[2], s))
    return out


def tensor_factor_specs(basis: BasisKind):
    """Trig functions of (test, velocity, scalar) in each 1-D factor.

    Returns ``{"A": (x_fns, y_fns), "B": (x_fns, y_fns)}``.  ``A`` couples
    through ``v1 d/dx`` and ``B`` through ``v2 d/dy``.
    """
    t, d = basis.fn, basis.dfn
    return {
        "A": ((t, "sin", d), (t, "cos", t)),
        "B": ((t, "cos", t), (t, "sin", d)),
    }


@dataclass(frozen=True)
class CouplingTensors:
    """Sparse six-index tensors keyed by ``(m, n, k, l, i, j)``.

    ``keys`` is sorted lexicographically; ``A`` and ``B`` hold the values at
    those keys (one of the two may be zero for a given key).  Keys absent
    from the map are exact zeros.
    """

    basis: BasisKind
    N: int
    M: int
    keys: np.ndarray
    A: np.ndarray
    B: np.ndarray
    factors: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nnz(self) -> int:
        return len(self.keys)

    @cached_property
    def _index(self) -> dict:
        return {tuple(int(v) for v in key): p for p, key in enumerate(self.keys)}

    def entry(self, m, n, k, l, i, j) -> tuple[float, float]:
        p = self._index.get((m, n, k, l, i, j))
        if p is None:
            return 0.0, 0.0
        return float(self.A[p]), float(self.B[p])

    @property
    def A_entries(self) -> dict:
        return {tuple(map(int, k)): float(v) for k, v in zip(self.keys, self.A) if v != 0.0}

    @property
    def B_entries(self) -> dict:
        return {tuple(map(int, k)): float(v) for k, v in zip(self.keys, self.B) if v != 0.0}

    def nonzero_fraction(self, which: str = "A") -> float:
        vals = self.A if which == "A" else self.B
        total = self.basis.size(self.N) ** 4 * self.M ** 2
        return np.count_nonzero(vals) / total

    def to_csv(self, path) -> None:
        write_tensor_csv(self, path)


def _sparse_product(X: np.ndarray, Y: np.ndarray, xr, yr, vr):
    """Nonzero entries of ``X[m,k,i] * Y[n,l,j]`` as (keys, values)."""
    xm, xk, xi = np.nonzero(np.abs(X) >= DROP_TOL)
    yn, yl, yj = np.nonzero(np.abs(Y) >= DROP_TOL)
    xv = X[xm, xk, xi]
    yv = Y[yn, yl, yj]
    p, q = np.meshgrid(np.arange(len(xv)), np.arange(len(yv)), indexing="ij")
    p, q = p.ravel(), q.ravel()
    keys = np.stack([xr[xm[p]], yr[yn[q]], vr[xk[p]], vr[yl[q]], xr[xi[p]], yr[yj[q]]], axis=1)
    return keys, xv[p] * yv[q]


def build_coupling_tensors(
    N: int,
    M: int,
    basis: BasisKind = BasisKind.SINE_SINE,
    budget: int = DEFAULT_ENTRY_BUDGET,
) -> CouplingTensors:
    """All coupling entries for scalar truncation ``N`` and velocity modes ``1..M``."""
    basis = BasisKind.parse(basis)
    if N < 1 or M < 1:
        raise ValidationError(f"need N >= 1 and M >= 1, got N={N}, M={M}")
    full = basis.size(N) ** 4 * M ** 2
    if full > budget:
        raise CapacityError(f"M^2 N^4 = {full} tensor entries exceeds budget {budget}")

    modes = basis.modes(N)
    vmodes = np.arange(1, M + 1)
    specs = tensor_factor_specs(basis)
    factors = {}
    parts = {}
    for name, (xf, yf) in specs.items():
        X = factor_table(xf, modes, vmodes, modes)
        Y = factor_table(yf, modes, vmodes, modes)
        factors[name] = (X, Y)
        parts[name] = _sparse_product(X, Y, modes, modes, vmodes)

    keys = np.concatenate([parts["A"][0], parts["B"][0]])
    if len(keys) == 0:
        empty = np.zeros((0, 6), dtype=np.int64)
        return CouplingTensors(basis, N, M, empty, np.zeros(0), np.zeros(0), factors)
    # np.unique over rows returns them in lexicographic order
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    A = np.zeros(len(uniq))
    B = np.zeros(len(uniq))
    na = len(parts["A"][1])
    A[inverse[:na]] = parts["A"][1]
    B[inverse[na:]] = parts["B"][1]
    return CouplingTensors(basis, N, M, uniq.astype(np.int64), A, B, factors)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_tensor_csv(tensors: CouplingTensors, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "n", "k", "l", "i", "j", "A", "B"])
        for key, a, b in zip(tensors.keys, tensors.A, tensors.B):
            w.writerow([*map(int, key), _fmt(a), _fmt(b)])


def read_tensor_csv(path, basis: BasisKind, N: int, M: int) -> CouplingTensors:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    keys = np.array([[int(r[c]) for c in "mnklij"] for r in rows], dtype=np.int64).reshape(-1, 6)
    A = np.array([float(r["A"]) for r in rows])
    B = np.array([float(r["B"]) for r in rows])
    return CouplingTensors(BasisKind.parse(basis), N, M, keys, A, B)


def require_basis(basis: BasisKind, expected: BasisKind, what: str) -> None:
    if basis is not expected:
        raise BasisMismatch(f"{what} requires the {expected.value} basis, got {basis.value}")
