"""Galerkin ODE assembly: ``da/dt = -(A(t) + D) a``.

Mode vectors are flattened row-major over ``(m, n)`` with ``m`` outer.
Velocity arrays are indexed ``[k-1, l-1]`` for ``k, l = 1..M``; the
``k = 0`` and ``l = 0`` velocity modes are identically zero once the
stream-function linkage ``k alpha + l beta = 0`` is imposed, so they are
not stored.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .spectral import BasisKind, CouplingTensors, mass_weights, mean_weights

LINKAGE_TOL = 1e-12


@dataclass(frozen=True)
class SpectralField:
    """Coefficients ``a[m, n]`` of the truncated scalar expansion."""

    coeffs: np.ndarray
    basis: BasisKind
    N: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        size = self.basis.size(self.N)
        if c.shape != (size, size):
            raise DimensionMismatch(f"coeffs shape {c.shape} != {(size, size)} for N={self.N}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("spectral coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: BasisKind, N: int) -> "SpectralField":
        size = basis.size(N)
        return cls(np.zeros((size, size)), basis, N)

    @classmethod
    def single_mode(cls, basis: BasisKind, N: int, m: int, n: int, value: float = 1.0):
        f = cls.zeros(basis, N)
        c = f.coeffs.copy()
        c[m - basis.first_mode, n - basis.first_mode] = value
        return cls(c, basis, N)

    @classmethod
    def from_vector(cls, vec, basis: BasisKind, N: int) -> "SpectralField":
        size = basis.size(N)
        return cls(np.asarray(vec, dtype=float).reshape(size, size), basis, N)

    @property
    def vector(self) -> np.ndarray:
        return self.coeffs.ravel()

    def __getitem__(self, mn):
        m, n = mn
        f0 = self.basis.first_mode
        return self.coeffs[m - f0, n - f0]


@dataclass(frozen=True)
class VelocityCoefficients:
    """``alpha[k-1, l-1]``, ``beta[k-1, l-1]`` of the incompressible flow."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
            raise DimensionMismatch(f"alpha/beta must be equal square arrays, got {a.shape}, {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("velocity coefficients must be finite")
        k, l = _kl(a.shape[0])
        resid = np.abs(k * a + l * b)
        scale = max(1.0, float(np.max(np.abs(k * a), initial=0.0)))
        if np.max(resid, initial=0.0) > LINKAGE_TOL * scale:
            raise ValidationError("velocity violates the stream-function linkage k*alpha + l*beta = 0")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def M(self) -> int:
        return self.alpha.shape[0]

    @classmethod
    def zeros(cls, M: int) -> "VelocityCoefficients":
        return cls(np.zeros((M, M)), np.zeros((M, M)))

    @classmethod
    def from_alpha(cls, alpha) -> "VelocityCoefficients":
        """Complete ``alpha`` with ``beta = -(k/l) alpha``."""
        a = np.asarray(alpha, dtype=float)
        k, l = _kl(a.shape[0])
        return cls(a, -(k / l) * a)

    @classmethod
    def from_stream(cls, psi) -> "VelocityCoefficients":
        """Velocity of ``psi = sum c_kl sin(k pi x) sin(l pi y)``."""
        c = np.asarray(psi, dtype=float)
        k, l = _kl(c.shape[0])
        return cls(-l * np.pi * c, k * np.pi * c)

    def scaled(self, c: float) -> "VelocityCoefficients":
        return VelocityCoefficients(c * self.alpha, c * self.beta)

    def evaluate(self, x, y):
        """Pointwise ``(v1, v2)``; ``x`` and ``y`` broadcast together."""
        x = np.asarray(x, dtype=float)[..., None, None]
        y = np.asarray(y, dtype=float)[..., None, None]
        k, l = _kl(self.M)
        v1 = np.sum(self.alpha * np.sin(k * np.pi * x) * np.cos(l * np.pi * y), axis=(-2, -1))
        v2 = np.sum(self.beta * np.cos(k * np.pi * x) * np.sin(l * np.pi * y), axis=(-2, -1))
        return v1, v2


def _kl(M: int):
    r = np.arange(1, M + 1, dtype=float)
    return r[:, None], r[None, :]


Control = Union[VelocityCoefficients, np.ndarray, None]


def mode_matrices(tensors: CouplingTensors) -> tuple[np.ndarray, np.ndarray]:
    """Advection matrices of unit ``alpha_kl`` and unit ``beta_kl``.

    Returns arrays of shape ``(M, M, S, S)`` with ``S`` the number of scalar
    modes, so that ``A(vel) = sum alpha_kl Ma[k,l] + beta_kl Mb[k,l]``.
    Entry ``[(m,n),(i,j)]`` is ``s pi / (sigma_m sigma_n) * i * A^{mn}_{klij}``
    (and ``j * B`` for Mb), where ``s`` is the derivative sign of the basis.
    """
    basis = tensors.basis
    size = basis.size(tensors.N)
    S = size * size
    M = tensors.M
    f0 = basis.first_mode
    sigma = mass_weights(basis, tensors.N)
    Ma = np.zeros((M, M, S, S))
    Mb = np.zeros((M, M, S, S))
    if tensors.nnz:
        m, n, k, l, i, j = (tensors.keys[:, c] for c in range(6))
        row = (m - f0) * size + (n - f0)
        col = (i - f0) * size + (j - f0)
        pref = basis.dsign * np.pi / (sigma[m - f0] * sigma[n - f0])
        np.add.at(Ma, (k - 1, l - 1, row, col), pref * i * tensors.A)
        np.add.at(Mb, (k - 1, l - 1, row, col), pref * j * tensors.B)
    return Ma, Mb


def assemble_advection(tensors: CouplingTensors, vel: VelocityCoefficients) -> np.ndarray:
    """Dense advection matrix ``A(t)``; its contribution to ``da/dt`` is ``-A a``."""
    if vel.M != tensors.M:
        raise DimensionMismatch(f"velocity has M={vel.M}, tensors were built with M={tensors.M}")
    Ma, Mb = mode_matrices(tensors)
    return np.einsum("kl,klpq->pq", vel.alpha, Ma) + np.einsum("kl,klpq->pq", vel.beta, Mb)


@dataclass(frozen=True)
class OdeOperator:
    """Diffusion diagonal plus a source of advection matrices.

    The advection comes either from coupling tensors (velocity given as
    coefficients at call time) or from a fixed prescribed matrix.
    """

    basis: BasisKind
    N: int
    kappa: float
    tensors: Optional[CouplingTensors] = None
    fixed_advection: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kappa < 0 or not np.isfinite(self.kappa):
            raise ValidationError(f"kappa must be finite and >= 0, got {self.kappa}")
        if self.tensors is not None:
            if self.tensors.basis is not self.basis or self.tensors.N != self.N:
                raise DimensionMismatch("tensors were built for a different basis or N")
        if self.fixed_advection is not None:
            fa = np.asarray(self.fixed_advection, dtype=float)
            if fa.shape != (self.size, self.size):
                raise DimensionMismatch(f"fixed advection shape {fa.shape} != {(self.size, self.size)}")
            object.__setattr__(self, "fixed_advection", fa)

    @property
    def size(self) -> int:
        return self.basis.size(self.N) ** 2

    @property
    def M(self) -> Optional[int]:
        return None if self.tensors is None else self.tensors.M

    @cached_property
    def D_diag(self) -> np.ndarray:
        m = self.basis.modes(self.N).astype(float)
        return (self.kappa * np.pi**2 * (m[:, None] ** 2 + m[None, :] ** 2)).ravel()

    @cached_property
    def mass(self) -> np.ndarray:
        """``sigma_m sigma_n`` per flattened mode (the L2 Gram diagonal)."""
        s = mass_weights(self.basis, self.N)
        return np.outer(s, s).ravel()

    @cached_property
    def Q_diag(self) -> np.ndarray:
        """Gradient-energy weights: ``Q = sum Q_diag * a**2``."""
        m = self.basis.modes(self.N).astype(float)
        return np.pi**2 * self.mass * (m[:, None] ** 2 + m[None, :] ** 2).ravel()

    @cached_property
    def _modes(self):
        if self.tensors is None:
            raise ValidationError("operator has no coupling tensors; velocity coefficients cannot be applied")
        return mode_matrices(self.tensors)

    @cached_property
    def alpha_matrices(self) -> np.ndarray:
        """``d A / d alpha_kl`` with beta eliminated through the linkage."""
        Ma, Mb = self._modes
        k, l = _kl(self.tensors.M)
        return Ma - (k / l)[:, :, None, None] * Mb

    def advection(self, control: Control = None) -> np.ndarray:
        if control is None:
            if self.fixed_advection is not None:
                return self.fixed_advection
            return np.zeros((self.size, self.size))
        if isinstance(control, VelocityCoefficients):
            Ma, Mb = self._modes
            if control.M != self.tensors.M:
                raise DimensionMismatch(f"velocity has M={control.M}, operator has M={self.M}")
            return np.einsum("kl,klpq->pq", control.alpha, Ma) + np.einsum("kl,klpq->pq", control.beta, Mb)
        mat = np.asarray(control, dtype=float)
        if mat.shape != (self.size, self.size):
            raise DimensionMismatch(f"advection matrix shape {mat.shape} != {(self.size, self.size)}")
        return mat

    def stability_limit(self, adv: np.ndarray, c_stab: float = 1.0) -> float:
        """Largest admissible RK4 step for the given advection matrix."""
        rate = self.kappa * np.pi**2 * 2 * self.N**2 + float(np.max(np.sum(np.abs(adv), axis=1), initial=0.0))
        return np.inf if rate == 0 else c_stab / rate


def _check_field(op: OdeOperator, a: SpectralField) -> None:
    if a.basis is not op.basis or a.N != op.N:
        raise DimensionMismatch(f"field ({a.basis.value}, N={a.N}) does not match operator ({op.basis.value}, N={op.N})")


def assemble_rhs(op: OdeOperator, control: Control, a: SpectralField) -> np.ndarray:
    """``-A(t) a - D a`` as a flat vector."""
    _check_field(op, a)
    v = a.vector
    return -op.advection(control) @ v - op.D_diag * v


def objective_Q(a: SpectralField) -> float:
    """Gradient energy ``||grad phi_N||^2``.

    For the sine basis this is ``(pi^2/4) sum (i^2 + j^2) a_ij^2``; the
    cosine basis uses the same sum weighted by ``sigma_i sigma_j`` instead
    of the constant 1/4.
    """
    m = a.basis.modes(a.N).astype(float)
    s = mass_weights(a.basis, a.N)
    w = np.pi**2 * np.outer(s, s) * (m[:, None] ** 2 + m[None, :] ** 2)
    return float(np.sum(w * a.coeffs**2))


def norm2(a: SpectralField) -> float:
    """``||phi_N||^2_{L2}``, the sigma-weighted coefficient norm."""
    s = mass_weights(a.basis, a.N)
    return float(np.sum(np.outer(s, s) * a.coeffs**2))


def mean_value(a: SpectralField) -> float:
    """Domain average of ``phi_N``."""
    mu = mean_weights(a.basis, a.N)
    return float(mu @ a.coeffs @ mu)


def decay_rate_P(op: OdeOperator, control: Control, a: SpectralField) -> float:
    """``dQ/dt = 2 a^T Qhat da/dt`` along the flow (negative when Q decays)."""
    rhs = assemble_rhs(op, control, a)
    return float(2.0 * np.dot(op.Q_diag * a.vector, rhs))


def velocity_norms(vel: VelocityCoefficients) -> tuple[float, float]:
    """``(||v||^2_{L2}, ||grad v||^2_{L2})`` from the coefficients."""
    k, l = _kl(vel.M)
    sq = vel.alpha**2 + vel.beta**2
    return 0.25 * float(np.sum(sq)), 0.25 * np.pi**2 * float(np.sum((k**2 + l**2) * sq))


def reconstruct_field(a: SpectralField, grid: int) -> np.ndarray:
    """``phi_N`` on the uniform ``grid x grid`` mesh of [0,1]^2 (boundary included).

    Result is indexed ``[ix, iy]``.
    """
    if grid < 2:
        raise ValidationError("grid must have at least 2 points per axis")
    x = np.linspace(0.0, 1.0, grid)
    fn = getattr(np, a.basis.fn)
    Tx = fn(np.pi * np.outer(x, a.basis.modes(a.N)))
    if a.basis is BasisKind.SINE_SINE:
        # sin(m pi) is ~1e-16, not 0; pin the walls exactly
        Tx[0, :] = 0.0
        Tx[-1, :] = 0.0
    return Tx @ a.coeffs @ Tx.T


# --------------------------------------------------------------------------
# bilinear (Kronecker) form

@dataclass(frozen=True)
class BilinearForm:
    """Matrices of ``min a^T Q a  s.t.  da/dt = -D a - (I (x) alpha^T) R (e (x) a), alpha^T Z alpha = c``.

    ``C_blocks[p]`` is the ``M^2 x S`` block of row mode ``p``: entry
    ``[(k,l),(i,j)]`` is the coefficient of ``alpha_kl a_ij`` in ``(A a)_p``.
    """

    Q_diag: np.ndarray
    D_diag: np.ndarray
    Z_diag: np.ndarray
    C_blocks: np.ndarray

    @property
    def R(self) -> np.ndarray:
        """Block-diagonal ``diag{C^p}`` of shape ``(S M^2, S^2)``."""
        S, MM, _ = self.C_blocks.shape
        R = np.zeros((S * MM, S * S))
        for p in range(S):
            R[p * MM:(p + 1) * MM, p * S:(p + 1) * S] = self.C_blocks[p]
        return R


def bilinear_form(op: OdeOperator) -> BilinearForm:
    """Build the Kronecker form directly from the sparse tensor entries."""
    t = op.tensors
    if t is None:
        raise ValidationError("bilinear form needs coupling tensors")
    basis = op.basis
    size = basis.size(op.N)
    S, M, f0 = size * size, t.M, basis.first_mode
    sigma = mass_weights(basis, op.N)
    C = np.zeros((S, M * M, S))
    for (m, n, k, l, i, j), A, B in zip(t.keys, t.A, t.B):
        pref = basis.dsign * np.pi / (sigma[m - f0] * sigma[n - f0])
        C[(m - f0) * size + (n - f0), (k - 1) * M + (l - 1), (i - f0) * size + (j - f0)] += pref * (i * A - j * (k / l) * B)
    k, l = _kl(M)
    Z = (1.0 + k**2 / l**2).ravel()
    return BilinearForm(op.Q_diag.copy(), op.D_diag.copy(), Z, C)


def apply_bilinear(form: BilinearForm, alpha: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Advection term ``(I (x) alpha^T) R (e (x) a)`` evaluated literally."""
    S = form.C_blocks.shape[0]
    alpha = np.asarray(alpha, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    left = np.kron(np.eye(S), alpha[None, :])
    right = np.kron(np.ones(S), a)
    return left @ (form.R @ right)


def write_matrix_csv(mat: np.ndarray, path) -> None:
    """Nonzero entries as ``row,col,value`` with 17 significant digits."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for r, c in zip(*np.nonzero(mat)):
            w.writerow([int(r), int(c), format(float(mat[r, c]), ".17g")])


def write_operator_csv(op: OdeOperator, control: Control, path_A, path_D) -> None:
    write_matrix_csv(op.advection(control), path_A)
    write_matrix_csv(np.diag(op.D_diag), path_D)
