"""Entrywise bounds on the advection matrix of the sine-basis system.

With ``F = sum_kl i A^{mn}_{klij} alpha_kl`` and ``G = sum_kl j B^{mn}_{klij} beta_kl``
the matrix entry is ``4 pi (F + G)``.  Cauchy-Schwarz gives

    |4 pi (F + G)| <= 8 sqrt(2) pi K^{mn}_{ij}     (unit L2 velocity)
    |4 pi (F + G)| <= 8 sqrt(2) pi Khat^{mn}_{ij}  (unit H1 velocity)

where ``K`` uses plain sums of squared tensor entries and ``Khat`` weights
them by ``1/(k^2 + l^2)``.  The H1 route actually yields the tighter
``8 sqrt(2) Khat``; the looser form is what gets checked.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolation, ValidationError
from .operator import OdeOperator, VelocityCoefficients
from .optimizer import Constraint, constraint_metric, random_feasible
from .spectral import BasisKind, CouplingTensors, build_coupling_tensors, require_basis

BOUND_FACTOR = 8.0 * np.sqrt(2.0) * np.pi


def _weighted_K(tensors: CouplingTensors, weighted: bool) -> np.ndarray:
    require_basis(tensors.basis, BasisKind.SINE_SINE, "coefficient bounds")
    N = tensors.N
    SA = np.zeros((N, N, N, N))
    SB = np.zeros((N, N, N, N))
    if tensors.nnz:
        m, n, k, l, i, j = (tensors.keys[:, c] for c in range(6))
        w = 1.0 / (k**2 + l**2) if weighted else np.ones(len(k))
        idx = (m - 1, n - 1, i - 1, j - 1)
        np.add.at(SA, idx, w * tensors.A**2)
        np.add.at(SB, idx, w * tensors.B**2)
    r = np.arange(1, N + 1, dtype=float)
    ii = r[None, None, :, None]
    jj = r[None, None, None, :]
    return np.maximum(ii * np.sqrt(SA), jj * np.sqrt(SB))


def compute_K(tensors: CouplingTensors) -> tuple[float, np.ndarray]:
    """``K`` and the per-index array ``K[m-1, n-1, i-1, j-1]``."""
    per = _weighted_K(tensors, weighted=False)
    return float(per.max(initial=0.0)), per


def compute_K_hat(tensors: CouplingTensors) -> tuple[float, np.ndarray]:
    per = _weighted_K(tensors, weighted=True)
    return float(per.max(initial=0.0)), per


@dataclass
class EntryCheck:
    constraint: Constraint
    trials: int
    seed: int
    bound: float
    observed_max_entry: float
    max_ratio: float  # max over trials/entries of |entry| / per-index bound
    violations: list = field(default_factory=list)


def verify_entry_bounds(
    tensors: CouplingTensors,
    trials: int,
    constraint: Constraint = Constraint.L2_UNIT,
    seed: int = 0,
    raise_on_violation: bool = True,
) -> EntryCheck:
    """Sample feasible velocities and check every entry of ``A(t)``.

    Both the global bound ``8 sqrt(2) pi K`` and the per-index bound
    ``8 sqrt(2) pi K^{mn}_{ij}`` are checked (K-hat for ``H1_UNIT``).
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    constraint = Constraint.parse(constraint)
    if constraint is Constraint.L2_UNIT:
        Kval, per = compute_K(tensors)
    else:
        Kval, per = compute_K_hat(tensors)
    N = tensors.N
    S = N * N
    per_bound = BOUND_FACTOR * per.reshape(S, S)
    bound = BOUND_FACTOR * Kval
    slack = 1e-12 * max(1.0, bound)

    op = OdeOperator(BasisKind.SINE_SINE, N, 0.0, tensors)
    rng = np.random.default_rng(seed)
    observed = 0.0
    max_ratio = 0.0
    violations = []
    for _ in range(trials):
        A = op.advection(random_feasible(rng, tensors.M, constraint))
        absA = np.abs(A)
        observed = max(observed, float(absA.max(initial=0.0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(per_bound > 0, absA / per_bound, np.where(absA > slack, np.inf, 0.0))
        max_ratio = max(max_ratio, float(ratio.max(initial=0.0)))
        bad = (absA > bound + slack) | (absA > per_bound + slack)
        for r, c in zip(*np.nonzero(bad)):
            violations.append((divmod(int(r), N), divmod(int(c), N), float(A[r, c]), float(per_bound[r, c])))
    # divmod gives zero-based pairs; report 1-based modes
    violations = [((m + 1, n + 1), (i + 1, j + 1), v, b) for (m, n), (i, j), v, b in violations]
    check = EntryCheck(constraint, trials, seed, bound, observed, max_ratio, violations)
    if violations and raise_on_violation:
        raise BoundViolation(f"{len(violations)} advection entries exceed their bound", violations)
    return check


def extremal_control(tensors: CouplingTensors, mn, ij, constraint: Constraint = Constraint.L2_UNIT) -> VelocityCoefficients:
    """Feasible velocity maximising the single entry ``A[(m,n),(i,j)]``.

    The entry is linear in ``alpha`` (beta eliminated), so the maximiser is
    the ellipsoid support point along its coefficient vector.
    """
    op = OdeOperator(BasisKind.SINE_SINE, tensors.N, 0.0, tensors)
    N = tensors.N
    r = (mn[0] - 1) * N + (mn[1] - 1)
    c = (ij[0] - 1) * N + (ij[1] - 1)
    coef = op.alpha_matrices[:, :, r, c]
    W, rhs = constraint_metric(constraint, tensors.M)
    q = float(np.sqrt(np.sum(coef**2 / W)))
    if q == 0.0:
        raise ValidationError(f"entry {mn},{ij} does not depend on the velocity")
    return VelocityCoefficients.from_alpha(np.sqrt(rhs) * (coef / W) / q)


def entry_tightness(tensors: CouplingTensors, mn, ij, constraint: Constraint = Constraint.L2_UNIT) -> float:
    """``|entry| / per-index bound`` at the extremal control for that entry."""
    vel = extremal_control(tensors, mn, ij, constraint)
    op = OdeOperator(BasisKind.SINE_SINE, tensors.N, 0.0, tensors)
    N = tensors.N
    entry = op.advection(vel)[(mn[0] - 1) * N + mn[1] - 1, (ij[0] - 1) * N + ij[1] - 1]
    per = compute_K(tensors)[1] if constraint is Constraint.L2_UNIT else compute_K_hat(tensors)[1]
    return abs(float(entry)) / (BOUND_FACTOR * per[mn[0] - 1, mn[1] - 1, ij[0] - 1, ij[1] - 1])


def growth_samples(Ns=(2, 4, 8, 12), M=None) -> np.ndarray:
    """Rows ``(N, K(N), Khat(N))`` with ``M = N`` unless given."""
    rows = []
    for N in Ns:
        t = build_coupling_tensors(N, M or N)
        rows.append((N, compute_K(t)[0], compute_K_hat(t)[0]))
    return np.array(rows)


@dataclass
class BoundReport:
    K: float
    K_hat: float
    per_index_K: np.ndarray
    observed_max_entry: float
    bound_l2: float
    bound_h1: float
    growth_samples: np.ndarray
    gamma_fit: float
    gamma_hat_fit: float
    seed: int
    violations: int = 0

    def rows(self):
        return [
            ("K", self.K),
            ("K_hat", self.K_hat),
            ("bound_l2", self.bound_l2),
            ("bound_h1", self.bound_h1),
            ("observed_max_entry", self.observed_max_entry),
            ("gamma_fit", self.gamma_fit),
            ("gamma_hat_fit", self.gamma_hat_fit),
            ("seed", self.seed),
            ("violations", self.violations),
        ]


def bound_report(N: int, M: int, trials: int = 1000, seed: int = 0, growth_Ns=(2, 4, 8, 12)) -> BoundReport:
    """Full bound report; raises ``BoundViolation`` if any sampled entry escapes."""
    t = build_coupling_tensors(N, M)
    K, per = compute_K(t)
    Kh, _ = compute_K_hat(t)
    l2 = verify_entry_bounds(t, trials, Constraint.L2_UNIT, seed)
    h1 = verify_entry_bounds(t, trials, Constraint.H1_UNIT, seed)
    growth = growth_samples(growth_Ns)
    return BoundReport(
        K=K,
        K_hat=Kh,
        per_index_K=per,
        observed_max_entry=l2.observed_max_entry,
        bound_l2=BOUND_FACTOR * K,
        bound_h1=BOUND_FACTOR * Kh,
        growth_samples=growth,
        gamma_fit=float(np.max(growth[:, 1] / growth[:, 0])),
        gamma_hat_fit=float(np.max(growth[:, 2])),
        seed=seed,
        violations=len(l2.violations) + len(h1.violations),
    )


def write_bound_csv(report: BoundReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for name, value in report.rows():
            w.writerow([name, format(float(value), ".17g") if isinstance(value, float) else value])
