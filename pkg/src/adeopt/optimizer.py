"""Choosing velocity coefficients to drive the gradient energy down.

Controls are parametrised by ``alpha`` alone (``beta`` follows from the
linkage) and live on the ellipsoid ``alpha^T W alpha = c``:

* ``L2_UNIT``: ``||v||^2 = 1``      ->  ``W = 1 + k^2/l^2``,                ``c = 4``
* ``H1_UNIT``: ``||grad v||^2 = 1`` ->  ``W = (k^2 + l^2)(1 + k^2/l^2)``,   ``c = 4/pi^2``
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch, InfeasibleInit, ValidationError
from .operator import OdeOperator, SpectralField, VelocityCoefficients, _check_field, _kl
from .simulator import TimeGrid, Trajectory, _rk4, integrate

log = logging.getLogger(__name__)


class Constraint(enum.Enum):
    L2_UNIT = "l2"
    H1_UNIT = "h1"

    @classmethod
    def parse(cls, value) -> "Constraint":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for c in cls:
            if key in (c.value, c.name.lower()):
                return c
        raise ValidationError(f"unknown constraint {value!r}; expected 'l2' or 'h1'")


def constraint_metric(constraint: Constraint, M: int) -> tuple[np.ndarray, float]:
    """Diagonal metric ``W[k-1, l-1]`` and right-hand side ``c``."""
    k, l = _kl(M)
    W = 1.0 + k**2 / l**2
    if constraint is Constraint.H1_UNIT:
        return (k**2 + l**2) * W, 4.0 / np.pi**2
    return W, 4.0


def constraint_value(alpha: np.ndarray, constraint: Constraint) -> float:
    W, _ = constraint_metric(constraint, alpha.shape[0])
    return float(np.sum(W * alpha**2))


def project_to_ellipsoid(alpha: np.ndarray, constraint: Constraint) -> np.ndarray:
    """Radial rescaling of ``alpha`` onto the constraint surface."""
    W, c = constraint_metric(constraint, alpha.shape[0])
    q = float(np.sum(W * alpha**2))
    if q == 0.0:
        raise ValidationError("cannot project the zero control onto the ellipsoid")
    return alpha * np.sqrt(c / q)


def feasible_velocity(alpha, constraint: Constraint) -> VelocityCoefficients:
    return VelocityCoefficients.from_alpha(project_to_ellipsoid(np.asarray(alpha, dtype=float), constraint))


def random_feasible(rng: np.random.Generator, M: int, constraint: Constraint) -> VelocityCoefficients:
    return feasible_velocity(rng.standard_normal((M, M)), constraint)


def is_feasible(vel: VelocityCoefficients, constraint: Constraint, tol: float = 1e-10) -> bool:
    k, l = _kl(vel.M)
    _, c = constraint_metric(constraint, vel.M)
    link = np.max(np.abs(k * vel.alpha + l * vel.beta), initial=0.0)
    return link <= tol and abs(constraint_value(vel.alpha, constraint) - c) <= tol * max(1.0, c)


# --------------------------------------------------------------------------
# greedy (instantaneous) control

class GreedyControl(NamedTuple):
    vel: VelocityCoefficients
    degenerate: bool
    gradient: np.ndarray  # d(-dQ/dt)/d alpha, shape (M, M)


def decay_gradient(op: OdeOperator, a: SpectralField) -> np.ndarray:
    """Gradient of ``-dQ/dt`` with respect to ``alpha`` (beta eliminated)."""
    _check_field(op, a)
    v = a.vector
    qa = op.Q_diag * v
    return 2.0 * np.einsum("p,klpq,q->kl", qa, op.alpha_matrices, v)


def greedy_instantaneous(
    op: OdeOperator,
    a: SpectralField,
    constraint: Constraint = Constraint.L2_UNIT,
) -> GreedyControl:
    """Feasible velocity maximising the instantaneous decay ``-dQ/dt``.

    ``-dQ/dt`` is affine in ``alpha`` with gradient ``g``, so the maximiser on
    ``alpha^T W alpha = c`` is ``sqrt(c) W^{-1} g / sqrt(g^T W^{-1} g)``.  When
    ``g`` vanishes every feasible control is optimal; the first basis control
    is returned and flagged degenerate.
    """
    M = op.M
    if M is None:
        raise ValidationError("greedy control needs an operator with coupling tensors")
    W, c = constraint_metric(constraint, M)
    g = decay_gradient(op, a)
    scale = 2.0 * np.linalg.norm(op.Q_diag * a.vector) * np.linalg.norm(a.vector)
    scale *= max(1.0, float(np.max(np.abs(op.alpha_matrices), initial=0.0)))
    gnorm = float(np.sqrt(np.sum(g * g / W)))
    if scale == 0.0 or gnorm <= 1e-12 * scale:
        e = np.zeros((M, M))
        e[0, 0] = 1.0
        return GreedyControl(feasible_velocity(e, constraint), True, g)
    alpha = np.sqrt(c) * (g / W) / gnorm
    return GreedyControl(VelocityCoefficients.from_alpha(alpha), False, g)


# --------------------------------------------------------------------------
# finite-horizon shooting

@dataclass
class ControlProblem:
    op: OdeOperator
    a0: SpectralField
    horizon: TimeGrid
    constraint: Constraint = Constraint.L2_UNIT
    segments: int = 1

    def __post_init__(self):
        if self.segments < 1:
            raise ValidationError("segments must be >= 1")
        if self.horizon.steps % self.segments:
            raise ValidationError(
                f"{self.segments} segments do not align with {self.horizon.steps} time steps"
            )
        if self.op.M is None:
            raise ValidationError("control problem needs an operator with coupling tensors")
        _check_field(self.op, self.a0)

    @property
    def steps_per_segment(self) -> int:
        return self.horizon.steps // self.segments

    def segment_bounds(self, s: int) -> tuple[float, float]:
        n = self.steps_per_segment
        return self.horizon.time(s * n), self.horizon.time((s + 1) * n)


@dataclass
class ControlSolution:
    controls: list
    objective_value: float
    iterations: int = 0
    history: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)

    @property
    def alphas(self) -> np.ndarray:
        return np.stack([c.alpha for c in self.controls])


def terminal_objective(problem: ControlProblem, alphas: np.ndarray) -> float:
    """``Q(t_final)`` for per-segment controls ``alphas[s]`` (beta eliminated)."""
    op = problem.op
    D = op.D_diag
    dt = problem.horizon.dt
    a = problem.a0.vector.copy()
    n = problem.steps_per_segment
    for s in range(problem.segments):
        adv = np.einsum("kl,klpq->pq", alphas[s], op.alpha_matrices)
        for k in range(n):
            a = _rk4(lambda t, v: -adv @ v - D * v, a, 0.0, dt)
    return float(np.dot(op.Q_diag, a * a))


def _fd_gradient(problem: ControlProblem, x: np.ndarray, rel_step: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for p in range(flat.size):
        h = rel_step * max(1.0, abs(flat[p]))
        xp = flat.copy()
        xm = flat.copy()
        xp[p] += h
        xm[p] -= h
        fp = terminal_objective(problem, xp.reshape(x.shape))
        fm = terminal_objective(problem, xm.reshape(x.shape))
        gflat[p] = (fp - fm) / (2 * h)
    return grad


def _project_all(x: np.ndarray, constraint: Constraint) -> np.ndarray:
    return np.stack([project_to_ellipsoid(xs, constraint) for xs in x])


def optimize_horizon(
    problem: ControlProblem,
    init: Optional[ControlSolution] = None,
    max_iter: int = 50,
    tol: float = 1e-8,
    fd_step: float = 1e-6,
    max_backtracks: int = 30,
) -> ControlSolution:
    """Projected gradient descent on ``Q(t_final)``.

    Sensitivities come from central finite differences; each trial point is
    pulled back onto the ellipsoid by radial scaling and accepted only if it
    lowers the objective, so ``history`` is non-increasing.
    """
    constraint = problem.constraint
    M = problem.op.M
    if init is None:
        g = greedy_instantaneous(problem.op, problem.a0, constraint)
        init = ControlSolution([g.vel] * problem.segments, float("nan"))
    if len(init.controls) != problem.segments:
        raise DimensionMismatch(f"init has {len(init.controls)} controls, problem has {problem.segments} segments")
    for vel in init.controls:
        if vel.M != M:
            raise DimensionMismatch(f"init control has M={vel.M}, operator has M={M}")
        if not is_feasible(vel, constraint, tol=1e-8):
            raise InfeasibleInit("initial control violates the linkage or the norm constraint")

    x = init.alphas.copy()
    f = terminal_objective(problem, x)
    history = [f]
    if max_iter <= 0:
        return ControlSolution(list(init.controls), f, 0, history)

    step = None
    for it in range(1, max_iter + 1):
        grad = _fd_gradient(problem, x, fd_step)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        if step is None:
            step = 0.1 * float(np.linalg.norm(x)) / gnorm
        for _ in range(max_backtracks):
            trial = _project_all(x - step * grad, constraint)
            ft = terminal_objective(problem, trial)
            if ft < f:
                break
            step *= 0.5
        else:
            break
        rel = (f - ft) / max(abs(f), np.finfo(float).tiny)
        x, f = trial, ft
        history.append(f)
        step *= 2.0
        log.debug("horizon iter %d: Q(T)=%.12g rel=%.3g", it, f, rel)
        if rel < tol:
            break

    controls = [VelocityCoefficients.from_alpha(xs) for xs in x]
    return ControlSolution(controls, f, len(history) - 1, history)


# --------------------------------------------------------------------------
# closed-loop greedy

def greedy_schedule(
    op: OdeOperator,
    a0: SpectralField,
    grid: TimeGrid,
    constraint: Constraint = Constraint.L2_UNIT,
    resample_every: int = 1,
    record_every: int = 1,
) -> tuple[ControlSolution, Trajectory]:
    """Feedback loop re-solving the greedy problem every ``resample_every`` steps."""
    if resample_every < 1:
        raise ValidationError("resample_every must be >= 1")
    controls, flags, held = [], [], [None]

    def control_for_step(k, t, a):
        if k % resample_every == 0:
            g = greedy_instantaneous(op, SpectralField.from_vector(a, op.basis, op.N), constraint)
            controls.append(g.vel)
            flags.append(g.degenerate)
            held[0] = g.vel
        return held[0]

    traj = integrate(op, control_for_step, a0, grid, record_every=record_every)
    sol = ControlSolution(controls, float(traj.Q[-1]), len(controls), degenerate=flags)
    return sol, traj


# --------------------------------------------------------------------------
# output

def write_solution_csv(sol: ControlSolution, bounds: list[tuple[float, float]], path) -> None:
    """Per segment ``segment,t_start,t_end,alpha_k_l...,beta_k_l...`` plus a summary line."""
    M = sol.controls[0].M if sol.controls else 0
    kl = [(k, l) for k in range(1, M + 1) for l in range(1, M + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "t_start", "t_end"] + [f"alpha_{k}_{l}" for k, l in kl] + [f"beta_{k}_{l}" for k, l in kl])
        for s, (vel, (t0, t1)) in enumerate(zip(sol.controls, bounds)):
            w.writerow(
                [s, format(t0, ".17g"), format(t1, ".17g")]
                + [format(float(v), ".17g") for v in vel.alpha.ravel()]
                + [format(float(v), ".17g") for v in vel.beta.ravel()]
            )
        w.writerow(["# objective", format(sol.objective_value, ".17g"), "iterations", sol.iterations])
