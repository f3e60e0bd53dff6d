"""Fixed-step RK4 integration of the Galerkin system with mixing diagnostics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UnstableError, ValidationError
from .operator import (
    Control,
    OdeOperator,
    SpectralField,
    _check_field,
    reconstruct_field,
)
from .spectral import mean_weights

log = logging.getLogger(__name__)

BLOWUP = 1e12

Schedule = Callable[[float], Control]


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_final: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        span = self.t_final - self.t0
        if span < 0:
            raise ValidationError("t_final must not precede t0")
        steps = round(span / self.dt)
        tol = 4 * max(steps, 1) * np.finfo(float).eps * max(1.0, abs(self.t0), abs(self.t_final))
        if abs(steps * self.dt - span) > tol:
            raise ValidationError(f"dt={self.dt} does not divide the interval [{self.t0}, {self.t_final}]")

    @property
    def steps(self) -> int:
        return round((self.t_final - self.t0) / self.dt)

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (samples, size, size)
    Q: np.ndarray
    norm2: np.ndarray
    V: np.ndarray
    basis: object = None
    N: int = 0

    def __len__(self):
        return len(self.times)

    def field(self, idx: int) -> SpectralField:
        return SpectralField(self.states[idx], self.basis, self.N)

    @property
    def final(self) -> SpectralField:
        return self.field(-1)


# --------------------------------------------------------------------------
# schedules

def constant_schedule(control: Control) -> Schedule:
    return lambda t: control


def piecewise_schedule(breaks: Sequence[float], controls: Sequence[Control]) -> Schedule:
    """Control ``controls[s]`` on ``[breaks[s], breaks[s+1])``; the last one extends to infinity."""
    breaks = np.asarray(breaks, dtype=float)
    if len(breaks) != len(controls):
        raise ValidationError("need one break time per control")

    def schedule(t):
        s = int(np.searchsorted(breaks, t, side="right")) - 1
        return controls[max(s, 0)]

    return schedule


def switching_schedule(first: Control, second: Control, period: float = 1.0, switch: float = 0.75) -> Schedule:
    """``first`` on ``[n, n + switch)``, ``second`` on ``[n + switch, n + period)``."""

    def schedule(t):
        return first if (t % period) < switch else second

    return schedule


# --------------------------------------------------------------------------
# integration

def _rk4(f, a, t, dt):
    k1 = f(t, a)
    k2 = f(t + 0.5 * dt, a + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, a + 0.5 * dt * k2)
    k4 = f(t + dt, a + dt * k3)
    return a + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_blowup(a: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(a)) or np.max(np.abs(a), initial=0.0) > BLOWUP:
        raise UnstableError(f"coefficients exceeded {BLOWUP:g} at t={t:.6g}")


def step_rk4(op: OdeOperator, control, a: SpectralField, t: float, dt: float) -> SpectralField:
    """One classical RK4 step.

    ``control`` is either a fixed control or a callable ``t -> control``
    sampled at the stage times.
    """
    _check_field(op, a)
    D = op.D_diag
    if callable(control):
        def f(s, v):
            return -op.advection(control(s)) @ v - D * v
    else:
        adv = op.advection(control)

        def f(s, v):
            return -adv @ v - D * v

    out = _rk4(f, a.vector, t, dt)
    _check_blowup(out, t + dt)
    return SpectralField.from_vector(out, a.basis, a.N)


class _Diagnostics:
    def __init__(self, op: OdeOperator, a0: np.ndarray):
        mu = mean_weights(op.basis, op.N)
        self.mass = op.mass
        self.qw = op.Q_diag
        self.mu = np.outer(mu, mu).ravel()
        self.c = float(self.mu @ a0)

    def __call__(self, a: np.ndarray):
        n2 = float(np.dot(self.mass, a * a))
        q = float(np.dot(self.qw, a * a))
        # ||phi - c||^2 = ||phi||^2 - 2 c <phi> + c^2 on the unit square
        v = n2 - 2.0 * self.c * float(self.mu @ a) + self.c**2
        return q, n2, v


def integrate(
    op: OdeOperator,
    control_for_step: Callable[[int, float, np.ndarray], Control],
    a0: SpectralField,
    grid: TimeGrid,
    record_every: int = 1,
    c_stab: float = 1.0,
    check_stability: bool = True,
) -> Trajectory:
    """Time loop shared by open-loop and feedback control.

    ``control_for_step(k, t_k, a_k)`` returns the control held over step k.
    """
    _check_field(op, a0)
    if record_every < 1:
        raise ValidationError("record_every must be >= 1")
    D = op.D_diag
    a = a0.vector.copy()
    diag = _Diagnostics(op, a)
    times, states, rows = [], [], []

    def record(k, t, a):
        if k % record_every == 0 or k == grid.steps:
            times.append(t)
            states.append(a.copy())
            rows.append(diag(a))

    record(0, grid.t0, a)
    last_id, adv = object(), None
    for k in range(grid.steps):
        t = grid.time(k)
        ctl = control_for_step(k, t, a)
        if ctl is not last_id:
            adv = op.advection(ctl)
            last_id = ctl
            if check_stability:
                limit = op.stability_limit(adv, c_stab)
                log.debug("control change at t=%.6g, RK4 step limit %.4g", t, limit)
                if grid.dt > limit:
                    raise ValidationError(f"dt={grid.dt:g} exceeds the RK4 stability budget {limit:.4g} at t={t:.6g}")
        a = _rk4(lambda s, v: -adv @ v - D * v, a, t, grid.dt)
        _check_blowup(a, grid.time(k + 1))
        record(k + 1, grid.time(k + 1), a)

    rows = np.array(rows).reshape(-1, 3)
    size = op.basis.size(op.N)
    return Trajectory(
        times=np.array(times),
        states=np.array(states).reshape(-1, size, size),
        Q=rows[:, 0],
        norm2=rows[:, 1],
        V=rows[:, 2],
        basis=op.basis,
        N=op.N,
    )


def simulate(
    op: OdeOperator,
    schedule: Optional[Schedule],
    a0: SpectralField,
    grid: TimeGrid,
    record_every: int = 1,
    c_stab: float = 1.0,
) -> Trajectory:
    """Integrate from ``a0`` over ``grid`` under an open-loop schedule.

    Schedules are piecewise constant with switches on step boundaries, so
    the control is sampled once per step at its midpoint.  ``None`` means
    the operator's own (fixed or zero) advection.
    """
    if schedule is None:
        schedule = constant_schedule(None)
    return integrate(
        op,
        lambda k, t, a: schedule(t + 0.5 * grid.dt),
        a0,
        grid,
        record_every=record_every,
        c_stab=c_stab,
    )


def check_energy_identity(traj: Trajectory, kappa: float) -> float:
    """Max normalised residual of ``d||phi||^2/dt + 2 kappa ||grad phi||^2``.

    The derivative is a centred difference over interior samples; each
    residual is divided by ``max(1, Q(t))``.
    """
    if len(traj) < 3:
        raise ValidationError("energy identity needs at least 3 samples")
    t, n2, Q = traj.times, traj.norm2, traj.Q
    dn2 = (n2[2:] - n2[:-2]) / (t[2:] - t[:-2])
    res = np.abs(dn2 + 2.0 * kappa * Q[1:-1]) / np.maximum(1.0, Q[1:-1])
    return float(np.max(res))


# --------------------------------------------------------------------------
# output

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path, dump_modes: bool = False, every: int = 1) -> None:
    basis = traj.basis
    modes = basis.modes(traj.N)
    header = ["t", "Q", "norm2", "V"]
    if dump_modes:
        header += [f"a_{m}_{n}" for m in modes for n in modes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for idx in range(0, len(traj), every):
            row = [_fmt(traj.times[idx]), _fmt(traj.Q[idx]), _fmt(traj.norm2[idx]), _fmt(traj.V[idx])]
            if dump_modes:
                row += [_fmt(v) for v in traj.states[idx].ravel()]
            w.writerow(row)


def write_field_csv(a: SpectralField, path, grid: int = 65) -> None:
    phi = reconstruct_field(a, grid)
    x = np.linspace(0.0, 1.0, grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "phi"])
        for ix in range(grid):
            for iy in range(grid):
                w.writerow([_fmt(x[ix]), _fmt(x[iy]), _fmt(phi[ix, iy])])
