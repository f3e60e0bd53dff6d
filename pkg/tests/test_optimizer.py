import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adeopt.errors import DimensionMismatch, InfeasibleInit, ValidationError
from adeopt.operator import OdeOperator, SpectralField, VelocityCoefficients, decay_rate_P, velocity_norms
from adeopt.optimizer import (
    Constraint,
    ControlProblem,
    ControlSolution,
    constraint_value,
    decay_gradient,
    greedy_instantaneous,
    greedy_schedule,
    is_feasible,
    optimize_horizon,
    project_to_ellipsoid,
    random_feasible,
    terminal_objective,
    write_solution_csv,
)
from adeopt.scenarios import InitialCondition, ICKind, Phase, project_initial, switching_velocity
from adeopt.simulator import TimeGrid, piecewise_schedule, simulate
from adeopt.spectral import BasisKind, build_coupling_tensors

SINE = BasisKind.SINE_SINE
COS = BasisKind.COSINE_COSINE


def tensor_op(N, M, kappa=0.0, basis=SINE):
    return OdeOperator(basis, N, kappa, build_coupling_tensors(N, M, basis))


def random_state(rng, basis, N):
    size = basis.size(N)
    return SpectralField(rng.standard_normal((size, size)), basis, N)


def test_constraint_parse():
    assert Constraint.parse("L2") is Constraint.L2_UNIT
    assert Constraint.parse("h1_unit") is Constraint.H1_UNIT
    with pytest.raises(ValidationError):
        Constraint.parse("linf")


@pytest.mark.parametrize("constraint", list(Constraint))
def test_projection_and_norms(constraint, rng):
    for _ in range(20):
        vel = random_feasible(rng, 3, constraint)
        assert is_feasible(vel, constraint, tol=1e-12)
        l2, h1 = velocity_norms(vel)
        assert (l2 if constraint is Constraint.L2_UNIT else h1) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValidationError):
        project_to_ellipsoid(np.zeros((2, 2)), constraint)


def test_gradient_matches_decay_rate(rng):
    op = tensor_op(3, 2)
    a = random_state(rng, SINE, 3)
    g = decay_gradient(op, a)
    # -dQ/dt is linear in alpha when kappa = 0
    for _ in range(5):
        vel = random_feasible(rng, 2, Constraint.L2_UNIT)
        assert -decay_rate_P(op, vel, a) == pytest.approx(float(np.sum(g * vel.alpha)), rel=1e-12)


@pytest.mark.parametrize("constraint", list(Constraint))
def test_greedy_dominates_random_controls(constraint, rng):
    op = tensor_op(2, 2, kappa=0.01)
    for _ in range(5):
        a = random_state(rng, SINE, 2)
        g = greedy_instantaneous(op, a, constraint)
        assert not g.degenerate
        assert is_feasible(g.vel, constraint, tol=1e-10)
        best = -decay_rate_P(op, g.vel, a)
        for _ in range(1000 // 5):
            assert -decay_rate_P(op, random_feasible(rng, 2, constraint), a) <= best + 1e-12 * abs(best)


def test_greedy_constraint_value_four(rng):
    op = tensor_op(3, 3)
    g = greedy_instantaneous(op, random_state(rng, SINE, 3))
    assert constraint_value(g.vel.alpha, Constraint.L2_UNIT) == pytest.approx(4.0, abs=1e-10)


def test_greedy_kkt_collinearity(rng):
    op = tensor_op(3, 3)
    k, l = np.meshgrid([1, 2, 3], [1, 2, 3], indexing="ij")
    W = 1 + k**2 / l**2
    g = greedy_instantaneous(op, random_state(rng, SINE, 3))
    u, v = g.gradient.ravel(), (W * g.vel.alpha).ravel()
    cos = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    assert cos == pytest.approx(1.0, abs=1e-8)


def test_greedy_degenerate_states():
    op = tensor_op(3, 2)
    for a in (SpectralField.zeros(SINE, 3), SpectralField.single_mode(SINE, 3, 3, 3)):
        g = greedy_instantaneous(op, a)
        assert g.degenerate
        assert is_feasible(g.vel, Constraint.L2_UNIT)
        assert g.vel.alpha[0, 0] > 0 and np.count_nonzero(g.vel.alpha) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_greedy_scaling_covariance(seed, c):
    rng = np.random.default_rng(seed)
    op = tensor_op(2, 2)
    a = random_state(rng, SINE, 2)
    g1 = greedy_instantaneous(op, a)
    g2 = greedy_instantaneous(op, SpectralField(c * a.coeffs, SINE, 2))
    np.testing.assert_allclose(g1.vel.alpha, g2.vel.alpha, atol=1e-10)


def test_greedy_needs_tensors():
    with pytest.raises(ValidationError):
        greedy_instantaneous(OdeOperator(SINE, 2, 0.01), SpectralField.zeros(SINE, 2))


# --- finite horizon --------------------------------------------------------

def _problem(rng, N=2, M=2, segments=2, t=0.5, dt=0.01, kappa=0.01):
    op = tensor_op(N, M, kappa)
    return ControlProblem(op, random_state(rng, SINE, N), TimeGrid(0.0, t, dt), Constraint.L2_UNIT, segments)


def test_problem_validation(rng):
    with pytest.raises(ValidationError):
        _problem(rng, segments=3)
    with pytest.raises(ValidationError):
        ControlProblem(OdeOperator(SINE, 2, 0.01), SpectralField.zeros(SINE, 2), TimeGrid(0, 1, 0.1))


def test_terminal_objective_matches_simulation(rng):
    p = _problem(rng)
    alphas = np.stack([random_feasible(rng, 2, Constraint.L2_UNIT).alpha for _ in range(2)])
    vels = [VelocityCoefficients.from_alpha(x) for x in alphas]
    tr = simulate(p.op, piecewise_schedule([0.0, 0.25], vels), p.a0, p.horizon)
    assert terminal_objective(p, alphas) == pytest.approx(tr.Q[-1], rel=1e-13)


def test_zero_iterations_returns_init(rng):
    p = _problem(rng)
    init = ControlSolution([random_feasible(rng, 2, Constraint.L2_UNIT) for _ in range(2)], 0.0)
    sol = optimize_horizon(p, init, max_iter=0)
    for a, b in zip(sol.controls, init.controls):
        assert np.array_equal(a.alpha, b.alpha)
    assert sol.iterations == 0


def test_infeasible_init_rejected(rng):
    p = _problem(rng)
    bad = VelocityCoefficients.from_alpha(np.ones((2, 2)))
    with pytest.raises(InfeasibleInit):
        optimize_horizon(p, ControlSolution([bad, bad], 0.0))
    with pytest.raises(DimensionMismatch):
        optimize_horizon(p, ControlSolution([bad], 0.0))


def test_horizon_descent(rng):
    p = _problem(rng)
    init = ControlSolution([random_feasible(rng, 2, Constraint.L2_UNIT) for _ in range(2)], 0.0)
    sol = optimize_horizon(p, init, max_iter=30)
    h = np.array(sol.history)
    assert np.all(np.diff(h) <= 0)
    assert h[-1] < h[0]
    assert sol.objective_value == h[-1]
    for vel in sol.controls:
        assert is_feasible(vel, Constraint.L2_UNIT, tol=1e-10)


def test_greedy_init_beats_diffusion(rng):
    p = _problem(rng, segments=1)
    sol = optimize_horizon(p, max_iter=5)
    diffusion = simulate(p.op, None, p.a0, p.horizon).Q[-1]
    assert sol.objective_value <= diffusion


# --- closed loop -------------------------------------------------------------

def test_greedy_schedule_beats_diffusion(rng):
    op = tensor_op(2, 2, kappa=0.01)
    a0 = random_state(rng, SINE, 2)
    grid = TimeGrid(0.0, 0.5, 1e-3)
    sol, tr = greedy_schedule(op, a0, grid)
    assert len(sol.controls) == grid.steps
    assert tr.Q[-1] <= simulate(op, None, a0, grid).Q[-1]
    sol5, _ = greedy_schedule(op, a0, grid, resample_every=5)
    assert len(sol5.controls) == grid.steps // 5


def test_greedy_schedule_zero_state():
    op = tensor_op(2, 2, kappa=0.01)
    sol, tr = greedy_schedule(op, SpectralField.zeros(SINE, 2), TimeGrid(0.0, 0.05, 1e-3))
    assert all(sol.degenerate)
    assert not np.any(tr.states)


def test_greedy_dominates_switching_flow_pointwise():
    op = tensor_op(8, 2, kappa=0.001, basis=COS)
    a0 = project_initial(InitialCondition(ICKind.STEP), COS, 8)
    grid = TimeGrid(0.0, 0.25, 0.00125)
    sol, tr = greedy_schedule(op, a0, grid, resample_every=20, record_every=20)
    bench = [switching_velocity(p) for p in Phase]
    bench = [v.scaled(1.0 / np.sqrt(velocity_norms(v)[0])) for v in bench]
    for idx in range(len(tr) - 1):
        a = tr.field(idx)
        mine = decay_rate_P(op, sol.controls[idx], a)
        for v in bench:
            assert mine <= decay_rate_P(op, v, a) + 1e-12


def test_solution_csv(tmp_path, rng):
    sol = ControlSolution([random_feasible(rng, 2, Constraint.L2_UNIT) for _ in range(2)], 1.25, 3)
    write_solution_csv(sol, [(0.0, 0.25), (0.25, 0.5)], tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["segment", "t_start", "t_end", "alpha_1_1"]
    assert rows[0][-1] == "beta_2_2"
    assert float(rows[2][3]) == sol.controls[1].alpha[0, 0]
    assert rows[3] == ["# objective", "1.25", "iterations", "3"]
