import csv

import numpy as np
import pytest

from adeopt.errors import UnstableError, ValidationError
from adeopt.operator import OdeOperator, SpectralField, norm2, reconstruct_field
from adeopt.optimizer import Constraint, random_feasible
from adeopt.simulator import (
    TimeGrid,
    check_energy_identity,
    constant_schedule,
    piecewise_schedule,
    simulate,
    step_rk4,
    switching_schedule,
    write_field_csv,
    write_trajectory_csv,
)
from adeopt.spectral import BasisKind, build_coupling_tensors

from conftest import gl

SINE = BasisKind.SINE_SINE
COS = BasisKind.COSINE_COSINE


def tensor_op(N, M, kappa=0.0, basis=SINE):
    return OdeOperator(basis, N, kappa, build_coupling_tensors(N, M, basis))


def test_time_grid():
    g = TimeGrid(0.0, 1.0, 1e-3)
    assert g.steps == 1000
    assert g.times[-1] == pytest.approx(1.0)
    assert TimeGrid(0.0, 5.0, 0.00125).steps == 4000
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 1.0, 0.3)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 1.0, -0.1)
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 0.0, 0.1)


def test_rk4_pure_diffusion_analytic():
    op = OdeOperator(SINE, 3, 0.01)
    a = SpectralField.single_mode(SINE, 3, 1, 1)
    for k in range(1000):
        a = step_rk4(op, None, a, k * 1e-3, 1e-3)
    assert a[1, 1] == pytest.approx(np.exp(-0.02 * np.pi**2), abs=1e-8)
    assert np.count_nonzero(a.coeffs) == 1


def test_rk4_conserves_norm_without_diffusion(rng):
    op = tensor_op(3, 2)
    vel = random_feasible(rng, 2, Constraint.L2_UNIT)
    a0 = SpectralField(rng.standard_normal((3, 3)), SINE, 3)
    a = a0
    for k in range(1000):
        a = step_rk4(op, vel, a, k * 1e-3, 1e-3)
    assert norm2(a) == pytest.approx(norm2(a0), rel=1e-6)


def test_rk4_fourth_order():
    op = OdeOperator(SINE, 8, 0.01)
    a0 = SpectralField.single_mode(SINE, 8, 8, 8)
    exact = np.exp(-0.01 * np.pi**2 * 128)
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        tr = simulate(op, None, a0, TimeGrid(0.0, 1.0, dt), record_every=10**6)
        errs.append(abs(tr.final[8, 8] - exact))
    for coarse, fine in zip(errs, errs[1:]):
        assert 14 < coarse / fine < 18


def test_step_samples_callable_at_stage_times(rng):
    op = OdeOperator(SINE, 2, 0.0)
    base = rng.standard_normal((4, 4))
    seen = []

    def schedule(t):
        seen.append(t)
        return t * base

    a = SpectralField(rng.standard_normal((2, 2)), SINE, 2)
    out = step_rk4(op, schedule, a, 0.5, 0.1)
    assert sorted(set(np.round(seen, 12))) == [0.5, 0.55, 0.6]
    f = lambda t, v: -(t * base) @ v
    v, t, h = a.vector, 0.5, 0.1
    k1 = f(t, v)
    k2 = f(t + h / 2, v + h / 2 * k1)
    k3 = f(t + h / 2, v + h / 2 * k2)
    k4 = f(t + h, v + h * k3)
    np.testing.assert_allclose(out.vector, v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), rtol=1e-14)


def test_blowup_raises():
    op = OdeOperator(SINE, 1, 0.0, fixed_advection=np.array([[-1e3]]))
    a = SpectralField(np.array([[1e11]]), SINE, 1)
    with pytest.raises(UnstableError):
        step_rk4(op, None, a, 0.0, 0.01)


def test_stability_budget_enforced():
    op = OdeOperator(SINE, 8, 0.01)
    a0 = SpectralField.single_mode(SINE, 8, 1, 1)
    limit = op.stability_limit(op.advection())
    assert limit == pytest.approx(1.0 / (0.01 * np.pi**2 * 128))
    with pytest.raises(ValidationError):
        simulate(op, None, a0, TimeGrid(0.0, 1.0, 0.1))


def test_pure_diffusion_diagnostics_decrease(rng):
    op = OdeOperator(SINE, 4, 0.01)
    a0 = SpectralField(rng.standard_normal((4, 4)), SINE, 4)
    tr = simulate(op, None, a0, TimeGrid(0.0, 0.5, 1e-3))
    assert np.all(np.diff(tr.Q) < 0)
    assert np.all(np.diff(tr.norm2) < 0)
    assert len(tr) == 501


def test_zero_initial_condition_stays_zero(rng):
    op = tensor_op(3, 2, kappa=0.01)
    vel = random_feasible(rng, 2, Constraint.L2_UNIT)
    tr = simulate(op, constant_schedule(vel), SpectralField.zeros(SINE, 3), TimeGrid(0.0, 0.1, 1e-3))
    assert not np.any(tr.states)
    assert not np.any(tr.Q) and not np.any(tr.norm2) and not np.any(tr.V)


def test_variance_matches_quadrature(rng):
    op = tensor_op(3, 2, kappa=0.01, basis=COS)
    a0 = SpectralField(rng.standard_normal((4, 4)), COS, 3)
    vel = random_feasible(rng, 2, Constraint.L2_UNIT)
    tr = simulate(op, constant_schedule(vel), a0, TimeGrid(0.0, 0.2, 1e-3), record_every=50)
    x, w = gl(40)
    T = np.cos(np.pi * np.outer(np.arange(4), x))
    c = a0.coeffs[0, 0]
    for idx in range(len(tr)):
        phi = T.T @ tr.states[idx] @ T
        assert tr.V[idx] == pytest.approx(float(np.sum(np.outer(w, w) * (phi - c) ** 2)), abs=1e-12)
    # the cosine mean mode does not diffuse and advection cannot move it
    assert np.allclose(tr.states[:, 0, 0], c, atol=1e-12)


def test_switching_matches_concatenated_runs(rng):
    op = tensor_op(3, 2, kappa=0.01)
    v1 = random_feasible(rng, 2, Constraint.L2_UNIT)
    v2 = random_feasible(rng, 2, Constraint.L2_UNIT)
    a0 = SpectralField(rng.standard_normal((3, 3)), SINE, 3)
    full = simulate(op, switching_schedule(v1, v2), a0, TimeGrid(0.0, 1.0, 0.0125))
    first = simulate(op, constant_schedule(v1), a0, TimeGrid(0.0, 0.75, 0.0125))
    second = simulate(op, constant_schedule(v2), first.final, TimeGrid(0.75, 1.0, 0.0125))
    np.testing.assert_allclose(full.final.coeffs, second.final.coeffs, rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(full.states[60], first.final.coeffs)


def test_piecewise_schedule():
    s = piecewise_schedule([0.0, 0.5], ["a", "b"])
    assert [s(0.1), s(0.5), s(0.9), s(5.0)] == ["a", "b", "b", "b"]
    with pytest.raises(ValidationError):
        piecewise_schedule([0.0], ["a", "b"])
    sw = switching_schedule("p", "q")
    assert [sw(0.1), sw(0.74), sw(0.76), sw(1.2), sw(1.9)] == ["p", "p", "q", "p", "q"]


def test_energy_identity_diffusion():
    op = OdeOperator(SINE, 3, 0.01)
    tr = simulate(op, None, SpectralField.single_mode(SINE, 3, 1, 1), TimeGrid(0.0, 1.0, 1e-3))
    assert check_energy_identity(tr, 0.01) < 1e-6


def test_energy_identity_pure_advection(rng):
    op = tensor_op(4, 4)
    vel = random_feasible(rng, 4, Constraint.L2_UNIT)
    a0 = SpectralField(rng.standard_normal((4, 4)), SINE, 4)
    tr = simulate(op, constant_schedule(vel), a0, TimeGrid(0.0, 1.0, 1e-3))
    assert check_energy_identity(tr, 0.0) < 1e-6


def test_energy_identity_advection_diffusion(rng):
    op = tensor_op(4, 4, kappa=0.01)
    vel = random_feasible(rng, 4, Constraint.L2_UNIT)
    a0 = SpectralField(rng.standard_normal((4, 4)), SINE, 4)
    tr = simulate(op, constant_schedule(vel), a0, TimeGrid(0.0, 1.0, 1e-3))
    assert check_energy_identity(tr, 0.01) < 1e-4
    assert np.all(np.diff(tr.norm2) < 0)
    with pytest.raises(ValidationError):
        check_energy_identity(simulate(op, None, a0, TimeGrid(0.0, 1e-3, 1e-3)), 0.01)


def test_deterministic(rng):
    op = tensor_op(3, 2, kappa=0.01)
    vel = random_feasible(rng, 2, Constraint.L2_UNIT)
    a0 = SpectralField(rng.standard_normal((3, 3)), SINE, 3)
    grid = TimeGrid(0.0, 0.2, 1e-3)
    a = simulate(op, constant_schedule(vel), a0, grid)
    b = simulate(op, constant_schedule(vel), a0, grid)
    assert np.array_equal(a.states, b.states)


def test_record_every_keeps_endpoints():
    op = OdeOperator(SINE, 2, 0.01)
    tr = simulate(op, None, SpectralField.single_mode(SINE, 2, 1, 1), TimeGrid(0.0, 1.0, 0.01), record_every=30)
    assert list(tr.times[:2]) == [0.0, pytest.approx(0.3)]
    assert tr.times[-1] == pytest.approx(1.0)


def test_csv_outputs(tmp_path):
    op = OdeOperator(SINE, 2, 0.01)
    tr = simulate(op, None, SpectralField.single_mode(SINE, 2, 1, 2), TimeGrid(0.0, 0.1, 0.01))
    write_trajectory_csv(tr, tmp_path / "t.csv")
    write_trajectory_csv(tr, tmp_path / "m.csv", dump_modes=True, every=5)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "Q", "norm2", "V"]
    assert len(rows) == 12
    assert float(rows[-1][1]) == tr.Q[-1]
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][4:] == ["a_1_1", "a_1_2", "a_2_1", "a_2_2"]
    assert len(rows) == 4
    write_field_csv(tr.final, tmp_path / "f.csv", grid=9)
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "phi"]
    assert len(rows) == 82
    phi = reconstruct_field(tr.final, 9)
    assert float(rows[1 + 4 * 9 + 2][2]) == phi[4, 2]
