"""The two worked examples, initial conditions and the scenario config format.

``FIXED_FLOW``: sine basis, steady shear ``v = (sin 2 pi y, 0)``.

``SWITCHING_FLOW``: cosine basis, kappa = 0.001, a unit-period flow that is
``(sin pi x cos pi y, -cos pi x sin pi y)`` for the first 0.75 of each
period and ``(-sin 2 pi x cos pi y, 2 cos 2 pi x sin pi y)`` for the rest,
started from the indicator of the left half of the square.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .errors import BasisMismatch, ValidationError
from .operator import OdeOperator, SpectralField, VelocityCoefficients
from .optimizer import Constraint
from .spectral import (
    BasisKind,
    integral_sin_cos,
    integral_sin_sin2_sin,
    mass_weights,
)


class ScenarioName(enum.Enum):
    FIXED_FLOW = "fixed"
    SWITCHING_FLOW = "switching"
    CUSTOM = "custom"


class ControlMode(enum.Enum):
    PRESCRIBED = "prescribed"
    GREEDY = "greedy"
    HORIZON = "horizon"


class ICKind(enum.Enum):
    MODES = "modes"
    STEP = "step"
    PROJECTED = "projected"


def _parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    key = str(value).strip().lower()
    for item in cls:
        if key in (item.value, item.name.lower()):
            return item
    choices = ", ".join(i.value for i in cls)
    raise ValidationError(f"invalid {cls.__name__} {value!r}; choose from {choices}")


# --------------------------------------------------------------------------
# initial conditions

@dataclass(frozen=True)
class InitialCondition:
    kind: ICKind
    modes: dict = field(default_factory=dict)  # (m, n) -> coefficient, for MODES
    func: Optional[Callable] = None  # f(x, y), for PROJECTED
    points: int = 64

    @classmethod
    def parse(cls, text: str) -> "InitialCondition":
        """``step`` or ``modes:1,1=1.0;2,1=-0.5``."""
        text = text.strip()
        if text.lower() == "step":
            return cls(ICKind.STEP)
        head, _, body = text.partition(":")
        if head.strip().lower() != "modes" or not body:
            raise ValidationError(f"initial condition must be 'step' or 'modes:m,n=v;...', got {text!r}")
        modes = {}
        for item in body.split(";"):
            if not item.strip():
                continue
            try:
                mn, val = item.split("=")
                m, n = (int(v) for v in mn.split(","))
                modes[(m, n)] = float(val)
            except ValueError as exc:
                raise ValidationError(f"bad mode entry {item!r}") from exc
        return cls(ICKind.MODES, modes)

    def format(self) -> str:
        if self.kind is ICKind.STEP:
            return "step"
        if self.kind is ICKind.MODES:
            return "modes:" + ";".join(f"{m},{n}={repr(v)}" for (m, n), v in sorted(self.modes.items()))
        raise ValidationError("projected initial conditions have no text form")


def project_initial(ic: InitialCondition, basis: BasisKind, N: int) -> SpectralField:
    basis = BasisKind.parse(basis)
    if ic.kind is ICKind.STEP:
        if basis is not BasisKind.COSINE_COSINE:
            raise BasisMismatch("the half-domain step initial condition needs the cosine basis")
        c = np.zeros((N + 1, N + 1))
        c[0, 0] = 0.5
        for m in range(1, N + 1):
            if m % 4 == 1:
                c[m, 0] = 2.0 / (m * math.pi)
            elif m % 4 == 3:
                c[m, 0] = -2.0 / (m * math.pi)
        return SpectralField(c, basis, N)

    if ic.kind is ICKind.MODES:
        f = SpectralField.zeros(basis, N)
        c = f.coeffs.copy()
        for (m, n), v in ic.modes.items():
            if not (basis.first_mode <= m <= N and basis.first_mode <= n <= N):
                raise ValidationError(f"mode ({m},{n}) outside the {basis.value} basis with N={N}")
            c[m - basis.first_mode, n - basis.first_mode] = v
        return SpectralField(c, basis, N)

    if ic.func is None:
        raise ValidationError("projected initial condition needs a function")
    x, w = np.polynomial.legendre.leggauss(ic.points)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    F = np.asarray(ic.func(X, Y), dtype=float) * np.outer(w, w)
    T = getattr(np, basis.fn)(np.pi * np.outer(basis.modes(N), x))
    s = mass_weights(basis, N)
    return SpectralField((T @ F @ T.T) / np.outer(s, s), basis, N)


# --------------------------------------------------------------------------
# worked-example operators

def fixed_flow_advection(N: int) -> np.ndarray:
    """Advection matrix of ``v = (sin 2 pi y, 0)`` in the sine basis.

    Row ``(k, l)``, column ``(m, n)``:
    ``m pi / (sigma_k sigma_l) * int sin(k pi x) cos(m pi x) dx * int sin(l pi y) sin(2 pi y) sin(n pi y) dy``.
    """
    sigma = mass_weights(BasisKind.SINE_SINE, N)
    r = range(1, N + 1)
    Ix = np.array([[integral_sin_cos(k, m) for m in r] for k in r])
    Iy = np.array([[integral_sin_sin2_sin(l, n) for n in r] for l in r])
    m = np.arange(1, N + 1, dtype=float)
    # A[(k,l),(m,n)] = pi m Ix[k,m] Iy[l,n] / (sigma_k sigma_l)
    A = np.pi * np.einsum("km,ln,m->klmn", Ix, Iy, m)
    A /= np.outer(sigma, sigma)[:, :, None, None]
    return A.reshape(N * N, N * N)


def build_fixed_flow_operator(N: int, kappa: float) -> OdeOperator:
    if N < 1:
        raise ValidationError("N must be >= 1")
    return OdeOperator(BasisKind.SINE_SINE, N, kappa, fixed_advection=fixed_flow_advection(N))


class Phase(enum.Enum):
    PART1 = 1
    PART2 = 2


# Velocity coefficients of the two switching phases in the (alpha, beta) basis.
SWITCHING_VELOCITY = {
    Phase.PART1: {(1, 1): (1.0, -1.0)},
    Phase.PART2: {(2, 1): (-1.0, 2.0)},
}


def switching_velocity(phase: Phase, M: int = 2) -> VelocityCoefficients:
    alpha = np.zeros((M, M))
    beta = np.zeros((M, M))
    for (k, l), (a, b) in SWITCHING_VELOCITY[phase].items():
        alpha[k - 1, l - 1] = a
        beta[k - 1, l - 1] = b
    return VelocityCoefficients(alpha, beta)


def _shift_table(m: int, i: int, p: int) -> float:
    """``int cos(m pi x) sin(p pi x) sin(i pi x) dx`` as tabulated (``A_i``, ``D_j``, tilde forms)."""
    if m == 0:
        return 0.5 if i == p else 0.0
    val = 0.0
    if i == m + p:
        val += 0.25
    if i == m - p and i > 0:
        val -= 0.25
    if i == p - m and i > 0:
        val += 0.25
    return val


def _sum_table(m: int, i: int, p: int) -> float:
    """``int cos(m pi x) cos(p pi x) cos(i pi x) dx`` as tabulated (``B_j``, ``C_i``, tilde forms)."""
    if m == 0:
        return 0.5 if i == p else 0.0
    if i == 0:
        return 0.5 if m == p else 0.0
    val = 0.0
    for cand in {m + p, m - p, p - m}:
        if i == cand:
            val += 0.25
    return val


def switching_tables(phase: Phase, m: int, n: int, i: int, j: int) -> tuple[float, float, float, float]:
    """``(A_i, B_j, C_i, D_j)`` for PART1 or their tilde versions for PART2."""
    p = 1 if phase is Phase.PART1 else 2
    return (
        _shift_table(m, i, p),
        _sum_table(n, j, 1),
        _sum_table(m, i, p),
        _shift_table(n, j, 1),
    )


def switching_flow_advection(N: int, phase: Phase) -> np.ndarray:
    """Advection matrix of one switching phase, assembled from the tables.

    PART1 entry ``pi/(sigma_m sigma_n) (-i A_i B_j + j C_i D_j)``;
    PART2 entry ``pi/(sigma_m sigma_n) (i At_i Bt_j - 2 j Ct_i Dt_j)``.
    """
    size = N + 1
    sigma = mass_weights(BasisKind.COSINE_COSINE, N)
    A = np.zeros((size, size, size, size))
    for m in range(size):
        for n in range(size):
            pref = math.pi / (sigma[m] * sigma[n])
            for i in range(size):
                for j in range(size):
                    a, b, c, d = switching_tables(phase, m, n, i, j)
                    if phase is Phase.PART1:
                        A[m, n, i, j] = pref * (-i * a * b + j * c * d)
                    else:
                        A[m, n, i, j] = pref * (i * a * b - 2 * j * c * d)
    return A.reshape(size * size, size * size)


def build_switching_flow_operator(N: int, kappa: float, phase: Phase) -> OdeOperator:
    if N < 1:
        raise ValidationError("N must be >= 1")
    phase = phase if isinstance(phase, Phase) else Phase[str(phase).upper()]
    return OdeOperator(BasisKind.COSINE_COSINE, N, kappa, fixed_advection=switching_flow_advection(N, phase))


# --------------------------------------------------------------------------
# scenario config

@dataclass
class ScenarioSpec:
    scenario: ScenarioName = ScenarioName.CUSTOM
    basis: BasisKind = BasisKind.SINE_SINE
    N: int = 4
    M: int = 2
    kappa: float = 0.01
    t_final: float = 1.0
    dt: float = 1e-3
    initial: str = "modes:1,1=1.0"
    control: ControlMode = ControlMode.PRESCRIBED
    constraint: Constraint = Constraint.L2_UNIT
    alpha: str = ""
    segments: int = 1
    seed: int = 0
    output_dir: str = "."
    dump_modes: bool = False

    def __post_init__(self):
        self.scenario = _parse_enum(ScenarioName, self.scenario)
        self.basis = BasisKind.parse(self.basis)
        self.control = _parse_enum(ControlMode, self.control)
        self.constraint = Constraint.parse(self.constraint)
        for name in ("N", "M", "segments", "seed"):
            setattr(self, name, int(getattr(self, name)))
        for name in ("kappa", "t_final", "dt"):
            setattr(self, name, float(getattr(self, name)))
        if isinstance(self.dump_modes, str):
            self.dump_modes = _parse_bool(self.dump_modes)
        self.validate()

    def validate(self) -> None:
        if self.N < 1 or self.M < 1:
            raise ValidationError("N and M must be >= 1")
        if self.kappa < 0:
            raise ValidationError("kappa must be >= 0")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValidationError("dt and t_final must be positive")
        ic = self.initial_condition
        if ic.kind is ICKind.STEP and self.basis is not BasisKind.COSINE_COSINE:
            raise ValidationError("initial=step requires basis=cosine")
        if self.scenario is ScenarioName.FIXED_FLOW and self.basis is not BasisKind.SINE_SINE:
            raise ValidationError("the fixed-flow scenario uses the sine basis")
        if self.scenario is ScenarioName.SWITCHING_FLOW:
            if self.basis is not BasisKind.COSINE_COSINE:
                raise ValidationError("the switching-flow scenario uses the cosine basis")
            ratio = 0.25 / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ValidationError(f"dt={self.dt} must divide 0.25 for the switching flow")

    @property
    def initial_condition(self) -> InitialCondition:
        return InitialCondition.parse(self.initial)

    @property
    def velocity(self) -> VelocityCoefficients:
        """CUSTOM velocity from ``alpha=k,l=v;...`` with beta from the linkage."""
        a = np.zeros((self.M, self.M))
        for item in filter(None, (s.strip() for s in self.alpha.split(";"))):
            try:
                kl, val = item.split("=")
                k, l = (int(v) for v in kl.split(","))
            except ValueError as exc:
                raise ValidationError(f"bad alpha entry {item!r}") from exc
            if not (1 <= k <= self.M and 1 <= l <= self.M):
                raise ValidationError(f"velocity mode ({k},{l}) outside 1..M={self.M}")
            a[k - 1, l - 1] = float(val)
        return VelocityCoefficients.from_alpha(a)

    @classmethod
    def preset(cls, name, **overrides) -> "ScenarioSpec":
        name = _parse_enum(ScenarioName, name)
        base = dict(scenario=name)
        if name is ScenarioName.FIXED_FLOW:
            base.update(basis="sine", N=8, kappa=0.01, t_final=1.0, dt=1e-3, initial="modes:1,1=1.0")
        elif name is ScenarioName.SWITCHING_FLOW:
            base.update(basis="cosine", N=8, M=2, kappa=0.001, t_final=5.0, dt=0.00125, initial="step")
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out[f.name] = str(v)
        return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValidationError(f"not a boolean: {text!r}")


CONFIG_KEYS = tuple(f.name for f in fields(ScenarioSpec))


def parse_config(text: str) -> dict:
    """``key=value`` lines with ``#`` comments, returned as raw strings.

    Keys may use the CLI spelling (``t-final``) or the field name (``t_final``).
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
        if key not in CONFIG_KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def serialize_config(spec: ScenarioSpec) -> str:
    return "".join(f"{k}={v}\n" for k, v in spec.to_dict().items())


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())
