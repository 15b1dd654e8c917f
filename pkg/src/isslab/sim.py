"""Time stepping for the plant, target, observer, error, and coupled systems.

Crank-Nicolson with a second-order ghost node for the Robin end at x = 0 and
a Dirichlet value at x = 1; one tridiagonal solve per step (two where the
boundary feedback value is predictor-corrected, and a rank-one
Sherman-Morrison update where the observer output injection couples every
interior node to the boundary value implicitly).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from . import gains as gains_mod
from . import kernels as kernels_mod
from .kernels import KernelKind, TriGrid
from .transforms import boundary_row_weights, transform_matrix

C0_DEFAULT = 13 / 5 * np.pi**2
P0_DEFAULT = 6 / 5 * np.pi**2
_COMPAT_TOL = 1e-8


class SimMode(enum.Enum):
    OPEN_LOOP = "open_loop"
    STATE_FEEDBACK = "state_feedback"
    OUTPUT_FEEDBACK = "output_feedback"
    TARGET_DIRECT = "target_direct"
    ERROR_DIRECT = "error_direct"
    OBSERVER_TARGET_DIRECT = "observer_target_direct"


class DivergenceError(RuntimeError):
    """State picked up NaN/Inf; carries the first bad time."""

    def __init__(self, time):
        super().__init__(f"state diverged (non-finite values) at t = {time:.6g}")
        self.time = time


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    """Full experiment description; all fields plain scalars/strings so a
    scenario survives pickling and key=value config round-trips."""

    q: float = 1.0
    c0: float = C0_DEFAULT
    p0: float = P0_DEFAULT
    n: int = 201
    dt: float = 2.5e-4
    t_end: float = 4.0
    mode: SimMode = SimMode.OPEN_LOOP
    A: float = 0.0
    A0: float = 0.0
    A1: float = 0.0
    A2: float = 0.0
    lambda_kind: str = "reference"  # "reference" | "constant"
    lambda_const: float = 0.0
    u0_kind: str = "reference"  # "reference" | "zero" | "sine"
    uhat0_kind: str = "zero"  # "zero" | "reference"
    store_every: int = 80
    name: str = ""

    # -- reaction coefficient ------------------------------------------------
    def lam(self, t):
        if self.lambda_kind == "constant":
            return np.full_like(np.asarray(t, dtype=float), self.lambda_const)[()]
        t = np.asarray(t, dtype=float)
        base = 1.2 * np.pi**2 * (np.sin(5 * t) ** 2 + 1)
        bump = np.where(t > 1, 1.2 * np.pi**2 * (np.exp(-t) - np.exp(-1.0)), 0.0)
        return (base + bump)[()]

    def sup_lambda(self) -> float:
        ts = np.arange(0.0, self.t_end + self.dt, self.dt)
        return float(np.max(self.lam(ts)))

    def underline_c(self) -> float:
        return self.c0 - self.sup_lambda()

    # -- disturbances ----------------------------------------------------------
    def f(self, x, t):
        return self.A / 6 * np.sin(60 * t + x)

    def d0(self, t):
        t = np.asarray(t, dtype=float)
        return (self.A0 / 5 * (np.sqrt(np.maximum(t, 0.0)) * np.exp(-t) + 2 * np.sin(25 * t)))[()]

    def d1(self, t):
        return 2 * self.A1 / 5 * np.sin(25 * t)

    def dm(self, t):
        return self.A2 / 44 * np.sin(40 * t)

    # -- initial data ---------------------------------------------------------
    def u0_values(self, xs) -> np.ndarray:
        if self.u0_kind == "reference":
            return -(1 / 6) * (5 * xs - 0.25) * (2 - xs) * (3 * xs**2 - 1)
        if self.u0_kind == "zero":
            return np.zeros_like(xs)
        if self.u0_kind == "sine":
            return np.sin(np.pi * xs)
        raise ValueError(f"unknown u0_kind {self.u0_kind!r}")

    def u0_deriv0(self) -> float:
        return {"reference": 41 / 24, "zero": 0.0, "sine": np.pi}[self.u0_kind]

    def uhat0_values(self, xs) -> np.ndarray:
        if self.uhat0_kind == "zero":
            return np.zeros_like(xs)
        if self.uhat0_kind == "reference":
            return -(1 / 6) * (5 * xs - 0.25) * (2 - xs) * (3 * xs**2 - 1)
        raise ValueError(f"unknown uhat0_kind {self.uhat0_kind!r}")

    def uhat0_deriv0(self) -> float:
        return {"zero": 0.0, "reference": 41 / 24}[self.uhat0_kind]

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def validate(self) -> None:
        if self.q <= 0 or self.c0 <= 0 or self.n < 3 or self.dt <= 0 or self.t_end <= 0:
            raise ValueError("scenario parameters out of range")
        if self.underline_c() <= 0:
            raise ValueError(
                f"c0 = {self.c0:.6g} does not dominate sup lambda = {self.sup_lambda():.6g}"
            )

    # -- config round-trip ------------------------------------------------------
    _CONFIG_FIELDS = ("q", "c0", "p0", "n", "dt", "t_end", "mode", "A", "A0", "A1",
                      "A2", "lambda_kind", "lambda_const", "u0_kind", "uhat0_kind",
                      "store_every", "name")

    def to_config(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in self._CONFIG_FIELDS:
                val = getattr(self, key)
                if isinstance(val, SimMode):
                    val = val.value
                fh.write(f"{key}={val}\n")

    @classmethod
    def from_config(cls, path) -> "Scenario":
        overrides = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                overrides[key.strip()] = val.strip()
        base = cls()
        preset = overrides.pop("preset", None)
        if preset is not None:
            base = get_preset(preset)
        return apply_overrides(base, overrides)


def apply_overrides(base: Scenario, overrides: dict) -> Scenario:
    """Apply string-valued overrides (CLI flags or config keys)."""
    kwargs = {}
    for key, val in overrides.items():
        if key not in Scenario._CONFIG_FIELDS:
            raise ValueError(f"unknown scenario key {key!r}")
        current = getattr(base, key)
        if key == "mode":
            kwargs[key] = SimMode(val) if not isinstance(val, SimMode) else val
        elif isinstance(current, int) and not isinstance(current, bool):
            kwargs[key] = int(val)
        elif isinstance(current, float):
            kwargs[key] = float(val)
        else:
            kwargs[key] = str(val)
    return replace(base, **kwargs)


def _preset(name: str, mode: SimMode, A=0.0, A0=0.0, A1=0.0, A2=0.0, **kw) -> Scenario:
    return Scenario(mode=mode, A=A, A0=A0, A1=A1, A2=A2, name=name, **kw)


PRESETS: dict[str, Scenario] = {
    "paper_fig1": _preset("paper_fig1", SimMode.OPEN_LOOP, t_end=1.0),
    "paper_fig2a": _preset("paper_fig2a", SimMode.STATE_FEEDBACK),
    "paper_fig2b": _preset("paper_fig2b", SimMode.STATE_FEEDBACK, A=2, A0=1, A1=1),
    "paper_fig2c": _preset("paper_fig2c", SimMode.STATE_FEEDBACK, A=2, A0=3, A1=3),
    "paper_fig3a": _preset("paper_fig3a", SimMode.ERROR_DIRECT),
    "paper_fig3b": _preset("paper_fig3b", SimMode.ERROR_DIRECT, A=2, A0=1, A1=1, A2=1),
    "paper_fig3c": _preset("paper_fig3c", SimMode.ERROR_DIRECT, A=2, A0=3, A1=3, A2=3),
    "paper_fig4a": _preset("paper_fig4a", SimMode.OUTPUT_FEEDBACK),
    "paper_fig4b": _preset("paper_fig4b", SimMode.OUTPUT_FEEDBACK, A=2, A0=1, A1=1, A2=1),
    "paper_fig4c": _preset("paper_fig4c", SimMode.OUTPUT_FEEDBACK, A=2, A0=3, A1=3, A2=3),
    "paper_fig5a": _preset("paper_fig5a", SimMode.OUTPUT_FEEDBACK),
    "paper_fig5b": _preset("paper_fig5b", SimMode.OUTPUT_FEEDBACK, A=2, A0=1, A1=1, A2=1),
    "paper_fig5c": _preset("paper_fig5c", SimMode.OUTPUT_FEEDBACK, A=2, A0=3, A1=3, A2=3),
}

# norm-overlay families: preset name -> (base mode, disturbance scales)
FAMILIES: dict[str, tuple[SimMode, tuple[float, ...]]] = {
    "paper_fig2d": (SimMode.STATE_FEEDBACK, (0.0, 1.0, 3.0)),
    "paper_fig3d": (SimMode.ERROR_DIRECT, (0.0, 1.0, 3.0)),
    "paper_fig5d": (SimMode.OUTPUT_FEEDBACK, (0.0, 1.0, 3.0)),
}


def get_preset(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None


def family_member(mode: SimMode, scale: float) -> Scenario:
    """Scenario for one curve of an amplitude family: scale 0 is fully
    disturbance-free, nonzero scales use the in-domain amplitude 2."""
    A = 2.0 if scale > 0 else 0.0
    uses_dm = mode in (SimMode.ERROR_DIRECT, SimMode.OUTPUT_FEEDBACK,
                       SimMode.OBSERVER_TARGET_DIRECT)
    return Scenario(mode=mode, A=A, A0=scale, A1=scale,
                    A2=scale if uses_dm else 0.0,
                    name=f"{mode.value}_scale{scale:g}")


# ---------------------------------------------------------------------------
# trace


@dataclass
class SimTrace:
    """Time-indexed record of stored profiles and boundary signals."""

    scenario: Scenario
    times: np.ndarray
    fields: np.ndarray  # (n_stored, n) primary state
    control: np.ndarray  # applied U at each stored time
    boundary_output: np.ndarray  # measured y at each stored time
    linf: np.ndarray
    fields_secondary: np.ndarray | None = None  # observer state (or driving error state)
    linf_secondary: np.ndarray | None = None

    @property
    def tilde_fields(self) -> np.ndarray:
        if self.fields_secondary is None:
            raise ValueError("trace has no secondary state")
        return self.fields - self.fields_secondary

    @property
    def linf_tilde(self) -> np.ndarray:
        return np.max(np.abs(self.tilde_fields), axis=1)

    def to_csv(self, trace_path, norms_path=None) -> None:
        """Long-format trace `t,x,u[,u_hat,u_tilde],U,y` and a norms file
        `t,linf_u[,linf_utilde]`."""
        xs = self.scenario.nodes
        coupled = self.fields_secondary is not None and self.scenario.mode is SimMode.OUTPUT_FEEDBACK
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("t,x,u,u_hat,u_tilde,U,y\n" if coupled else "t,x,u,U,y\n")
            for row, t in enumerate(self.times):
                u = self.fields[row]
                if coupled:
                    uh = self.fields_secondary[row]
                    for j, x in enumerate(xs):
                        fh.write(
                            f"{t:.17g},{x:.17g},{u[j]:.17g},{uh[j]:.17g},"
                            f"{u[j] - uh[j]:.17g},{self.control[row]:.17g},"
                            f"{self.boundary_output[row]:.17g}\n"
                        )
                else:
                    for j, x in enumerate(xs):
                        fh.write(
                            f"{t:.17g},{x:.17g},{u[j]:.17g},"
                            f"{self.control[row]:.17g},{self.boundary_output[row]:.17g}\n"
                        )
        if norms_path is not None:
            with open(norms_path, "w", encoding="utf-8") as fh:
                if coupled:
                    fh.write("t,linf_u,linf_utilde\n")
                    for t, a, b in zip(self.times, self.linf, self.linf_tilde):
                        fh.write(f"{t:.17g},{a:.17g},{b:.17g}\n")
                else:
                    fh.write("t,linf_u\n")
                    for t, a in zip(self.times, self.linf):
                        fh.write(f"{t:.17g},{a:.17g}\n")


# ---------------------------------------------------------------------------
# resources (kernels and gains shared across runs)


@dataclass(frozen=True)
class Resources:
    kgrid: TriGrid | None = None
    mgrid: TriGrid | None = None
    gains: gains_mod.GainProfile | None = None


def build_resources(scenario: Scenario) -> Resources:
    mode = scenario.mode
    need_k = mode in (SimMode.STATE_FEEDBACK, SimMode.TARGET_DIRECT,
                      SimMode.OUTPUT_FEEDBACK, SimMode.OBSERVER_TARGET_DIRECT)
    need_gains = mode in (SimMode.ERROR_DIRECT, SimMode.OUTPUT_FEEDBACK,
                          SimMode.OBSERVER_TARGET_DIRECT)
    kgrid = kernels_mod.build_grid(KernelKind.K, scenario.n, scenario.c0, scenario.q) if need_k else None
    mgrid = kernels_mod.build_grid(KernelKind.M, scenario.n, scenario.c0) if need_gains else None
    gp = None
    if need_gains:
        if mode is SimMode.OBSERVER_TARGET_DIRECT:
            gp = gains_mod.solve_gains(mgrid, kgrid, scenario.p0, scenario.q)
        else:
            gp = gains_mod.solve_p(mgrid, scenario.p0, scenario.q)
    return Resources(kgrid=kgrid, mgrid=mgrid, gains=gp)


# ---------------------------------------------------------------------------
# Crank-Nicolson core


class _Stepper:
    """CN stepper for  v_t = v_xx + a(t) v + src(x,t) [+ coupling(x) v(0,t)]
    with v_x(0) = robin v(0) + g0(t) and a prescribed Dirichlet value at 1."""

    def __init__(self, n: int, dt: float, robin: float):
        self.n = n
        self.dt = dt
        self.h = 1.0 / (n - 1)
        self.r = dt / (2 * self.h**2)
        self.robin = robin
        self._ab = np.zeros((3, n - 1))

    def _assemble(self, a_mid: float):
        n, r = self.n, self.r
        a = a_mid * self.dt / 2
        ab = self._ab
        ab[0, 1:] = -r
        ab[0, 1] = -2 * r
        ab[1, :] = 1 + 2 * r - a
        ab[1, 0] = 1 + 2 * r * (1 + self.h * self.robin) - a
        ab[2, :-1] = -r
        return ab, a

    def _rhs(self, v, a, src_mid, g0_old, g0_new, dirichlet_new):
        n, r, h, dt = self.n, self.r, self.h, self.dt
        nn = n - 1
        rhs = np.empty(nn)
        vi = v[1 : nn]
        rhs[1:] = vi + r * (v[2:] - 2 * vi + v[: nn - 1]) + a * vi + dt * src_mid[1:nn]
        rhs[0] = ((1 - 2 * r * (1 + h * self.robin) + a) * v[0] + 2 * r * v[1]
                  + dt * src_mid[0] - (dt / h) * (g0_old + g0_new))
        rhs[nn - 1] += r * dirichlet_new
        return rhs

    def step(self, v, a_mid, src_mid, g0_old, g0_new, dirichlet_new):
        ab, a = self._assemble(a_mid)
        rhs = self._rhs(v, a, src_mid, g0_old, g0_new, dirichlet_new)
        out = np.empty(self.n)
        out[:-1] = solve_banded((1, 1), ab, rhs)
        out[-1] = dirichlet_new
        return out

    def step_coupled(self, v, a_mid, src_mid, g0_old, g0_new, dirichlet_new, coupling):
        """As step, with the extra nonlocal term coupling(x) v(0,t): the old
        level explicit, the new level implicit via a rank-one
        Sherman-Morrison correction of the tridiagonal solve."""
        ab, a = self._assemble(a_mid)
        rhs = self._rhs(v, a, src_mid, g0_old, g0_new, dirichlet_new)
        dt = self.dt
        rhs += (dt / 2) * coupling[: self.n - 1] * v[0]
        y = solve_banded((1, 1), ab, rhs)
        z = solve_banded((1, 1), ab, (dt / 2) * coupling[: self.n - 1])
        v0_new = y[0] / (1 - z[0])
        out = np.empty(self.n)
        out[:-1] = y + z * v0_new
        out[-1] = dirichlet_new
        return out


def step_plant(u, t: float, scenario: Scenario, U: float):
    """One Crank-Nicolson step of the plant from t to t + dt with the
    applied boundary input U; accepts and returns a raw value array."""
    from .transforms import StateField

    wrap = isinstance(u, StateField)
    vals = u.values if wrap else np.asarray(u, dtype=float)
    stepper = _Stepper(scenario.n, scenario.dt, scenario.q)
    tm = t + scenario.dt / 2
    tn = t + scenario.dt
    out = stepper.step(
        vals,
        scenario.lam(tm),
        scenario.f(scenario.nodes, tm),
        scenario.d0(t),
        scenario.d0(tn),
        U + scenario.d1(tn),
    )
    if not np.all(np.isfinite(out)):
        raise DivergenceError(tn)
    return StateField(values=out, time=tn) if wrap else out


# ---------------------------------------------------------------------------
# compatibility warnings


def _warn_compatibility(scenario: Scenario, kgrid: TriGrid | None) -> None:
    xs = scenario.nodes
    u0 = scenario.u0_values(xs)
    robin_gap = abs(scenario.u0_deriv0() - scenario.q * u0[0] - scenario.d0(0.0))
    if robin_gap > _COMPAT_TOL:
        warnings.warn(
            f"initial data violates the Robin compatibility condition by {robin_gap:.3e}",
            RuntimeWarning, stacklevel=3,
        )
    if kgrid is not None and scenario.mode in (SimMode.STATE_FEEDBACK, SimMode.OUTPUT_FEEDBACK):
        state0 = scenario.uhat0_values(xs) if scenario.mode is SimMode.OUTPUT_FEEDBACK else u0
        U0 = float(boundary_row_weights(kgrid) @ state0)
        dirichlet_gap = abs(u0[-1] - U0 - scenario.d1(0.0))
        if dirichlet_gap > _COMPAT_TOL:
            warnings.warn(
                f"initial data violates the Dirichlet compatibility condition by {dirichlet_gap:.3e}",
                RuntimeWarning, stacklevel=3,
            )
    if scenario.mode is SimMode.OUTPUT_FEEDBACK:
        uh0 = scenario.uhat0_values(xs)
        obs_gap = abs(
            scenario.uhat0_deriv0() - scenario.q * uh0[0]
            + scenario.p0 * (u0[0] + scenario.dm(0.0) - uh0[0])
        )
        if obs_gap > _COMPAT_TOL:
            warnings.warn(
                f"observer initial data violates its compatibility condition by {obs_gap:.3e}",
                RuntimeWarning, stacklevel=3,
            )


# ---------------------------------------------------------------------------
# storage helper


class _Recorder:
    def __init__(self, scenario: Scenario, nsteps: int, secondary: bool):
        self.scenario = scenario
        self.every = max(1, scenario.store_every)
        self.nsteps = nsteps
        self.times = []
        self.fields = []
        self.fields2 = [] if secondary else None
        self.control = []
        self.output = []

    def want(self, step: int) -> bool:
        return (step + 1) % self.every == 0 or step == self.nsteps - 1

    def record(self, t, u, U, y, u2=None):
        if self.times and self.times[-1] == t:
            return
        self.times.append(t)
        self.fields.append(np.array(u))
        self.control.append(U)
        self.output.append(y)
        if self.fields2 is not None:
            self.fields2.append(np.array(u2))

    def finish(self) -> SimTrace:
        fields = np.array(self.fields)
        fields2 = np.array(self.fields2) if self.fields2 is not None else None
        return SimTrace(
            scenario=self.scenario,
            times=np.array(self.times),
            fields=fields,
            control=np.array(self.control),
            boundary_output=np.array(self.output),
            linf=np.max(np.abs(fields), axis=1),
            fields_secondary=fields2,
            linf_secondary=(np.max(np.abs(fields2), axis=1) if fields2 is not None else None),
        )


# ---------------------------------------------------------------------------
# simulation drivers


def _finite_or_raise(u, t):
    if not np.all(np.isfinite(u)):
        raise DivergenceError(t)


def _run_plant(scenario: Scenario, kgrid: TriGrid | None) -> SimTrace:
    xs = scenario.nodes
    dt = scenario.dt
    stepper = _Stepper(scenario.n, dt, scenario.q)
    feedback = scenario.mode is SimMode.STATE_FEEDBACK
    krow = boundary_row_weights(kgrid) if feedback else None
    u = scenario.u0_values(xs)
    nsteps = int(round(scenario.t_end / dt))
    rec = _Recorder(scenario, nsteps, secondary=False)
    U = float(krow @ u) if feedback else 0.0
    rec.record(0.0, u, U, u[0] + scenario.dm(0.0))
    for step in range(nsteps):
        t = step * dt
        tm = t + dt / 2
        tn = t + dt
        lam_mid = scenario.lam(tm)
        src = scenario.f(xs, tm) if scenario.A != 0 else np.zeros(scenario.n)
        g0_old, g0_new = scenario.d0(t), scenario.d0(tn)
        if feedback:
            # predictor-corrector keeps the feedback boundary value second
            # order in time (a start-of-step value caps convergence at O(dt))
            U_now = float(krow @ u)
            pred = stepper.step(u, lam_mid, src, g0_old, g0_new, U_now + scenario.d1(tn))
            U_applied = float(krow @ pred)
        else:
            U_applied = 0.0
        u = stepper.step(u, lam_mid, src, g0_old, g0_new, U_applied + scenario.d1(tn))
        _finite_or_raise(u, tn)
        if rec.want(step):
            rec.record(tn, u, U_applied, u[0] + scenario.dm(tn))
    return rec.finish()


def _run_target(scenario: Scenario, kgrid: TriGrid) -> SimTrace:
    """Target dynamics: w_t = w_xx - (c0 - lam(t)) w + psi with
    psi = f - int k f + k(x,0) d0(t); w(1) = d1; w0 the transform of u0."""
    xs = scenario.nodes
    dt = scenario.dt
    stepper = _Stepper(scenario.n, dt, scenario.q)
    A_k = transform_matrix(kgrid)
    k_x0 = kgrid.values[:, 0]
    u0 = scenario.u0_values(xs)
    w = u0 - A_k @ u0

    def psi(tm):
        out = k_x0 * scenario.d0(tm)
        if scenario.A != 0:
            fv = scenario.f(xs, tm)
            out = out + fv - A_k @ fv
        return out

    nsteps = int(round(scenario.t_end / dt))
    rec = _Recorder(scenario, nsteps, secondary=False)
    rec.record(0.0, w, 0.0, w[0])
    for step in range(nsteps):
        t = step * dt
        tm = t + dt / 2
        tn = t + dt
        w = stepper.step(w, -(scenario.c0 - scenario.lam(tm)), psi(tm),
                         scenario.d0(t), scenario.d0(tn), scenario.d1(tn))
        _finite_or_raise(w, tn)
        if rec.want(step):
            rec.record(tn, w, 0.0, w[0])
    return rec.finish()


class _ErrorStepper:
    """Estimation-error dynamics: tilde_u_t = tilde_u_xx + lam tilde_u
    + f - p dm(t) - p(x) tilde_u(0,t), Robin coefficient q + p0 with data
    d0 + p0 dm, Dirichlet d1."""

    def __init__(self, scenario: Scenario, p: np.ndarray, implicit_coupling: bool):
        self.sc = scenario
        self.p = p
        self.implicit = implicit_coupling
        self.stepper = _Stepper(scenario.n, scenario.dt, scenario.q + scenario.p0)

    def src(self, tm):
        sc = self.sc
        out = -self.p * sc.dm(tm)
        if sc.A != 0:
            out = out + sc.f(sc.nodes, tm)
        return out

    def g0(self, t):
        return self.sc.d0(t) + self.sc.p0 * self.sc.dm(t)

    def advance(self, v, t):
        sc = self.sc
        dt = sc.dt
        tm, tn = t + dt / 2, t + dt
        lam_mid = sc.lam(tm)
        if self.implicit:
            return self.stepper.step_coupled(
                v, lam_mid, self.src(tm), self.g0(t), self.g0(tn), sc.d1(tn), -self.p
            )
        # predictor-corrector: predict v(0, t+dt) with a frozen coupling
        # value, then redo the step with the trapezoidal average
        base = self.src(tm) - self.p * v[0]
        pred = self.stepper.step(v, lam_mid, base, self.g0(t), self.g0(tn), sc.d1(tn))
        corr = self.src(tm) - self.p * (v[0] + pred[0]) / 2
        return self.stepper.step(v, lam_mid, corr, self.g0(t), self.g0(tn), sc.d1(tn))


def _run_error(scenario: Scenario, res: Resources) -> SimTrace:
    xs = scenario.nodes
    dt = scenario.dt
    err = _ErrorStepper(scenario, res.gains.p, implicit_coupling=False)
    v = scenario.u0_values(xs) - scenario.uhat0_values(xs)
    nsteps = int(round(scenario.t_end / dt))
    rec = _Recorder(scenario, nsteps, secondary=False)
    rec.record(0.0, v, 0.0, v[0])
    for step in range(nsteps):
        tn = (step + 1) * dt
        v = err.advance(v, step * dt)
        _finite_or_raise(v, tn)
        if rec.want(step):
            rec.record(tn, v, 0.0, v[0])
    return rec.finish()


def _run_observer_target(scenario: Scenario, res: Resources) -> SimTrace:
    """Observer target dynamics driven by the estimation error boundary
    value: hat_w_t = hat_w_xx - c(t) hat_w + K_p(x)(dm + tilde_u(0,t)),
    Robin data -p0 (dm + tilde_u(0,t)), Dirichlet 0."""
    xs = scenario.nodes
    dt = scenario.dt
    A_k = transform_matrix(res.kgrid)
    kp = res.gains.kp
    err = _ErrorStepper(scenario, res.gains.p, implicit_coupling=True)
    v = scenario.u0_values(xs) - scenario.uhat0_values(xs)
    uh0 = scenario.uhat0_values(xs)
    w = uh0 - A_k @ uh0
    stepper = _Stepper(scenario.n, dt, scenario.q)
    nsteps = int(round(scenario.t_end / dt))
    rec = _Recorder(scenario, nsteps, secondary=True)
    rec.record(0.0, w, 0.0, w[0], u2=v)
    for step in range(nsteps):
        t = step * dt
        tm, tn = t + dt / 2, t + dt
        s_old = scenario.dm(t) + v[0]
        v = err.advance(v, t)
        _finite_or_raise(v, tn)
        s_new = scenario.dm(tn) + v[0]
        src = kp * ((s_old + s_new) / 2)
        w = stepper.step(w, -(scenario.c0 - scenario.lam(tm)), src,
                         -scenario.p0 * s_old, -scenario.p0 * s_new, 0.0)
        _finite_or_raise(w, tn)
        if rec.want(step):
            rec.record(tn, w, 0.0, w[0], u2=v)
    return rec.finish()


def simulate_coupled(scenario: Scenario, resources: Resources | None = None) -> SimTrace:
    """Plant and observer in lockstep under output feedback; the trace
    carries u as the primary and the observer state as the secondary field."""
    if scenario.mode is not SimMode.OUTPUT_FEEDBACK:
        raise ValueError("simulate_coupled requires mode = output_feedback")
    scenario.validate()
    res = resources or build_resources(scenario)
    _warn_compatibility(scenario, res.kgrid)
    xs = scenario.nodes
    dt = scenario.dt
    krow = boundary_row_weights(res.kgrid)
    p = res.gains.p
    plant = _Stepper(scenario.n, dt, scenario.q)
    observer = _Stepper(scenario.n, dt, scenario.q + scenario.p0)
    u = scenario.u0_values(xs)
    uh = scenario.uhat0_values(xs)
    nsteps = int(round(scenario.t_end / dt))
    rec = _Recorder(scenario, nsteps, secondary=True)
    rec.record(0.0, u, float(krow @ uh), u[0] + scenario.dm(0.0), u2=uh)

    def advance(U_bc, u, uh, t):
        tm, tn = t + dt / 2, t + dt
        lam_mid = scenario.lam(tm)
        f_mid = scenario.f(xs, tm) if scenario.A != 0 else np.zeros(scenario.n)
        y_old = u[0] + scenario.dm(t)
        u_new = plant.step(u, lam_mid, f_mid, scenario.d0(t), scenario.d0(tn),
                           U_bc + scenario.d1(tn))
        y_new = u_new[0] + scenario.dm(tn)
        # output injection: p(x) y known at both levels; -p(x) uh(0) implicit
        src = p * (y_old + y_new) / 2
        uh_new = observer.step_coupled(uh, lam_mid, src,
                                       -scenario.p0 * y_old, -scenario.p0 * y_new,
                                       U_bc, -p)
        return u_new, uh_new

    for step in range(nsteps):
        t = step * dt
        tn = t + dt
        U_now = float(krow @ uh)
        u_pred, uh_pred = advance(U_now, u, uh, t)
        U_applied = float(krow @ uh_pred)
        u, uh = advance(U_applied, u, uh, t)
        _finite_or_raise(u, tn)
        _finite_or_raise(uh, tn)
        if rec.want(step):
            rec.record(tn, u, U_applied, u[0] + scenario.dm(tn), u2=uh)
    return rec.finish()


def simulate(scenario: Scenario, resources: Resources | None = None) -> SimTrace:
    """Run the scenario in its mode and return the stored trace."""
    scenario.validate()
    if scenario.mode is SimMode.OUTPUT_FEEDBACK:
        return simulate_coupled(scenario, resources)
    res = resources or build_resources(scenario)
    if scenario.mode in (SimMode.OPEN_LOOP, SimMode.STATE_FEEDBACK):
        _warn_compatibility(scenario, res.kgrid)
        return _run_plant(scenario, res.kgrid)
    if scenario.mode is SimMode.TARGET_DIRECT:
        return _run_target(scenario, res.kgrid)
    if scenario.mode is SimMode.ERROR_DIRECT:
        return _run_error(scenario, res)
    if scenario.mode is SimMode.OBSERVER_TARGET_DIRECT:
        return _run_observer_target(scenario, res)
    raise ValueError(f"unhandled mode {scenario.mode}")
