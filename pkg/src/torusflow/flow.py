"""The DeTurck-modified moment-map flow and its gauge reconstruction.

The primal equation integrated here is

    d/dt F_t = -grad phi(f_t) + Df_t W(f_t)

on the periodic displacement of the lift.  ``W`` is a Hamiltonian vector field
built from the displacement alone, which makes the right-hand side strictly
parabolic.  Afterwards the gauge ODE ``d/ds p_s = -W_s(p_s)`` is integrated per
grid point and ``f_t o p_t`` recovers a solution of the plain gradient flow.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import forms, moment
from . import grid as _grid
from .grid import TorusGrid
from .maps import (
    MapError,
    TangentField,
    TorusMap,
    check_positive,
    compose,
    compose_values,
    density,
    inv_field,
    inverse,
    jacobian,
)
from .trig import hamiltonian_field, random_series

DT_MIN = 1e-10
PHI_SLACK = 1e-12
DENSITY_FLOOR = 0.1
GROW_AFTER = 8


class FlowError(RuntimeError):
    """Invalid run parameters or a failed integration."""


class FlowAbort(FlowError):
    def __init__(self, message: str, state: FlowState | None = None):
        super().__init__(message)
        self.state = state


def default_structure(dim: int) -> str:
    return "sigma" if dim == 2 else "omega"


# -- Hamiltonian utilities --------------------------------------------------------


def hamiltonian_vector_field(grid: TorusGrid, h: np.ndarray, structure: str | None = None) -> np.ndarray:
    """X_h with iota_{X_h} structure = -dh."""
    structure = structure or default_structure(grid.dim)
    dh = forms.exterior_derivative(forms.from_scalar(grid, h))
    return forms.sharp(-dh, structure)


def integrate_characteristics(
    grid: TorusGrid, X, t: float = 1.0, steps: int = 16, method: str = "spectral"
) -> TorusMap:
    """Time-t flow map of an autonomous field, RK4 per grid point.

    ``X`` is either a callable on points of shape (P, dim) or a vector field
    sampled on ``grid`` (then evaluated by interpolation).
    """
    if callable(X):
        evaluate = X
    else:
        X = np.asarray(X)
        evaluate = lambda pts: _grid.interpolate(grid, X, pts, method).T  # noqa: E731
    x = grid.points()
    p = np.zeros_like(x)
    h = t / steps
    for _ in range(steps):
        k1 = evaluate(x + p)
        k2 = evaluate(x + p + 0.5 * h * k1)
        k3 = evaluate(x + p + 0.5 * h * k2)
        k4 = evaluate(x + p + h * k3)
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return TorusMap(grid, p.T.reshape((grid.dim,) + grid.shape).copy())


def hamiltonian_flow_map(
    grid: TorusGrid, h, t: float = 1.0, steps: int = 16, structure: str | None = None
) -> TorusMap:
    """Flow of X_h for a Hamiltonian given as a grid field or a TrigSeries."""
    structure = structure or default_structure(grid.dim)
    if isinstance(h, np.ndarray):
        X = hamiltonian_vector_field(grid, h, structure)
    else:
        X = hamiltonian_field(h, structure)
    return integrate_characteristics(grid, X, t, steps)


# -- DeTurck fields -----------------------------------------------------------------


def deturck_potential_t2(f: TorusMap) -> np.ndarray:
    """k = d* iota_u sigma; W(f) is the Hamiltonian field of k."""
    sigma = forms.ConstantStructures(f.grid).sigma
    return forms.codifferential(forms.interior_product(f.u, sigma)).components[0]


def deturck_field_t2(f: TorusMap) -> np.ndarray:
    """W(f) = -sharp_sigma d d* iota_u sigma."""
    if f.grid.dim != 2:
        raise ValueError("deturck_field_t2 needs a map on T^2")
    k = forms.from_scalar(f.grid, deturck_potential_t2(f))
    return -forms.sharp(forms.exterior_derivative(k), "sigma")


def deturck_potential_t4(f: TorusMap, tol: float = 1e-10, route: str = "source") -> np.ndarray:
    """(d* iota_v omega) o f with F^-1 = id + v.

    The source route uses the identity ``(d* iota_v omega)(F(x)) = tr(omega Df(x)^-1)``
    and needs neither an inverse map nor interpolation.
    """
    if route == "source":
        return np.einsum("ab,ba...->...", forms.omega_matrix(), inv_field(jacobian(f)))
    if route == "inverse":
        finv = inverse(f, tol)
        omega = forms.ConstantStructures(f.grid).omega
        k = forms.codifferential(forms.interior_product(finv.u, omega)).components[0]
        return compose_values(f, k)
    raise ValueError(f"unknown route {route!r}")


def deturck_field_t4(f: TorusMap, tol: float = 1e-10, route: str = "source") -> np.ndarray:
    """W(f) = sharp_omega d((d* iota_v omega) o f).

    The sign is chosen so that the modified flow is parabolic; the opposite sign
    turns the gauge term anti-dissipative.
    """
    if f.grid.dim != 4:
        raise ValueError("deturck_field_t4 needs a map on T^4")
    k = forms.from_scalar(f.grid, deturck_potential_t4(f, tol, route))
    return forms.sharp(forms.exterior_derivative(k), "omega")


def deturck_field(f: TorusMap, tol: float = 1e-10, route: str = "source") -> np.ndarray:
    return deturck_field_t2(f) if f.grid.dim == 2 else deturck_field_t4(f, tol, route)


def modified_velocity(f: TorusMap, tol: float = 1e-10, route: str = "source") -> TangentField:
    """-grad phi(f) + f_* W(f)."""
    grad = moment.gradient(f).value
    W = deturck_field(f, tol, route)
    push = np.einsum("ca...,a...->c...", jacobian(f), W)
    return TangentField(f, push - grad)


# -- integrator -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Everything the integrator needs at one map, computed once."""

    phi: float
    grad: np.ndarray
    W: np.ndarray
    velocity: np.ndarray
    min_h: float
    mu_inf: float = math.nan
    max_h: float = math.nan

    @property
    def gradnorm(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.grad**2, axis=0))))


@dataclass(frozen=True)
class StepOptions:
    integrator: str = "rk4"
    route: str = "source"
    inverse_tol: float = 1e-10
    dealias: bool = True
    record_w: bool = False


def evaluate(f: TorusMap, opts: StepOptions = StepOptions(), full: bool = True) -> Evaluation:
    """Velocity and diagnostics at ``f``.

    Uses fused pipelines that share one Jacobian; they agree with
    :func:`modified_velocity` to roundoff (the T^4 inverse route falls back to it).
    """
    g = f.grid
    if g.dim == 2:
        vel, grad, W, e = _fused_t2(g, f.u)
        H = 1.0 + e
        phi = 0.5 * float(np.mean(e**2))
        mu_inf = float(np.max(np.abs(e)))
    elif opts.route == "source":
        vel, grad, W, H, phi = _fused_t4(g, f.u)
        mu_inf = moment.moment_sup(f) if full else math.nan
    else:
        grad = moment.gradient(f).value
        W = deturck_field(f, opts.inverse_tol, opts.route)
        Df = jacobian(f)
        vel = np.einsum("ca...,a...->c...", Df, W) - grad
        H = np.linalg.det(np.moveaxis(Df, (0, 1), (-2, -1)))
        phi = moment.energy(f) if full else math.nan
        mu_inf = moment.moment_sup(f) if full else math.nan
    if opts.dealias:
        vel = _grid.dealias(g, vel)
    return Evaluation(phi, grad, W, vel, float(H.min()), mu_inf, float(H.max()))


def _fused_t2(g: TorusGrid, u: np.ndarray):
    """T^2 velocity with explicit 2x2 algebra.

    grad phi = -H Df^{-T} grad H = -cof(Df) grad H and W = (-k_y, k_x) with
    k = d_x u^2 - d_y u^1.
    """
    kx, ky = g.wavenumbers
    spec = _grid.forward(g, u)
    du = _grid.inverse(g, np.stack([1j * kx * spec, 1j * ky * spec]))  # [axis, comp]
    a, b = 1.0 + du[0, 0], du[1, 0]
    c, d = du[0, 1], 1.0 + du[1, 1]
    e = du[0, 0] + du[1, 1] + du[0, 0] * du[1, 1] - du[1, 0] * du[0, 1]  # H - 1
    H = 1.0 + e
    hspec = _grid.forward(g, e)
    kspec = 1j * kx * spec[1] - 1j * ky * spec[0]
    Hx, Hy, k_x, k_y = _grid.inverse(
        g, np.stack([1j * kx * hspec, 1j * ky * hspec, 1j * kx * kspec, 1j * ky * kspec])
    )
    grad = -np.stack([d * Hx - c * Hy, a * Hy - b * Hx])
    W = np.stack([-k_y, k_x])
    vel = np.stack([a * W[0] + b * W[1], c * W[0] + d * W[1]]) - grad
    return vel, grad, W, e


def _fused_t4(g: TorusGrid, u: np.ndarray):
    Df = jacobian(TorusMap(g, u))
    grad, phi, M, H = moment.grad_t4_from_jacobian(g, Df)
    Om = forms.omega_matrix()
    k = np.einsum("ab,ba...->...", Om, M)
    W = np.einsum("ab,b...->a...", Om, _grid.gradient(g, k))
    vel = np.einsum("ca...,a...->c...", Df, W) - grad
    return vel, grad, W, H, phi


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    f: TorusMap
    dt: float  # step size to attempt next
    dt_nominal: float
    current: Evaluation
    streak: int = 0
    steps: int = 0
    W_history: tuple = ()  # (t, W) samples at accepted states
    diagnostics: dict = field(default_factory=dict)

    @property
    def phi(self) -> float:
        return self.current.phi


def record(t: float, ev: Evaluation, dt: float) -> dict:
    return {
        "t": t,
        "phi": ev.phi,
        "mu_inf": ev.mu_inf,
        "minH": ev.min_h,
        "gradnorm": ev.gradnorm,
        "dt": dt,
        "residual": math.nan,
    }


def initial_state(f: TorusMap, dt: float, opts: StepOptions = StepOptions()) -> FlowState:
    ev = evaluate(f, opts)
    hist = ((0.0, ev.W),) if opts.record_w else ()
    return FlowState(0.0, f, dt, dt, ev, W_history=hist, diagnostics=record(0.0, ev, 0.0))


def _leading_parts(grid: TorusGrid):
    """|xi|^2 and, on T^4, w = Omega xi for the frozen leading operator at the identity."""
    k2 = grid.k_squared
    if grid.dim == 2:
        return k2, None
    xi = np.array(np.broadcast_arrays(*grid.wavenumbers))
    return k2, np.einsum("ab,b...->a...", forms.omega_matrix(), xi)


def _leading_apply(grid: TorusGrid, u: np.ndarray, kappa: float) -> np.ndarray:
    """kappa M u with M = |xi|^2 on T^2 and |xi|^2/2 + (Omega xi)(Omega xi)^T/2 on T^4."""
    k2, w = _leading_parts(grid)
    spec = _grid.forward(grid, u)
    if w is None:
        return _grid.inverse(grid, kappa * k2 * spec)
    return _grid.inverse(grid, kappa * (0.5 * k2 * spec + 0.5 * w * np.sum(w * spec, axis=0)))


def _implicit_solve(grid: TorusGrid, rhs: np.ndarray, tau: float) -> np.ndarray:
    """Solve (I + tau M) x = rhs mode by mode (Sherman-Morrison on T^4)."""
    k2, w = _leading_parts(grid)
    spec = _grid.forward(grid, rhs)
    if w is None:
        return _grid.inverse(grid, spec / (1.0 + tau * k2))
    a = 1.0 + 0.5 * tau * k2
    b = 0.5 * tau
    out = (spec - b * w * np.sum(w * spec, axis=0) / (a + b * k2)) / a
    return _grid.inverse(grid, out)


def _advance(state: FlowState, dt: float, opts: StepOptions) -> tuple[TorusMap, Evaluation]:
    g = state.f.grid
    u = state.f.u
    k1 = state.current.velocity
    if opts.integrator == "rk4":

        def vel(v):
            return evaluate(TorusMap(g, v), opts, full=False).velocity

        k2 = vel(u + 0.5 * dt * k1)
        k3 = vel(u + 0.5 * dt * k2)
        k4 = vel(u + dt * k3)
        u_new = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    elif opts.integrator == "imex":
        # stabilised semi-implicit Euler; kappa bounds the variable leading coefficient
        kappa = max(1.0, state.current.max_h**2)
        rhs = u + dt * (k1 + _leading_apply(g, u, kappa))
        u_new = _implicit_solve(g, rhs, dt * kappa)
    else:
        raise FlowError(f"unknown integrator {opts.integrator!r}")
    f_new = TorusMap(g, u_new)
    return f_new, evaluate(f_new, opts)


def step(state: FlowState, dt: float | None = None, opts: StepOptions = StepOptions()) -> FlowState:
    """One accepted step; rejected attempts halve dt until phi decreases and H stays above the floor."""
    dt = state.dt if dt is None else dt
    if dt <= 0:
        raise FlowError("dt must be positive")
    rejected = False
    streak = state.streak
    while True:
        if dt < DT_MIN:
            raise FlowAbort(f"step size underflow at t={state.t:.6g}", state)
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                f_new, ev = _advance(state, dt, opts)
            ok = (
                np.isfinite(ev.phi)
                and ev.phi <= state.phi + PHI_SLACK
                and ev.min_h > DENSITY_FLOOR
            )
        except (MapError, np.linalg.LinAlgError, FloatingPointError):
            ok = False
        if ok:
            break
        dt *= 0.5
        rejected, streak = True, 0
    streak += 1
    next_dt = dt if rejected else state.dt
    if next_dt < state.dt_nominal and streak >= GROW_AFTER:
        next_dt, streak = min(2.0 * next_dt, state.dt_nominal), 0
    t = state.t + dt
    hist = state.W_history + ((t, ev.W),) if opts.record_w else state.W_history
    return FlowState(
        t=t,
        f=f_new,
        dt=next_dt,
        dt_nominal=state.dt_nominal,
        current=ev,
        streak=streak,
        steps=state.steps + 1,
        W_history=hist,
        diagnostics=record(t, ev, dt),
    )


def auto_dt(grid: TorusGrid, max_h: float, integrator: str = "rk4") -> float:
    """Parabolic heuristic 0.2 h^2 / max H^2, capped by the explicit stability limit.

    The stabilised IMEX scheme has no parabolic restriction; it uses 0.2 h / max H^2.
    """
    if integrator == "imex":
        return 0.2 * grid.spacing / max_h**2
    base = 0.2 * grid.spacing**2 / max_h**2
    lam = grid.max_dealiased_k_squared() * max(1.0, max_h**2)
    return min(base, 2.0 / lam)


# -- gauge reconstruction -------------------------------------------------------------


def gauge_reconstruct(
    grid: TorusGrid,
    W_samples,
    dt,
    method: str = "spectral",
    check: bool = True,
) -> list[TorusMap]:
    """Solve d/ds p_s = -W_s(p_s), p_0 = id, at the sample times.

    ``dt`` is a uniform spacing or the array of sample times.  W is linear in
    time between samples and interpolated in space; each interval takes one RK4
    step.
    """
    W_samples = [np.asarray(w) for w in W_samples]
    if np.ndim(dt) == 0:
        times = np.arange(len(W_samples)) * float(dt)
    else:
        times = np.asarray(dt, dtype=float)
    if len(times) != len(W_samples):
        raise FlowError("need one time per W sample")
    x = grid.points()
    p = np.zeros_like(x)
    d = grid.dim
    out = [TorusMap.identity(grid)]
    for i in range(len(W_samples) - 1):
        h = times[i + 1] - times[i]
        pair = np.concatenate([W_samples[i], W_samples[i + 1]])

        def at(pts, theta):
            v = _grid.interpolate(grid, pair, pts, method)
            return -((1.0 - theta) * v[:d] + theta * v[d:]).T

        k1 = at(x + p, 0.0)
        k2 = at(x + p + 0.5 * h * k1, 0.5)
        k3 = at(x + p + 0.5 * h * k2, 0.5)
        k4 = at(x + p + h * k3, 1.0)
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        gauge = TorusMap(grid, p.T.reshape((d,) + grid.shape).copy())
        if check:
            check_positive(grid, density(gauge))
        out.append(gauge)
    return out


def deturck_residuals(times, maps: list[TorusMap], gauges: list[TorusMap]) -> np.ndarray:
    """max |d/dt(f_t o p_t) + grad phi(f_t o p_t)| by centered differences; NaN at the ends."""
    tilde = [compose(f, p, check=False) for f, p in zip(maps, gauges)]
    r = np.full(len(tilde), math.nan)
    for k in range(1, len(tilde) - 1):
        dudt = (tilde[k + 1].u - tilde[k - 1].u) / (times[k + 1] - times[k - 1])
        r[k] = float(np.max(np.abs(dudt + moment.gradient(tilde[k]).value)))
    return r


# -- initial data -------------------------------------------------------------------------


def random_perturbation(grid: TorusGrid, amplitude: float, seed: int = 0, kind: str = "random") -> TorusMap:
    """Near-identity initial map.

    ``kind="random"``: band-limited displacement (modes |k_a| <= n/8, weights
    (1 + |k|^2)^-2) rescaled to max-norm ``amplitude``.
    ``kind="hamiltonian"``: time-1 flow of a random Hamiltonian scaled so that
    max |X_h| on the grid equals ``amplitude``.  Generated by PCG64 through
    ``numpy.random.default_rng(seed)``.
    """
    if amplitude == 0:
        return TorusMap.identity(grid)
    rng = np.random.default_rng(seed)
    if kind == "random":
        kmax = max(1, grid.n // 8)
        k = np.meshgrid(*([np.fft.fftfreq(grid.n, 1.0 / grid.n)] * grid.dim), indexing="ij")
        k = np.array(k)
        mask = np.all(np.abs(k) <= kmax, axis=0) & np.any(k != 0, axis=0)
        weight = mask / (1.0 + np.sum(k**2, axis=0)) ** 2
        shape = (grid.dim,) + grid.shape
        coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * weight
        u = np.real(np.fft.ifftn(coef, axes=grid.axes))
        return TorusMap(grid, u * (amplitude / np.max(np.abs(u))))
    if kind == "hamiltonian":
        h = random_series(rng, grid.dim, 1)
        X = hamiltonian_field(h, default_structure(grid.dim))
        scale = amplitude / np.max(np.abs(X(grid.points())))
        return hamiltonian_flow_map(grid, h.scaled(scale), 1.0, max(8, grid.n // 2))
    raise FlowError(f"unknown perturbation kind {kind!r}")


# -- runs -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    dim: int
    n: int
    t_end: float
    dt: float | str = "auto"
    integrator: str = "rk4"
    kind: str = "random"
    amplitude: float = 0.05
    seed: int = 0
    inverse_tol: float = 1e-10
    deturck_route: str = "source"
    dealias: bool = True
    phi_min: float = 0.0
    max_steps: int = 1_000_000
    reconstruct: bool | None = None
    reconstruct_steps: int = 50
    snapshot_every: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(key, why)

        if self.dim not in _grid.SUPPORTED_DIMS:
            bad("dim", "unsupported dimension")
        if not isinstance(self.n, int) or self.n < 8 or self.n & (self.n - 1):
            bad("n", "must be a power of two >= 8")
        if not self.t_end > 0:
            bad("t_end", "must be positive")
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            bad("dt", 'must be positive or "auto"')
        if self.integrator not in ("rk4", "imex"):
            bad("integrator", "must be rk4 or imex")
        if self.kind not in ("random", "hamiltonian"):
            bad("kind", "must be random or hamiltonian")
        if not 0 <= self.amplitude < 0.25:
            bad("amplitude", "must lie in [0, 0.25)")
        if self.deturck_route not in ("source", "inverse"):
            bad("deturck_route", "must be source or inverse")
        if not self.inverse_tol > 0:
            bad("inverse_tol", "must be positive")
        if self.reconstruct_steps < 3:
            bad("reconstruct_steps", "must be at least 3")

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.n)

    @property
    def options(self) -> StepOptions:
        return StepOptions(self.integrator, self.deturck_route, self.inverse_tol, self.dealias)

    @property
    def do_reconstruct(self) -> bool:
        return self.dim == 2 if self.reconstruct is None else bool(self.reconstruct)

    @classmethod
    def from_mapping(cls, data: dict) -> RunConfig:
        known = set(cls.__dataclass_fields__)
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown key")
        for key in ("dim", "n", "t_end"):
            if key not in data:
                raise ConfigError(key, "missing required key")
        return cls(**data)


class ConfigError(FlowError):
    def __init__(self, key: str, why: str):
        super().__init__(f"{key}: {why}")
        self.key = key


@dataclass
class RunResult:
    config: RunConfig
    rows: list[dict]
    final: FlowState
    aborted: bool
    reason: str
    residual_order: float
    residuals: tuple[float, float] = (math.nan, math.nan)
    gauges: list[TorusMap] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def summary(self) -> dict:
        """JSON-ready; NaN and infinities become None."""
        raw = {
            "phi0": self.rows[0]["phi"],
            "phiT": self.rows[-1]["phi"],
            "steps": len(self.rows) - 1,
            "aborted": self.aborted,
            "residual_order": self.residual_order,
            "t_final": self.rows[-1]["t"],
            "reason": self.reason,
            "residual_dt": self.residuals[0],
            "residual_dt_half": self.residuals[1],
            "wall_time": self.wall_time,
        }
        return {k: None if isinstance(v, float) and not math.isfinite(v) else v for k, v in raw.items()}


CSV_FIELDS = ("t", "phi", "mu_inf", "minH", "gradnorm", "dt", "residual")


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for row in rows:
            w.writerow([format(float(row[k]), ".17g") for k in CSV_FIELDS])


def _integrate(
    f0: TorusMap,
    dt: float,
    t_end: float,
    opts: StepOptions,
    phi_min: float,
    max_steps: int,
    on_step: Callable[[FlowState], None] | None = None,
) -> tuple[list[FlowState], bool, str]:
    """Integrate and return the accepted states (first K kept in full by the caller)."""
    state = initial_state(f0, dt, opts)
    states = [state]
    if state.phi <= phi_min:
        return states, False, "phi below phi_min"
    while state.t < t_end * (1 - 1e-12):
        if state.steps >= max_steps:
            return states, False, "max_steps reached"
        try:
            state = step(state, min(state.dt, t_end - state.t), opts)
        except FlowAbort as exc:
            return states, True, str(exc)
        states.append(state)
        if on_step:
            on_step(state)
        if state.phi <= phi_min:
            return states, False, "phi below phi_min"
    return states, False, "t_end reached"


def _window(f0, dt, steps, opts) -> list[FlowState]:
    """Fixed-step run for the reconstruction study (no growth of dt beyond ``dt``)."""
    state = initial_state(f0, dt, replace(opts, record_w=True))
    out = [state]
    for _ in range(steps):
        state = step(state, dt, replace(opts, record_w=True))
        out.append(state)
    return out


def reconstruction_study(f0: TorusMap, dt: float, steps: int, opts: StepOptions):
    """DeTurck residual at dt and dt/2 over the same time window.

    Returns (r_dt, r_half, order, residual row values at dt, gauges at dt).
    """
    results = []
    for h, m in ((dt, steps), (dt / 2, 2 * steps)):
        states = _window(f0, h, m, opts)
        times = np.array([s.t for s in states])
        gauges = gauge_reconstruct(f0.grid, [w for _, w in states[-1].W_history], times)
        r = deturck_residuals(times, [s.f for s in states], gauges)
        results.append((r, gauges, times))
    r1, r2 = np.nanmax(results[0][0]), np.nanmax(results[1][0])
    order = math.log2(r1 / r2) if r1 > 0 and r2 > 0 else math.inf
    return r1, r2, order, results[0][0], results[0][1]


def run(config: RunConfig, progress: Callable[[FlowState], None] | None = None) -> RunResult:
    """Integrate the modified flow, reconstruct the gauge, emit diagnostics."""
    start = time.perf_counter()
    g = config.grid
    opts = config.options
    f0 = random_perturbation(g, config.amplitude, config.seed, config.kind)
    check_positive(g, density(f0))
    if config.dt == "auto":
        dt = auto_dt(g, float(density(f0).max()), config.integrator)
    else:
        dt = float(config.dt)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    def on_step(state: FlowState):
        if out_dir and config.snapshot_every and state.steps % config.snapshot_every == 0:
            save_map(out_dir / f"map_{state.steps:07d}.bin", state.f)
        if progress:
            progress(state)

    states_or_last, aborted, reason = _integrate(
        f0, dt, config.t_end, opts, config.phi_min, config.max_steps, on_step
    )
    rows = [s.diagnostics for s in states_or_last]
    final = states_or_last[-1]

    order, residuals, gauges = math.nan, (math.nan, math.nan), []
    if config.do_reconstruct and not aborted and len(states_or_last) > 1:
        K = min(config.reconstruct_steps, len(states_or_last) - 1)
        K = max(K, 3)
        r1, r2, order, r_rows, gauges = reconstruction_study(f0, dt, K, opts)
        residuals = (float(r1), float(r2))
        # residual column is reported on the fixed-step window's time grid
        for k in range(1, min(K, len(rows) - 1)):
            if abs(rows[k]["t"] - k * dt) <= 1e-12 * max(1.0, k * dt):
                rows[k] = dict(rows[k], residual=float(r_rows[k]))

    result = RunResult(config, rows, final, aborted, reason, order, residuals, gauges)
    result.wall_time = time.perf_counter() - start
    if out_dir:
        write_csv(out_dir / "diagnostics.csv", rows)
        save_map(out_dir / "final_map.bin", final.f)
        (out_dir / "summary.json").write_text(json.dumps(result.summary, indent=2, allow_nan=False))
    return result


def save_map(path, f: TorusMap) -> None:
    _grid.save_snapshot(path, f.grid, f.u, [f"u{a + 1}" for a in range(f.grid.dim)])
