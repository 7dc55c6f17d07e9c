"""Measurements behind the acceptance criteria.

Each ``criterion_*`` function runs one experiment and returns an
:class:`Outcome` with the measured numbers, so the same code serves the
acceptance tests and ad-hoc inspection.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import checks, forms, maps, moment
from .flow import (
    RunConfig,
    StepOptions,
    hamiltonian_flow_map,
    random_perturbation,
    reconstruction_study,
    run,
)
from .grid import TorusGrid
from .maps import TangentField, TorusMap
from .trig import TrigSeries, hamiltonian_field, random_series

FD_STEPS = (1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6)


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{status}] criterion {self.number}: {self.title} ({parts}; {self.elapsed:.1f}s)"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        out.elapsed = time.perf_counter() - start
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- shared helpers -----------------------------------------------------------------------------


def gradient_fd_error(f: TorusMap, rng: np.random.Generator, steps=FD_STEPS) -> float:
    """Best relative error over ``steps`` of centered differences against G(grad phi, f_* Y)."""
    g = f.grid
    Y = 0.1 * checks.smooth_field(g, rng, g.dim, kmax=2)
    v = np.einsum("ca...,a...->c...", maps.jacobian(f), Y)
    exact = moment.gradient(f).inner(TangentField(f, v))
    errs = []
    for s in steps:
        fd = (moment.energy(TorusMap(g, f.u + s * v)) - moment.energy(TorusMap(g, f.u - s * v))) / (2 * s)
        errs.append(abs(fd - exact) / abs(exact))
    return float(min(errs))


def fixed_hamiltonian(dim: int, amplitude: float = 0.05, seed: int = 11) -> TrigSeries:
    """Random Hamiltonian scaled so that max |X_h| is about ``amplitude``."""
    h = random_series(np.random.default_rng(seed), dim, 1, terms=6, kmax=2)
    X = hamiltonian_field(h, "sigma" if dim == 2 else "omega")
    probe = np.random.default_rng(seed + 1).uniform(size=(4096, dim))
    return h.scaled(amplitude / np.max(np.abs(X(probe))))


def fixed_displacement(dim: int, amplitude: float = 0.05, seed: int = 5) -> TrigSeries:
    u = random_series(np.random.default_rng(seed), dim, dim, terms=8, kmax=2)
    probe = np.random.default_rng(seed + 1).uniform(size=(4096, dim))
    return u.scaled(amplitude / np.max(np.abs(u.value(probe))))


def restrict(field: np.ndarray, dim: int) -> np.ndarray:
    """Samples of a fine-grid field on the grid with half the resolution."""
    return field[(...,) + (slice(None, None, 2),) * dim]


def generator_steps(n: int) -> int:
    return max(1, n // 8)


# -- criteria -----------------------------------------------------------------------------------


@_timed
def criterion_1(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    res = checks.exterior_calculus_suite(TorusGrid(2, 32), rng)
    res += checks.exterior_calculus_suite(TorusGrid(4, 16), rng)
    worst = max(r.measured for r in res)
    return Outcome(1, "exterior calculus identities", worst <= 1e-10, {"max_rel_error": worst})


@_timed
def criterion_2() -> Outcome:
    res = checks.hyperkahler_suite(TorusGrid(4, 8))
    worst = max(r.measured for r in res)
    return Outcome(2, "anti-self-dual triple and star table", worst == 0.0, {"max_abs_error": worst})


@_timed
def criterion_3(seed: int = 0, count: int = 100) -> Outcome:
    rng = np.random.default_rng(seed)
    g = TorusGrid(4, 16)
    worst = max(checks.asd_balance(checks.random_form(g, 1, rng)) for _ in range(count))
    return Outcome(3, "exact forms balance self-dual and anti-self-dual parts", worst <= 1e-8,
                   {"max_rel_gap": worst, "samples": count})


@_timed
def criterion_4(seed: int = 0, count: int = 10_000) -> Outcome:
    res = checks.symbol_suite(np.random.default_rng(seed), count)
    det_err = max(r.measured for r in res if "determinant" in r.name)
    pd_ok = all(r.passed for r in res if "positive" in r.name)
    return Outcome(4, "symbol determinants and ellipticity", det_err <= 1e-12 and pd_ok,
                   {"max_rel_det_error": det_err, "positive_definite": pd_ok})


@_timed
def criterion_5(seed: int = 0, maps_per_dim: int = 5, directions: int = 20) -> Outcome:
    rng = np.random.default_rng(seed)
    worst = {}
    for dim, n in ((2, 32), (4, 8)):
        g = TorusGrid(dim, n)
        w = 0.0
        for _ in range(maps_per_dim):
            f = random_perturbation(g, 0.05, int(rng.integers(1 << 30)))
            for _ in range(directions):
                w = max(w, gradient_fd_error(f, rng))
        worst[f"T{dim}_max_rel_error"] = w
    return Outcome(5, "gradient matches finite differences", max(worst.values()) <= 1e-4, worst)


def _fixed_point_quantities(dim: int, n: int) -> dict:
    g = TorusGrid(dim, n)
    phi_H = hamiltonian_flow_map(g, fixed_hamiltonian(dim), 1.0, generator_steps(n))
    mu = moment.moment_t2(phi_H) if dim == 2 else np.array(list(moment.moment_hk(phi_H).values()))
    return {"gradnorm": moment.gradient(phi_H).norm(), "mu": mu}


def fixed_point_study(dim: int, ns) -> dict:
    """Quantities at generated symplectomorphisms with floors from successive refinements."""
    q = {n: _fixed_point_quantities(dim, n) for n in ns}
    out = {}
    for n, n2 in zip(ns, ns[1:]):
        mu_floor = float(np.max(np.abs(q[n]["mu"] - restrict(q[n2]["mu"], dim))))
        g_floor = abs(q[n]["gradnorm"] - q[n2]["gradnorm"])
        out[n] = {
            "gradnorm": q[n]["gradnorm"],
            "mu_inf": float(np.max(np.abs(q[n]["mu"]))),
            "grad_floor": g_floor,
            "mu_floor": mu_floor,
        }
    return out


@_timed
def criterion_6() -> Outcome:
    measured = {}
    ok = True
    for dim in (2, 4):
        g = TorusGrid(dim, 8)
        ident = TorusMap.identity(g)
        id_grad = moment.gradient(ident).norm()
        id_mu = moment.moment_sup(ident)
        ok &= id_grad == 0.0 and id_mu == 0.0
        ns = (16, 32, 64) if dim == 2 else (8, 16, 32)
        study = fixed_point_study(dim, ns)
        lo, hi = ns[0], ns[1]
        for n in (lo, hi):
            s = study[n]
            ok &= s["gradnorm"] <= 5 * s["grad_floor"] and s["mu_inf"] <= 5 * s["mu_floor"]
        g_ratio = study[lo]["grad_floor"] / study[hi]["grad_floor"]
        m_ratio = study[lo]["mu_floor"] / study[hi]["mu_floor"]
        ok &= g_ratio >= 4 and m_ratio >= 4
        measured.update({
            f"T{dim}_gradnorm_n{lo}": study[lo]["gradnorm"],
            f"T{dim}_mu_n{lo}": study[lo]["mu_inf"],
            f"T{dim}_grad_floor_ratio": g_ratio,
            f"T{dim}_mu_floor_ratio": m_ratio,
        })
    return Outcome(6, "identity and symplectomorphisms are critical", bool(ok), measured)


def reference_t2_config(**overrides) -> RunConfig:
    base = dict(dim=2, n=64, t_end=1.0, amplitude=0.05, seed=0, integrator="imex", reconstruct=False)
    base.update(overrides)
    return RunConfig(**base)


@_timed
def criterion_7(ratio_target: float = 1e-3) -> Outcome:
    start = time.perf_counter()
    result = run(reference_t2_config())
    wall = time.perf_counter() - start
    phis = [r["phi"] for r in result.rows]
    strict = all(b < a for a, b in zip(phis, phis[1:]))
    ratio = phis[-1] / phis[0]
    min_h = min(r["minH"] for r in result.rows)
    reached = abs(result.rows[-1]["t"] - 1.0) < 1e-12
    ok = strict and reached and ratio <= ratio_target and min_h >= 0.5 and wall <= 120 and not result.aborted
    return Outcome(7, "T^2 flow run", ok, {
        "strictly_decreasing": strict, "phi_ratio": ratio, "min_H": min_h,
        "steps": len(phis) - 1, "wall_s": wall,
    })


def reference_t4_config(**overrides) -> RunConfig:
    base = dict(dim=4, n=16, t_end=0.15, amplitude=0.02, seed=0, integrator="rk4", reconstruct=False)
    base.update(overrides)
    return RunConfig(**base)


@_timed
def criterion_8() -> Outcome:
    start = time.perf_counter()
    result = run(reference_t4_config())
    wall = time.perf_counter() - start
    phis = [r["phi"] for r in result.rows]
    mono = all(b < a for a, b in zip(phis, phis[1:]))
    steps = len(phis) - 1
    mu_ratio = result.rows[0]["mu_inf"] / result.rows[-1]["mu_inf"]
    ok = mono and steps >= 200 and mu_ratio >= 10 and wall <= 600 and not result.aborted
    return Outcome(8, "T^4 flow run", ok, {
        "monotone": mono, "steps": steps, "mu_reduction": mu_ratio, "wall_s": wall,
    })


@_timed
def criterion_9(n: int = 32, dt: float = 2e-5, steps: int = 20) -> Outcome:
    g = TorusGrid(2, n)
    f0 = random_perturbation(g, 0.05, 0)
    r1, r2, order, _, gauges = reconstruction_study(f0, dt, steps, StepOptions(dealias=False))
    dens = max(float(np.max(np.abs(maps.density(p) - 1.0))) for p in gauges)
    ok = r1 / r2 >= 2 and dens <= 1e-6
    return Outcome(9, "gauge reconstruction recovers the gradient flow", ok, {
        "residual_dt": r1, "residual_dt_half": r2, "ratio": r1 / r2, "max_density_dev": dens,
    })


def _compose_analytic(u: TrigSeries, gauge: TorusMap) -> TorusMap:
    """Displacement of (id + u) o gauge with u evaluated in closed form."""
    g = gauge.grid
    pts = (g.coords + gauge.u).reshape(g.dim, -1).T
    return TorusMap(g, gauge.u + u.value(pts).T.reshape((g.dim,) + g.shape))


def _mu_analytic(u: TrigSeries, gauge: TorusMap) -> np.ndarray:
    """mu(id + u) evaluated at the points gauge(x), from the closed-form Jacobian."""
    g = gauge.grid
    pts = (g.coords + gauge.u).reshape(g.dim, -1).T
    Df = np.eye(g.dim) + u.jacobian(pts)  # (P, dim, dim)
    if g.dim == 2:
        return (1.0 - np.linalg.det(Df)).reshape(g.shape)
    cs = forms.ConstantStructures(g)
    Om = forms.omega_matrix()
    out = []
    for w in cs.hyperkahler.values():
        B = forms.two_form_matrix(w)[(...,) + (0,) * 4]
        P = np.einsum("pia,ie,pec->pac", Df, B, Df)
        # (P ^ omega) / vol for constant omega: sum over complementary pairs
        top = _wedge_with_omega(P, Om) - _wedge_with_omega(B[None], Om)
        out.append(-top.reshape(g.shape))
    return np.array(out)


def _wedge_with_omega(P: np.ndarray, Om: np.ndarray) -> np.ndarray:
    """Coefficient of vol in (2-form P) ^ (2-form Om), batched over the first axis."""
    pairs = forms.multi_indices(4, 2)
    total = 0.0
    for i, I in enumerate(pairs):
        for J in pairs:
            sign = forms._perm_sign(I + J)
            if sign:
                total = total + sign * P[:, I[0], I[1]] * Om[J[0], J[1]]
    return total


def symp_invariance_study(dim: int, ns) -> dict:
    u = fixed_displacement(dim)
    h = fixed_hamiltonian(dim)
    out = {}
    for n in ns:
        g = TorusGrid(dim, n)
        f = TorusMap(g, u.sample(g))
        gauge = hamiltonian_flow_map(g, h, 1.0, generator_steps(n))
        fg = _compose_analytic(u, gauge)
        phi_gap = abs(moment.energy(fg) - moment.energy(f))
        mu_fg = moment.moment_t2(fg) if dim == 2 else np.array(list(moment.moment_hk(fg).values()))
        mu_gap = float(np.max(np.abs(mu_fg - _mu_analytic(u, gauge))))
        out[n] = {"phi_gap": phi_gap, "mu_gap": mu_gap}
    return out


@_timed
def criterion_10() -> Outcome:
    measured, ok = {}, True
    for dim, ns in ((2, (16, 32)), (4, (8, 16))):
        s = symp_invariance_study(dim, ns)
        a, b = ns
        pr = s[a]["phi_gap"] / s[b]["phi_gap"]
        mr = s[a]["mu_gap"] / s[b]["mu_gap"]
        ok &= pr >= 4 and mr >= 4
        measured.update({
            f"T{dim}_phi_gap_n{a}": s[a]["phi_gap"], f"T{dim}_phi_ratio": pr,
            f"T{dim}_mu_gap_n{a}": s[a]["mu_gap"], f"T{dim}_mu_ratio": mr,
        })
    return Outcome(10, "invariance and equivariance under symplectomorphisms", bool(ok), measured)


ALL = (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
)
