"""Invariant and verification suites shared by the CLI and the test-suite.

Every check reports a measured error next to its threshold.  The exterior
calculus suite takes its operators as arguments so that a deliberately broken
operator can be shown to fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import forms, maps, symbol
from . import grid as _grid
from .forms import KForm
from .grid import TorusGrid


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.measured) and self.measured <= self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{status}  {self.name}: {self.measured:.3e} <= {self.threshold:.1e}{extra}"


@dataclass(frozen=True)
class Operators:
    d: Callable[[KForm], KForm] = forms.exterior_derivative
    codifferential: Callable[[KForm], KForm] = forms.codifferential
    star: Callable[[KForm], KForm] = forms.hodge_star


def smooth_field(grid: TorusGrid, rng: np.random.Generator, count: int, kmax: int = 3) -> np.ndarray:
    """``count`` random real trigonometric polynomials with |k_a| <= kmax."""
    k = np.array(np.meshgrid(*([np.fft.fftfreq(grid.n, 1.0 / grid.n)] * grid.dim), indexing="ij"))
    mask = np.all(np.abs(k) <= kmax, axis=0)
    shape = (count,) + grid.shape
    coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * mask
    return np.real(np.fft.ifftn(coef, axes=grid.axes)) * grid.point_count / np.sqrt(mask.sum())


def random_form(grid: TorusGrid, degree: int, rng: np.random.Generator) -> KForm:
    from math import comb

    return KForm(grid, degree, smooth_field(grid, rng, comb(grid.dim, degree)))


def _rel(num: float, den: float) -> float:
    return float(num / den) if den > 0 else float(num)


def exterior_calculus_suite(
    grid: TorusGrid, rng: np.random.Generator, ops: Operators = Operators()
) -> list[CheckResult]:
    out = []
    dim = grid.dim
    scale = lambda a: float(np.max(np.abs(_grid.laplacian(grid, a.components))))  # noqa: E731
    worst = 0.0
    for k in range(dim - 1):
        a = random_form(grid, k, rng)
        worst = max(worst, _rel(ops.d(ops.d(a)).max_abs(), scale(a)))
    out.append(CheckResult(f"T^{dim} d o d = 0 (n={grid.n})", worst, 1e-10))
    worst = 0.0
    for k in range(2, dim + 1):
        b = random_form(grid, k, rng)
        worst = max(worst, _rel(ops.codifferential(ops.codifferential(b)).max_abs(), scale(b)))
    out.append(CheckResult(f"T^{dim} d* o d* = 0 (n={grid.n})", worst, 1e-10))
    worst = 0.0
    for k in range(dim + 1):
        a = random_form(grid, k, rng)
        sign = (-1) ** (k * (dim - k))
        worst = max(worst, _rel((ops.star(ops.star(a)) - sign * a).max_abs(), a.max_abs()))
    out.append(CheckResult(f"T^{dim} ** = (-1)^(k(n-k))", worst, 1e-10))
    worst = 0.0
    for k in range(dim):
        a, b = random_form(grid, k, rng), random_form(grid, k + 1, rng)
        da = ops.d(a)
        lhs, rhs = forms.l2_inner(da, b), forms.l2_inner(a, ops.codifferential(b))
        den = np.sqrt(forms.l2_inner(da, da) * forms.l2_inner(b, b))
        worst = max(worst, _rel(abs(lhs - rhs), den))
    out.append(CheckResult(f"T^{dim} <d a, b> = <a, d* b>", worst, 1e-10))
    return out


def hyperkahler_suite(grid: TorusGrid) -> list[CheckResult]:
    """Anti-self-duality and orthogonality of the constant triple, the star table, omega^omega."""
    cs = forms.ConstantStructures(grid)
    trip = cs.hyperkahler
    asd = max((forms.hodge_star(w) + w).max_abs() for w in trip.values())
    names = list(trip)
    orth = max(
        abs(forms.l2_inner(trip[a], trip[b])) for i, a in enumerate(names) for b in names[i + 1 :]
    )
    table = [((0, 1), (2, 3), 1.0), ((0, 2), (1, 3), -1.0), ((0, 3), (1, 2), 1.0)]
    star_err = max(
        (forms.hodge_star(forms.basis(grid, *src)) - sign * forms.basis(grid, *dst)).max_abs()
        for src, dst, sign in table
    )
    ww = (forms.wedge(cs.omega, cs.omega) + 2.0 * cs.vol).max_abs()
    return [
        CheckResult("*omega_bullet = -omega_bullet", asd, 0.0),
        CheckResult("omega_I, omega_J, omega_K pairwise orthogonal", orth, 0.0),
        CheckResult("star table *d12=d34, *d13=-d24, *d14=d23", star_err, 0.0),
        CheckResult("omega ^ omega = -2 vol", ww, 0.0),
    ]


def lift_splitting_suite() -> list[CheckResult]:
    """d* iota_x B = 0 for the identity lift x, so W only sees the periodic displacement.

    iota_x B has linear coefficients (iota_x B)_c = sum_a x_a B[a, c]; its
    codifferential is minus the divergence, i.e. -trace(B), exactly.
    """
    out = []
    for dim, name in ((2, "sigma"), (4, "omega")):
        B = forms.structure_matrix(dim, name)
        out.append(CheckResult(f"d* iota_id {name} = 0 (linear lift is coclosed)", abs(float(np.trace(B))), 0.0))
    return out


def asd_balance(alpha: KForm) -> float:
    """| |(d alpha)^+|^2 - |(d alpha)^-|^2 | / |d alpha|^2."""
    da = forms.exterior_derivative(alpha)
    plus, minus = forms.asd_split(da)
    num = abs(forms.l2_inner(plus, plus) - forms.l2_inner(minus, minus))
    return _rel(num, forms.l2_inner(da, da))


def asd_suite(grid: TorusGrid, rng: np.random.Generator, count: int = 100) -> list[CheckResult]:
    worst = max(asd_balance(random_form(grid, 1, rng)) for _ in range(count))
    return [CheckResult(f"|(d a)^+| = |(d a)^-| over {count} random 1-forms", worst, 1e-8)]


def symbol_suite(rng: np.random.Generator, count: int = 10_000) -> list[CheckResult]:
    out = []
    for dim, fn in ((2, symbol.symbol_t2), (4, symbol.symbol_t4)):
        coeffs = rng.uniform(0.05, 10.0, size=count)
        xis = rng.standard_normal((count, dim)) * rng.uniform(0.1, 10.0, size=(count, 1))
        worst, min_eig = 0.0, np.inf
        for c, xi in zip(coeffs, xis):
            m = fn(c, xi)
            worst = max(worst, abs(m.det / symbol.symbol_det_formula(c, xi) - 1.0))
            min_eig = min(min_eig, m.min_eigenvalue / float(xi @ xi))
        out.append(CheckResult(f"T^{dim} symbol determinant ({count} samples)", worst, 1e-12))
        # positive definiteness: normalised smallest eigenvalue must be > 0
        out.append(
            CheckResult(
                f"T^{dim} symbol positive definite", float(min_eig <= 0), 0.0,
                f"min eig/|xi|^2 = {min_eig:.3e}",
            )
        )
    return out


def maps_suite(grid: TorusGrid, rng: np.random.Generator) -> list[CheckResult]:
    from .flow import random_perturbation

    f = random_perturbation(grid, 0.05, int(rng.integers(1 << 30)))
    finv = maps.inverse(f, 1e-10)
    ident = maps.compose(f, finv)
    return [
        CheckResult(f"T^{grid.dim} compose(f, f^-1) = id", float(np.max(np.abs(ident.u))), 1e-8),
        CheckResult(
            f"T^{grid.dim} mean density = 1", abs(float(np.mean(maps.density(f))) - 1.0), 1e-10
        ),
    ]


def flow_suite(grid: TorusGrid, steps: int = 20) -> list[CheckResult]:
    from .flow import StepOptions, auto_dt, initial_state, random_perturbation, step

    f = random_perturbation(grid, 0.02 if grid.dim == 4 else 0.05, 7)
    opts = StepOptions()
    state = initial_state(f, auto_dt(grid, float(maps.density(f).max())), opts)
    increases, phi0 = 0, state.phi
    for _ in range(steps):
        new = step(state, None, opts)
        increases += new.phi >= state.phi
        state = new
    return [
        CheckResult(f"T^{grid.dim} phi strictly decreasing over {steps} steps", float(increases), 0.0),
        CheckResult(f"T^{grid.dim} min H above 0.5", float(state.current.min_h < 0.5), 0.0,
                    f"phi {phi0:.3e} -> {state.phi:.3e}"),
    ]


def gradient_suite(grid: TorusGrid, rng: np.random.Generator, directions: int = 3) -> list[CheckResult]:
    from .acceptance import gradient_fd_error
    from .flow import random_perturbation

    f = random_perturbation(grid, 0.05, int(rng.integers(1 << 30)))
    worst = max(gradient_fd_error(f, rng) for _ in range(directions))
    return [CheckResult(f"T^{grid.dim} gradient vs finite differences", worst, 1e-4)]


@dataclass
class Report:
    results: list[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def text(self) -> str:
        lines = [r.line() for r in self.results]
        lines.append(f"{sum(r.passed for r in self.results)}/{len(self.results)} passed in {self.elapsed:.1f}s")
        return "\n".join(lines)


def run_checks(level: str = "fast", seed: int = 0, ops: Operators = Operators()) -> Report:
    if level not in ("fast", "full"):
        raise ValueError(f"unknown level {level!r}")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    n2, n4 = (16, 8) if level == "fast" else (32, 16)
    g2, g4 = TorusGrid(2, n2), TorusGrid(4, n4)
    results: list[CheckResult] = []
    results += exterior_calculus_suite(g2, rng, ops)
    results += exterior_calculus_suite(g4, rng, ops)
    results += hyperkahler_suite(g4)
    results += lift_splitting_suite()
    results += asd_suite(g4, rng, 20 if level == "fast" else 100)
    results += symbol_suite(rng, 1000 if level == "fast" else 10_000)
    results += maps_suite(g2, rng)
    results += gradient_suite(g2, rng)
    results += flow_suite(g2)
    if level == "full":
        results += maps_suite(TorusGrid(4, 8), rng)
        results += gradient_suite(TorusGrid(4, 8), rng)
        results += flow_suite(g4, steps=5)
    return Report(results, time.perf_counter() - start)


def flipped_codifferential(a: KForm) -> KForm:
    """Test fixture: d* with the wrong overall sign."""
    return -forms.codifferential(a)


__all__ = [
    "CheckResult",
    "Operators",
    "Report",
    "run_checks",
    "exterior_calculus_suite",
    "hyperkahler_suite",
    "lift_splitting_suite",
    "asd_suite",
    "symbol_suite",
    "flipped_codifferential",
]
