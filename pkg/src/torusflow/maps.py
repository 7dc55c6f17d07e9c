"""Diffeomorphisms of the torus homotopic to the identity.

A map is stored through its periodic displacement ``u``: the lift is
``F(x) = x + u(x)`` and ``f = F mod 1``.  Jacobians are arrays ``Df`` of shape
``(dim, dim) + grid.shape`` with ``Df[c, a] = d_a F^c``, so that ``Df @ X`` is
the pushforward of a vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forms
from . import grid as _grid
from .forms import KForm
from .grid import TorusGrid


class MapError(ValueError):
    """A map left the orientation-preserving (det Df > 0) regime."""


class InversionError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (worst residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class TorusMap:
    grid: TorusGrid
    u: np.ndarray  # displacement, shape (dim,) + grid.shape

    def __post_init__(self):
        if self.u.shape != (self.grid.dim,) + self.grid.shape:
            raise MapError(f"displacement has shape {self.u.shape}")

    @classmethod
    def identity(cls, grid: TorusGrid) -> TorusMap:
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def from_function(cls, grid: TorusGrid, func) -> TorusMap:
        """Build from a callable returning the displacement at coordinate arrays."""
        return cls(grid, np.asarray(func(*grid.coords), dtype=float))

    def lift(self) -> np.ndarray:
        return self.grid.coords + self.u

    def is_identity(self) -> bool:
        return not np.any(self.u)


@dataclass(frozen=True, eq=False)
class TangentField:
    """A section of f*TT^n, stored as its value in the global trivialisation."""

    base: TorusMap
    value: np.ndarray

    def __post_init__(self):
        if self.value.shape != self.base.u.shape:
            raise MapError("tangent value does not match its base grid")

    def inner(self, other: TangentField) -> float:
        """G(u, v) = integral of g(u, v) over the source torus."""
        return float(_grid.integrate(self.base.grid, np.sum(self.value * other.value, axis=0)))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))


def jacobian(f: TorusMap) -> np.ndarray:
    dim = f.grid.dim
    eye = np.eye(dim).reshape((dim, dim) + (1,) * dim)
    return eye + _grid.gradient(f.grid, f.u)


def _matrix_last(mat: np.ndarray) -> np.ndarray:
    return np.moveaxis(mat, (0, 1), (-2, -1))


def _matrix_first(mat: np.ndarray) -> np.ndarray:
    return np.moveaxis(mat, (-2, -1), (0, 1))


def det_field(mat: np.ndarray) -> np.ndarray:
    return np.linalg.det(_matrix_last(mat))


def inv_field(mat: np.ndarray) -> np.ndarray:
    return _matrix_first(np.linalg.inv(_matrix_last(mat)))


def density(f: TorusMap, strict: bool = False) -> np.ndarray:
    """H_f = det Df, the ratio f*vol / vol."""
    H = det_field(jacobian(f))
    if strict:
        check_positive(f.grid, H)
    return H


def check_positive(grid: TorusGrid, H: np.ndarray) -> None:
    bad = np.argwhere(H <= 0)
    if bad.size:
        where = [tuple(int(i) for i in b) for b in bad[:5]]
        raise MapError(
            f"det Df <= 0 at {len(bad)} grid points (first: {where}, min {H.min():.3e})"
        )


def pushforward_vector(f: TorusMap, X: np.ndarray) -> TangentField:
    """(f_* X)(x) = Df(x) X(x)."""
    return TangentField(f, np.einsum("ca...,a...->c...", jacobian(f), X))


def compose_values(f: TorusMap, field: np.ndarray, method: str = "spectral") -> np.ndarray:
    """``field o f`` for a (batched) field on the grid: samples of field at F(x)."""
    g = f.grid
    if f.is_identity():
        return np.array(field, dtype=float, copy=True)
    pts = f.lift().reshape(g.dim, -1).T
    batch = np.shape(field)[: np.ndim(field) - g.dim]
    vals = _grid.interpolate(g, field, pts, method=method)
    return vals.reshape(batch + g.shape)


def pullback_function(f: TorusMap, h: np.ndarray, method: str = "spectral") -> np.ndarray:
    return compose_values(f, h, method)


def pullback_1form(f: TorusMap, a: KForm, method: str = "spectral") -> KForm:
    """(f* a)_c(x) = a_e(F(x)) d_c F^e."""
    if a.degree != 1:
        raise forms.FormError("pullback_1form needs a 1-form")
    at_image = compose_values(f, a.components, method)
    return KForm(f.grid, 1, np.einsum("ec...,e...->c...", jacobian(f), at_image))


def _is_constant(a: KForm) -> bool:
    flat = a.components.reshape(a.components.shape[0], -1)
    return bool(np.all(np.ptp(flat, axis=1) == 0.0))


def pullback_2form_matrix(Df: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Df^T B Df, with B either a constant matrix or a matrix field."""
    BDf = np.einsum("ie,ec...->ic...", B, Df) if B.ndim == 2 else np.einsum("ie...,ec...->ic...", B, Df)
    return np.einsum("ia...,ic...->ac...", Df, BDf)


def pullback_2form_constant(f: TorusMap, b: KForm) -> KForm:
    """Pullback of a constant-coefficient 2-form; no interpolation needed."""
    if not _is_constant(b):
        return pullback_2form(f, b)
    B = forms.two_form_matrix(b)[(...,) + (0,) * f.grid.dim]
    return forms.two_form_from_matrix(f.grid, pullback_2form_matrix(jacobian(f), B))


def pullback_2form(f: TorusMap, b: KForm, method: str = "spectral") -> KForm:
    B = compose_values(f, forms.two_form_matrix(b), method)
    return forms.two_form_from_matrix(f.grid, pullback_2form_matrix(jacobian(f), B))


def compose(f: TorusMap, g: TorusMap, method: str = "spectral", check: bool = True) -> TorusMap:
    """f o g, resampled on the grid: u(x) = u_g(x) + u_f(x + u_g(x))."""
    if f.grid != g.grid:
        raise MapError("cannot compose maps on different grids")
    if g.is_identity():
        out = TorusMap(f.grid, f.u.copy())
    elif f.is_identity():
        out = TorusMap(g.grid, g.u.copy())
    else:
        out = TorusMap(f.grid, g.u + compose_values(g, f.u, method))
    if check:
        check_positive(out.grid, density(out))
    return out


def inverse(
    f: TorusMap,
    tol: float = 1e-10,
    max_iter: int = 50,
    guess: TorusMap | None = None,
    method: str = "spectral",
) -> TorusMap:
    """Invert by damped Newton iteration per grid point.

    Solves ``x + u(x) = y`` for every grid point ``y``, interpolating ``u`` and
    ``Du`` at the current iterate.  The initial guess is ``x = y - u(y)`` unless
    a previous inverse is supplied.
    """
    g = f.grid
    d = g.dim
    if f.is_identity():
        return TorusMap.identity(g)
    check_positive(g, density(f))
    y = g.points()
    fields = np.concatenate([f.u, _grid.gradient(g, f.u).reshape((d * d,) + g.shape)])
    start = guess.u if guess is not None else -f.u
    x = y + start.reshape(d, -1).T

    def evaluate(pts):
        vals = _grid.interpolate(g, fields, pts, method=method)
        return pts + vals[:d].T - y, vals[d:]

    r, du = evaluate(x)
    err = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if err <= tol:
            break
        J = np.eye(d) + np.moveaxis(du.reshape(d, d, -1), -1, 0)
        step = np.linalg.solve(J, r[..., None])[..., 0]
        lam = 1.0
        while True:
            x_new = x - lam * step
            r_new, du_new = evaluate(x_new)
            err_new = float(np.max(np.abs(r_new)))
            if err_new < err or lam < 1e-3:
                break
            lam *= 0.5
        x, r, du, err = x_new, r_new, du_new, err_new
    if err > tol:
        raise InversionError("Newton inversion did not converge", err)
    return TorusMap(g, (x - y).T.reshape((d,) + g.shape))


def max_displacement_difference(f: TorusMap, g: TorusMap) -> float:
    return float(np.max(np.abs(f.u - g.u)))
