"""Exterior calculus on the flat unit torus.

A :class:`KForm` stores one scalar field per strictly increasing multi-index,
ordered lexicographically (``(0, 1), (0, 2), ...`` for 2-forms).  Indices are
zero-based in code; the coordinate ``x_{i+1}`` of the usual notation is axis
``i``.  Orientation is ``dx_1 ^ ... ^ dx_dim``.

The codifferential is the L^2 adjoint of ``d``: ``d* = (-1)^{dim(k+1)+1} * d *``
on k-forms, which on even-dimensional tori is ``-* d *``.  With this choice
``d* d h = -Laplacian(h)`` is positive semidefinite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from . import grid as _grid
from .grid import TorusGrid


class FormError(ValueError):
    """Degree, dimension or grid mismatch between forms."""


@lru_cache(maxsize=None)
def multi_indices(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    return tuple(combinations(range(dim), degree))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
            elif seq[i] == seq[j]:
                return 0
    return sign


@dataclass(frozen=True, eq=False)
class KForm:
    grid: TorusGrid
    degree: int
    components: np.ndarray  # shape (C(dim, degree),) + grid.shape

    # make ``array * form`` dispatch to __rmul__ instead of broadcasting
    __array_ufunc__ = None

    def __post_init__(self):
        if not 0 <= self.degree <= self.grid.dim:
            raise FormError(f"degree {self.degree} out of range")
        expected = (comb(self.grid.dim, self.degree),) + self.grid.shape
        if self.components.shape != expected:
            raise FormError(f"components have shape {self.components.shape}, expected {expected}")

    @property
    def indices(self):
        return multi_indices(self.grid.dim, self.degree)

    def component(self, index) -> np.ndarray:
        return self.components[self.indices.index(tuple(index))]

    def __add__(self, other: KForm) -> KForm:
        _check_same(self, other)
        return KForm(self.grid, self.degree, self.components + other.components)

    def __sub__(self, other: KForm) -> KForm:
        _check_same(self, other)
        return KForm(self.grid, self.degree, self.components - other.components)

    def __neg__(self) -> KForm:
        return KForm(self.grid, self.degree, -self.components)

    def __mul__(self, scalar) -> KForm:
        """Multiply by a number or a scalar field."""
        return KForm(self.grid, self.degree, self.components * np.asarray(scalar))

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.components))) if self.components.size else 0.0


def _check_same(a: KForm, b: KForm) -> None:
    if a.grid != b.grid or a.degree != b.degree:
        raise FormError("forms differ in grid or degree")


def zeros(grid: TorusGrid, degree: int) -> KForm:
    return KForm(grid, degree, np.zeros((comb(grid.dim, degree),) + grid.shape))


def from_scalar(grid: TorusGrid, h: np.ndarray) -> KForm:
    return KForm(grid, 0, np.asarray(h, dtype=float)[None].copy())


def constant_form(grid: TorusGrid, degree: int, coeffs: dict) -> KForm:
    """Constant-coefficient form from ``{multi_index: value}`` (any index order)."""
    out = np.zeros((comb(grid.dim, degree),) + grid.shape)
    idx = multi_indices(grid.dim, degree)
    for key, value in coeffs.items():
        sign = _perm_sign(key)
        if sign == 0:
            continue
        out[idx.index(tuple(sorted(key)))] += sign * value
    return KForm(grid, degree, out)


def basis(grid: TorusGrid, *index: int) -> KForm:
    """``dx_{i1} ^ ... ^ dx_{ik}`` with zero-based axes."""
    return constant_form(grid, len(index), {tuple(index): 1.0})


def two_form_matrix(b: KForm) -> np.ndarray:
    """Antisymmetric matrix field B[a, c] = b(e_a, e_c) of a 2-form."""
    if b.degree != 2:
        raise FormError("two_form_matrix needs a 2-form")
    dim = b.grid.dim
    mat = np.zeros((dim, dim) + b.grid.shape)
    for comp, (i, j) in zip(b.components, b.indices):
        mat[i, j] = comp
        mat[j, i] = -comp
    return mat


def two_form_from_matrix(grid: TorusGrid, mat: np.ndarray) -> KForm:
    comps = np.array([mat[i, j] for i, j in multi_indices(grid.dim, 2)])
    comps = np.broadcast_to(comps, (len(comps),) + grid.shape).copy()
    return KForm(grid, 2, comps)


# -- operators ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _d_table(dim: int, degree: int):
    """(target, source, axis, sign) entries of the exterior derivative."""
    src = multi_indices(dim, degree)
    entries = []
    for t, target in enumerate(multi_indices(dim, degree + 1)):
        for p, axis in enumerate(target):
            rest = target[:p] + target[p + 1 :]
            entries.append((t, src.index(rest), axis, (-1) ** p))
    return entries


def exterior_derivative(a: KForm) -> KForm:
    g = a.grid
    if a.degree >= g.dim:
        raise FormError("top degree: d of a top form is not defined here")
    grad = _grid.gradient(g, a.components)  # (ncomp, dim, ...)
    out = np.zeros((comb(g.dim, a.degree + 1),) + g.shape)
    for t, s, axis, sign in _d_table(g.dim, a.degree):
        out[t] += sign * grad[s, axis]
    return KForm(g, a.degree + 1, out)


@lru_cache(maxsize=None)
def _star_table(dim: int, degree: int):
    comp_idx = multi_indices(dim, dim - degree)
    table = []
    for index in multi_indices(dim, degree):
        rest = tuple(i for i in range(dim) if i not in index)
        table.append((comp_idx.index(rest), _perm_sign(index + rest)))
    return table


def hodge_star(a: KForm) -> KForm:
    g = a.grid
    out = np.zeros((comb(g.dim, g.dim - a.degree),) + g.shape)
    for s, (t, sign) in enumerate(_star_table(g.dim, a.degree)):
        out[t] = sign * a.components[s]
    return KForm(g, g.dim - a.degree, out)


def codifferential(a: KForm) -> KForm:
    dim, k = a.grid.dim, a.degree
    if k == 0:
        raise FormError("codifferential of a 0-form")
    sign = (-1) ** (dim * (k + 1) + 1)
    return sign * hodge_star(exterior_derivative(hodge_star(a)))


@lru_cache(maxsize=None)
def _wedge_table(dim: int, p: int, q: int):
    left, right = multi_indices(dim, p), multi_indices(dim, q)
    target = multi_indices(dim, p + q)
    entries = []
    for i, I in enumerate(left):
        for j, J in enumerate(right):
            sign = _perm_sign(I + J)
            if sign:
                entries.append((target.index(tuple(sorted(I + J))), i, j, sign))
    return entries


def wedge(a: KForm, b: KForm) -> KForm:
    if a.grid != b.grid:
        raise FormError("grid mismatch")
    g = a.grid
    if a.degree + b.degree > g.dim:
        raise FormError("degree overflow in wedge product")
    out = np.zeros((comb(g.dim, a.degree + b.degree),) + g.shape)
    for t, i, j, sign in _wedge_table(g.dim, a.degree, b.degree):
        out[t] += sign * a.components[i] * b.components[j]
    return KForm(g, a.degree + b.degree, out)


@lru_cache(maxsize=None)
def _interior_table(dim: int, degree: int):
    target = multi_indices(dim, degree - 1)
    entries = []
    for s, index in enumerate(multi_indices(dim, degree)):
        for p, axis in enumerate(index):
            rest = index[:p] + index[p + 1 :]
            entries.append((target.index(rest), s, axis, (-1) ** p))
    return entries


def interior_product(X: np.ndarray, a: KForm) -> KForm:
    """Contraction of a vector field ``X`` (shape ``(dim,) + grid.shape``) into ``a``."""
    g = a.grid
    if a.degree == 0:
        raise FormError("interior product of a 0-form")
    X = np.asarray(X)
    out = np.zeros((comb(g.dim, a.degree - 1),) + g.shape)
    for t, s, axis, sign in _interior_table(g.dim, a.degree):
        out[t] += sign * X[axis] * a.components[s]
    return KForm(g, a.degree - 1, out)


def pointwise_inner(a: KForm, b: KForm) -> np.ndarray:
    _check_same(a, b)
    return np.sum(a.components * b.components, axis=0)


def l2_inner(a: KForm, b: KForm) -> float:
    """G(a, b) = integral of g(a, b) over the torus."""
    return float(_grid.integrate(a.grid, pointwise_inner(a, b)))


def l2_inner_via_star(a: KForm, b: KForm) -> float:
    """Same pairing computed as the integral of a ^ *b."""
    _check_same(a, b)
    top = wedge(a, hodge_star(b))
    return float(_grid.integrate(a.grid, top.components[0]))


# -- musical isomorphisms ------------------------------------------------------


def structure_matrix(dim: int, structure: str) -> np.ndarray:
    """Constant matrix B with (flat X)_c = sum_a X^a B[a, c]."""
    if structure == "metric":
        return np.eye(dim)
    if structure == "sigma" and dim == 2:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    if structure == "omega" and dim == 4:
        return omega_matrix()
    raise FormError(f"unsupported structure {structure!r} in dimension {dim}")


def flat(X: np.ndarray, grid: TorusGrid, structure: str) -> KForm:
    """Lower a vector field: metric index lowering, or iota_X of sigma / omega."""
    B = structure_matrix(grid.dim, structure)
    return KForm(grid, 1, np.einsum("ac,a...->c...", B, np.asarray(X)))


def sharp(a: KForm, structure: str) -> np.ndarray:
    """Inverse of :func:`flat` for the same structure."""
    if a.degree != 1:
        raise FormError("sharp needs a 1-form")
    B = structure_matrix(a.grid.dim, structure)
    return np.einsum("ac,c...->a...", np.linalg.inv(B.T), a.components)


# -- constant structures -------------------------------------------------------

# quaternion coordinates (1, i, j, k) <-> axes (0, 1, 2, 3)
_QUAT_TABLE = {
    (0, 0): (1, 0), (0, 1): (1, 1), (0, 2): (1, 2), (0, 3): (1, 3),
    (1, 0): (1, 1), (1, 1): (-1, 0), (1, 2): (1, 3), (1, 3): (-1, 2),
    (2, 0): (1, 2), (2, 1): (-1, 3), (2, 2): (-1, 0), (2, 3): (1, 1),
    (3, 0): (1, 3), (3, 1): (1, 2), (3, 2): (-1, 1), (3, 3): (-1, 0),
}  # fmt: skip


def quaternion_matrix(unit: str, side: str) -> np.ndarray:
    """Matrix of q -> u q (side="left") or q -> q u (side="right"), u in {i, j, k}."""
    u = "1ijk".index(unit)
    mat = np.zeros((4, 4))
    for e in range(4):
        sign, out = _QUAT_TABLE[(u, e) if side == "left" else (e, u)]
        mat[out, e] = sign
    return mat


def complex_structure_t2() -> np.ndarray:
    """Multiplication by i on C = R^2."""
    return np.array([[0.0, -1.0], [1.0, 0.0]])


def omega_matrix() -> np.ndarray:
    """omega = dx1^dx3 + dx2^dx4 as an antisymmetric matrix."""
    m = np.zeros((4, 4))
    m[0, 2], m[2, 0] = 1.0, -1.0
    m[1, 3], m[3, 1] = 1.0, -1.0
    return m


@dataclass(frozen=True)
class ConstantStructures:
    grid: TorusGrid

    @property
    def sigma(self) -> KForm:
        return basis(self.grid, 0, 1)

    @property
    def omega(self) -> KForm:
        return constant_form(self.grid, 2, {(0, 2): 1.0, (1, 3): 1.0})

    @property
    def omega_I(self) -> KForm:
        return constant_form(self.grid, 2, {(0, 1): 1.0, (2, 3): -1.0})

    @property
    def omega_J(self) -> KForm:
        return constant_form(self.grid, 2, {(0, 3): 1.0, (1, 2): -1.0})

    @property
    def omega_K(self) -> KForm:
        return constant_form(self.grid, 2, {(0, 2): 1.0, (1, 3): 1.0})

    @property
    def hyperkahler(self) -> dict[str, KForm]:
        return {"I": self.omega_I, "J": self.omega_J, "K": self.omega_K}

    @property
    def vol(self) -> KForm:
        return basis(self.grid, *range(self.grid.dim))

    @property
    def metric(self) -> np.ndarray:
        return np.eye(self.grid.dim)


# -- self-dual / anti-self-dual splitting -------------------------------------


def asd_split(b: KForm) -> tuple[KForm, KForm]:
    """(self-dual, anti-self-dual) parts of a 2-form on T^4."""
    if b.grid.dim != 4 or b.degree != 2:
        raise FormError("asd_split needs a 2-form on T^4")
    star = hodge_star(b)
    return 0.5 * (b + star), 0.5 * (b - star)


def asd_part(b: KForm) -> KForm:
    return asd_split(b)[1]


def sd_part(b: KForm) -> KForm:
    return asd_split(b)[0]
