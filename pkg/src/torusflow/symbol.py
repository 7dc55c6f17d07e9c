"""Principal symbols of the linearised modified flows on 1-forms.

Symbols are real and use the substitution d_a -> i xi_a together with the
adjoint sign of d*, so d*d, dd* and d*d^- have positive semidefinite symbols.
They are assembled from exterior-algebra matrices: ``E(xi) = xi ^ .`` from
1-forms to 2-forms, ``d*d -> E^T E``, ``dd* -> xi xi^T`` and
``d*d^- -> E^T P^- E`` with ``P^-`` the anti-self-dual projector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from . import forms
from .forms import KForm
from .grid import TorusGrid


class SymbolError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SymbolMatrix:
    dim: int
    entries: np.ndarray
    xi: np.ndarray
    coeff: float

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues()[0])


def wedge_matrix(xi: np.ndarray) -> np.ndarray:
    """Matrix of alpha -> xi ^ alpha from 1-forms to 2-forms (lexicographic 2-form basis)."""
    xi = np.asarray(xi, dtype=float)
    dim = xi.size
    pairs = forms.multi_indices(dim, 2)
    E = np.zeros((len(pairs), dim))
    for r, (i, j) in enumerate(pairs):
        E[r, j] += xi[i]
        E[r, i] -= xi[j]
    return E


@lru_cache(maxsize=None)
def _star2_t4() -> np.ndarray:
    pairs = forms.multi_indices(4, 2)
    S = np.zeros((6, 6))
    for s, (t, sign) in enumerate(forms._star_table(4, 2)):
        S[t, s] = sign
    assert len(pairs) == 6
    return S


def asd_projector() -> np.ndarray:
    return 0.5 * (np.eye(6) - _star2_t4())


def _check(coeff: float, xi, dim: int) -> np.ndarray:
    if not coeff > 0:
        raise SymbolError(f"coefficient must be positive, got {coeff}")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (dim,):
        raise SymbolError(f"covector must have {dim} entries")
    return xi


def symbol_t2(coeff: float, xi) -> SymbolMatrix:
    """Symbol of coeff d*d + dd* on 1-forms of T^2; det = coeff |xi|^4."""
    xi = _check(coeff, xi, 2)
    E = wedge_matrix(xi)
    return SymbolMatrix(2, coeff * E.T @ E + np.outer(xi, xi), xi, coeff)


def symbol_t4(coeff: float, xi) -> SymbolMatrix:
    """Symbol of coeff d*d^- + dd* on 1-forms of T^4; det = (coeff/2)^3 |xi|^8."""
    xi = _check(coeff, xi, 4)
    E = wedge_matrix(xi)
    return SymbolMatrix(4, coeff * E.T @ asd_projector() @ E + np.outer(xi, xi), xi, coeff)


def symbol(coeff: float, xi) -> SymbolMatrix:
    return symbol_t2(coeff, xi) if np.size(xi) == 2 else symbol_t4(coeff, xi)


def symbol_det_formula(coeff: float, xi) -> float:
    xi = np.asarray(xi, dtype=float)
    s = float(xi @ xi)
    return coeff * s**2 if xi.size == 2 else (coeff / 2) ** 3 * s**4


# -- grid operators and plane-wave probing ---------------------------------------------


def elliptic_operator(coeff: float) -> Callable[[KForm], KForm]:
    """coeff d*d + dd* (T^2) or coeff d*d^- + dd* (T^4) at a frozen coefficient."""

    def op(a: KForm) -> KForm:
        da = forms.exterior_derivative(a)
        if a.grid.dim == 4:
            da = forms.asd_part(da)
        return coeff * forms.codifferential(da) + forms.exterior_derivative(forms.codifferential(a))

    return op


def unmodified_operator(coeff: float) -> Callable[[KForm], KForm]:
    """The leading part without the gauge term: coeff d*d (T^2) or coeff d*d^- (T^4)."""

    def op(a: KForm) -> KForm:
        da = forms.exterior_derivative(a)
        if a.grid.dim == 4:
            da = forms.asd_part(da)
        return coeff * forms.codifferential(da)

    return op


def symbol_probe(grid: TorusGrid, operator: Callable[[KForm], KForm], k) -> SymbolMatrix:
    """Read off the symbol at xi = 2 pi k by applying ``operator`` to cos(2 pi k.x) dx_a."""
    k = np.asarray(k)
    if k.shape != (grid.dim,) or np.any(np.abs(k) >= grid.n / 2):
        raise SymbolError("wavevector must lie strictly inside the Nyquist range")
    wave = np.cos(2 * np.pi * np.tensordot(k, grid.coords, axes=1))
    M = np.zeros((grid.dim, grid.dim))
    for a in range(grid.dim):
        comps = np.zeros((grid.dim,) + grid.shape)
        comps[a] = wave
        out = operator(KForm(grid, 1, comps)).components
        for b in range(grid.dim):
            M[b, a] = 2.0 * np.mean(out[b] * wave)
    return SymbolMatrix(grid.dim, M, 2 * np.pi * k.astype(float), float("nan"))
