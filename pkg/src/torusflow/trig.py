"""Closed-form trigonometric series on the torus.

``TrigSeries`` is a finite sum ``sum_j c_j cos(2 pi k_j . x + theta_j)`` with
vector coefficients ``c_j``.  It can be evaluated, together with its Jacobian,
at arbitrary points without touching a grid.  That makes it the natural oracle
for Hamiltonians whose flows must be generated independently of the spectral
machinery under test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forms
from .grid import TorusGrid


@dataclass(frozen=True, eq=False)
class TrigSeries:
    coeffs: np.ndarray  # (J, m)
    waves: np.ndarray  # (J, dim), integer wavevectors
    phases: np.ndarray  # (J,)

    @property
    def dim(self) -> int:
        return self.waves.shape[1]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    def _arg(self, points: np.ndarray) -> np.ndarray:
        return 2 * np.pi * np.asarray(points) @ self.waves.T + self.phases

    def value(self, points: np.ndarray) -> np.ndarray:
        """Shape (P, m)."""
        return np.cos(self._arg(points)) @ self.coeffs

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """Shape (P, m, dim): entry [p, i, a] = d_a field_i at point p."""
        s = -2 * np.pi * np.sin(self._arg(points))
        return np.einsum("pj,ji,ja->pia", s, self.coeffs, self.waves)

    def sample(self, grid: TorusGrid) -> np.ndarray:
        """Values on the grid, shape (m,) + grid.shape."""
        return self.value(grid.points()).T.reshape((self.width,) + grid.shape)

    def scaled(self, factor: float) -> TrigSeries:
        return TrigSeries(self.coeffs * factor, self.waves, self.phases)


def random_series(
    rng: np.random.Generator, dim: int, width: int, terms: int = 6, kmax: int = 2
) -> TrigSeries:
    """Random series with nonzero integer wavevectors, |k_a| <= kmax, decaying weights."""
    waves = []
    while len(waves) < terms:
        k = rng.integers(-kmax, kmax + 1, size=dim)
        if np.any(k):
            waves.append(k)
    waves = np.array(waves, dtype=float)
    decay = 1.0 / (1.0 + np.sum(waves**2, axis=1))
    coeffs = rng.standard_normal((terms, width)) * decay[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=terms)
    return TrigSeries(coeffs, waves, phases)


def hamiltonian_field(h: TrigSeries, structure: str):
    """Callable X_h with iota_{X_h} structure = -dh, evaluated in closed form."""
    if h.width != 1:
        raise ValueError("a Hamiltonian is a scalar series")
    B = forms.structure_matrix(h.dim, structure)
    raise_ = np.linalg.inv(B.T)

    def field(points: np.ndarray) -> np.ndarray:
        dh = h.jacobian(points)[:, 0, :]
        return -dh @ raise_.T

    return field
