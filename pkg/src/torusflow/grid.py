"""Uniform periodic grids on the unit torus [0, 1)^n.

Scalar fields are plain ``numpy`` arrays whose trailing ``dim`` axes are the
grid axes; any leading axes are treated as a batch (components of a form,
entries of a Jacobian, ...).  All operators here are Fourier pseudospectral:
derivatives are exact for the trigonometric interpolant of the samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.ndimage

SUPPORTED_DIMS = (2, 4)

# points per chunk for direct trigonometric evaluation; bounds peak memory
_INTERP_CHUNK = 512


class GridError(ValueError):
    """Invalid grid parameters."""


@dataclass(frozen=True)
class TorusGrid:
    """Discretisation of the unit torus T^dim with ``n`` points per axis."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise GridError(f"unsupported dimension: {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise GridError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def n_per_axis(self) -> int:
        return self.n

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def point_count(self) -> int:
        return self.n**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinate fields, shape ``(dim, n, ..., n)``."""
        x = np.arange(self.n) / self.n
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def points(self) -> np.ndarray:
        """Grid points as an array of shape ``(point_count, dim)``."""
        return self.coords.reshape(self.dim, -1).T.copy()

    # -- spectral metadata -------------------------------------------------

    @cached_property
    def _integer_modes(self) -> list[np.ndarray]:
        """Integer wavenumbers per axis, broadcastable against rfftn output."""
        n = self.n
        out = []
        for a in range(self.dim):
            k = np.fft.rfftfreq(n, 1.0 / n) if a == self.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * self.dim
            shape[a] = k.size
            out.append(k.reshape(shape))
        return out

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers 2*pi*k with the Nyquist mode zeroed (odd derivatives)."""
        out = []
        for k in self._integer_modes:
            k = 2 * np.pi * k.copy()
            k[np.abs(k) >= np.pi * self.n] = 0.0
            out.append(k)
        return out

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean mask of modes kept by the 2/3 rule (|k_a| <= n/3 on every axis)."""
        cut = self.n // 3
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self._integer_modes:
            mask = mask & (np.abs(k) <= cut)
        return mask

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.n // 2 + 1,)

    def max_dealiased_k_squared(self) -> float:
        """Largest |2 pi k|^2 among modes that survive the 2/3 rule."""
        return float(self.k_squared[self.dealias_mask].max())


def make_grid(dim: int, n: int) -> TorusGrid:
    return TorusGrid(dim, n)


def forward(grid: TorusGrid, field: np.ndarray) -> np.ndarray:
    return scipy.fft.rfftn(field, axes=grid.axes)


def inverse(grid: TorusGrid, spectrum: np.ndarray) -> np.ndarray:
    return scipy.fft.irfftn(spectrum, s=grid.shape, axes=grid.axes)


def spectral_derivative(grid: TorusGrid, field: np.ndarray, axis: int) -> np.ndarray:
    """Derivative along ``axis`` of the trigonometric interpolant of ``field``."""
    if not 0 <= axis < grid.dim:
        raise GridError(f"axis {axis} out of range for dim {grid.dim}")
    return inverse(grid, 1j * grid.wavenumbers[axis] * forward(grid, field))


def gradient(grid: TorusGrid, field: np.ndarray) -> np.ndarray:
    """All first derivatives; the derivative axis is prepended after the batch axes."""
    spec = forward(grid, field)
    parts = [inverse(grid, 1j * k * spec) for k in grid.wavenumbers]
    batch = np.ndim(field) - grid.dim
    return np.stack(parts, axis=batch)


def divergence(grid: TorusGrid, vec: np.ndarray) -> np.ndarray:
    """Contract the last batch axis with the derivative: sum_a d_a vec[..., a, :]."""
    spec = forward(grid, vec)
    batch = np.ndim(vec) - grid.dim - 1
    total = sum(
        1j * k * np.take(spec, a, axis=batch) for a, k in enumerate(grid.wavenumbers)
    )
    return inverse(grid, total)


def laplacian(grid: TorusGrid, field: np.ndarray) -> np.ndarray:
    return inverse(grid, -grid.k_squared * forward(grid, field))


def dealias(grid: TorusGrid, field: np.ndarray) -> np.ndarray:
    """Zero every mode outside the 2/3 band."""
    return inverse(grid, forward(grid, field) * grid.dealias_mask)


def integrate(grid: TorusGrid, field: np.ndarray) -> np.ndarray | float:
    """Integral over the unit torus (volume 1), i.e. the grid mean."""
    out = np.mean(field, axis=grid.axes)
    return float(out) if np.ndim(out) == 0 else out


def interpolate(
    grid: TorusGrid, field: np.ndarray, points: np.ndarray, method: str = "spectral"
) -> np.ndarray:
    """Evaluate ``field`` at arbitrary ``points`` (shape ``(P, dim)``, taken mod 1).

    ``method="spectral"`` evaluates the trigonometric interpolant exactly;
    ``method="cubic"`` uses periodic cubic B-splines and is much cheaper in 4D.
    Leading batch axes of ``field`` are preserved: the result has shape
    ``batch + (P,)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != grid.dim:
        raise GridError("points must have shape (P, dim)")
    field = np.asarray(field, dtype=float)
    batch = field.shape[: field.ndim - grid.dim]
    flat = field.reshape((-1,) + grid.shape)
    if method == "cubic":
        out = _interp_cubic(grid, flat, points)
    elif method == "spectral":
        out = _interp_spectral(grid, flat, points)
    else:
        raise GridError(f"unknown interpolation method {method!r}")
    return out.reshape(batch + (points.shape[0],))


def _axis_basis(n: int, x: np.ndarray) -> np.ndarray:
    """Per-axis trigonometric basis at coordinates x, FFT mode order, shape (P, n)."""
    k = np.fft.fftfreq(n, 1.0 / n)
    basis = np.exp(2j * np.pi * np.outer(x, k))
    # real, symmetric treatment of the unmatched Nyquist mode
    basis[:, n // 2] = np.cos(np.pi * n * x)
    return basis


def _interp_spectral(grid: TorusGrid, flat: np.ndarray, points: np.ndarray) -> np.ndarray:
    n, d = grid.n, grid.dim
    nf = flat.shape[0]
    coef = np.fft.fftn(flat, axes=tuple(range(1, d + 1))) / grid.point_count
    # axis 0 of the grid leads; fields are folded into the trailing block
    coef = np.moveaxis(coef, 0, -1).reshape(n, -1)
    out = np.empty((nf, points.shape[0]))
    for start in range(0, points.shape[0], _INTERP_CHUNK):
        pts = points[start : start + _INTERP_CHUNK] % 1.0
        acc = _axis_basis(n, pts[:, 0]) @ coef
        for a in range(1, d):
            acc = acc.reshape(pts.shape[0], n, -1)
            acc = np.einsum("pjr,pj->pr", acc, _axis_basis(n, pts[:, a]))
        out[:, start : start + pts.shape[0]] = acc.real.T
    return out


def _interp_cubic(grid: TorusGrid, flat: np.ndarray, points: np.ndarray) -> np.ndarray:
    idx = (points % 1.0).T * grid.n
    return np.array(
        [
            scipy.ndimage.map_coordinates(f, idx, order=3, mode="grid-wrap")
            for f in flat
        ]
    )


# -- snapshots ---------------------------------------------------------------


def save_snapshot(
    path: str | Path, grid: TorusGrid, components: np.ndarray, names: list[str]
) -> None:
    """Write components as little-endian float64 (row-major) plus a JSON sidecar."""
    path = Path(path)
    data = np.asarray(components, dtype="<f8").reshape((len(names),) + grid.shape)
    path.write_bytes(np.ascontiguousarray(data).tobytes(order="C"))
    meta = {"dim": grid.dim, "n_per_axis": grid.n, "components": list(names)}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2))


def load_snapshot(path: str | Path) -> tuple[TorusGrid, np.ndarray, list[str]]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    grid = TorusGrid(meta["dim"], meta["n_per_axis"])
    names = meta["components"]
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return grid, data.reshape((len(names),) + grid.shape).copy(), names
