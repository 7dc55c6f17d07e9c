"""Moment maps, the energy functional and its gradient on T^2 and T^4.

Tangent vectors at ``f`` are stored as their values ``Df @ Y`` and paired with
``G(u, v) = integral of u . v`` over the source torus.  Every gradient here is
the gradient for that pairing, so ``D phi(f)[v] = G(grad phi(f), v)``.

On T^4 the moment map is measured relative to its value at the identity:
``dev(f) = ((f^-1)* omega)^- - omega^-`` and ``mu_bullet(f) - mu_bullet(id)``.
Both vanish exactly on symplectomorphisms.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import forms
from . import grid as _grid
from .forms import KForm
from .maps import (
    TangentField,
    TorusMap,
    compose_values,
    det_field,
    inv_field,
    inverse,
    jacobian,
    pullback_2form_constant,
    pullback_2form_matrix,
)


def _require_dim(f: TorusMap, dim: int) -> None:
    if f.grid.dim != dim:
        raise ValueError(f"expected a map on T^{dim}, got T^{f.grid.dim}")


# -- T^2 ----------------------------------------------------------------------


def moment_t2(f: TorusMap) -> np.ndarray:
    """mu(f) = 1 - H_f; zero exactly on area-preserving maps.

    Evaluated as -(tr Du + det Du), which avoids the cancellation in 1 - det Df.
    """
    _require_dim(f, 2)
    du = _grid.gradient(f.grid, f.u)
    return -(du[0, 0] + du[1, 1] + du[0, 0] * du[1, 1] - du[0, 1] * du[1, 0])


def energy_t2(f: TorusMap) -> float:
    mu = moment_t2(f)
    return 0.5 * float(_grid.integrate(f.grid, mu**2))


def grad_t2(f: TorusMap) -> TangentField:
    """Gradient of the T^2 energy.

    Pipeline: f* sigma = H sigma, d*(H sigma), multiply by H, sharp_sigma, then
    map the resulting vector Z through Df^{-T}.  ``Z`` represents the
    differential as ``D phi(Df Y) = integral of Y . Z``; ``Df^{-T}`` converts it
    into a tangent vector for G.
    """
    _require_dim(f, 2)
    g = f.grid
    Df = jacobian(f)
    H = det_field(Df)
    sigma_H = forms.KForm(g, 2, H[None].copy())
    co = forms.codifferential(sigma_H)
    Z = forms.sharp(H * co, "sigma")
    value = np.einsum("ac...,a...->c...", inv_field(Df), Z)
    return TangentField(f, value)


# -- T^4: pointwise algebra on matrices -------------------------------------------


def _star_matrix(S: np.ndarray) -> np.ndarray:
    """Hodge star of a 2-form given as an antisymmetric 4x4 matrix field."""
    out = np.empty_like(S)
    for (i, j), (k, l), sign in (
        ((0, 1), (2, 3), 1), ((0, 2), (1, 3), -1), ((0, 3), (1, 2), 1),
        ((1, 2), (0, 3), 1), ((1, 3), (0, 2), -1), ((2, 3), (0, 1), 1),
    ):  # fmt: skip
        out[k, l] = sign * S[i, j]
        out[l, k] = -sign * S[i, j]
    for i in range(4):
        out[i, i] = 0.0
    return out


def asd_matrix(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S - _star_matrix(S))


@lru_cache(maxsize=None)
def _asd_operator() -> np.ndarray:
    """16x16 matrix of :func:`asd_matrix` acting on flattened 4x4 matrices."""
    return asd_matrix(np.eye(16).reshape(16, 4, 4).transpose(1, 2, 0)).reshape(16, 16)


def _omega_field(shape) -> np.ndarray:
    return forms.omega_matrix().reshape((4, 4) + (1,) * len(shape))


def _points(A: np.ndarray) -> np.ndarray:
    """(4, 4, *grid) -> contiguous (P, 4, 4)."""
    return np.ascontiguousarray(np.moveaxis(A.reshape(A.shape[:2] + (-1,)), -1, 0))


def _fields(A: np.ndarray, shape) -> np.ndarray:
    return np.moveaxis(A, 0, -1).reshape(A.shape[1:] + tuple(shape))


def _inv_det4(A: np.ndarray):
    """Inverse and determinant of a 4x4 matrix field via 2x2 minors (elementwise, no LAPACK)."""
    a = A
    s0 = a[0, 0] * a[1, 1] - a[1, 0] * a[0, 1]
    s1 = a[0, 0] * a[1, 2] - a[1, 0] * a[0, 2]
    s2 = a[0, 0] * a[1, 3] - a[1, 0] * a[0, 3]
    s3 = a[0, 1] * a[1, 2] - a[1, 1] * a[0, 2]
    s4 = a[0, 1] * a[1, 3] - a[1, 1] * a[0, 3]
    s5 = a[0, 2] * a[1, 3] - a[1, 2] * a[0, 3]
    c5 = a[2, 2] * a[3, 3] - a[3, 2] * a[2, 3]
    c4 = a[2, 1] * a[3, 3] - a[3, 1] * a[2, 3]
    c3 = a[2, 1] * a[3, 2] - a[3, 1] * a[2, 2]
    c2 = a[2, 0] * a[3, 3] - a[3, 0] * a[2, 3]
    c1 = a[2, 0] * a[3, 2] - a[3, 0] * a[2, 2]
    c0 = a[2, 0] * a[3, 1] - a[3, 0] * a[2, 1]
    det = s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0
    adj = np.array([
        [a[1, 1] * c5 - a[1, 2] * c4 + a[1, 3] * c3, -a[0, 1] * c5 + a[0, 2] * c4 - a[0, 3] * c3,
         a[3, 1] * s5 - a[3, 2] * s4 + a[3, 3] * s3, -a[2, 1] * s5 + a[2, 2] * s4 - a[2, 3] * s3],
        [-a[1, 0] * c5 + a[1, 2] * c2 - a[1, 3] * c1, a[0, 0] * c5 - a[0, 2] * c2 + a[0, 3] * c1,
         -a[3, 0] * s5 + a[3, 2] * s2 - a[3, 3] * s1, a[2, 0] * s5 - a[2, 2] * s2 + a[2, 3] * s1],
        [a[1, 0] * c4 - a[1, 1] * c2 + a[1, 3] * c0, -a[0, 0] * c4 + a[0, 1] * c2 - a[0, 3] * c0,
         a[3, 0] * s4 - a[3, 1] * s2 + a[3, 3] * s0, -a[2, 0] * s4 + a[2, 1] * s2 - a[2, 3] * s0],
        [-a[1, 0] * c3 + a[1, 1] * c1 - a[1, 2] * c0, a[0, 0] * c3 - a[0, 1] * c1 + a[0, 2] * c0,
         -a[3, 0] * s3 + a[3, 1] * s1 - a[3, 2] * s0, a[2, 0] * s3 - a[2, 1] * s1 + a[2, 2] * s0],
    ])  # fmt: skip
    return adj / det, det


def _deviation_on_source(Df: np.ndarray):
    """Pointwise pieces of dev(f) evaluated at f(x), computed on the source grid.

    Returns (M, S, D, H) with M = Df^-1, S = M^T omega M (the matrix of
    (f^-1)* omega at f(x)), D = S^- - omega (the deviation) and H = det Df.
    All matrices are point-major, shape (P, 4, 4).
    """
    Minv, H = _inv_det4(Df)
    M = _points(Minv)
    Om = forms.omega_matrix()
    S = np.swapaxes(M, 1, 2) @ (Om @ M)
    D = (S.reshape(-1, 16) @ _asd_operator().T).reshape(S.shape) - Om
    return M, S, D, H.reshape(-1)


def energy_t4(f: TorusMap) -> float:
    """phi(f) = 1/2 G(dev, dev), with the target integral pulled back to the source."""
    _require_dim(f, 4)
    _, _, D, H = _deviation_on_source(jacobian(f))
    density = 0.25 * np.einsum("pab,pab->p", D, D)
    return float(np.mean(density * H))


def grad_t4_source(f: TorusMap) -> TangentField:
    """Gradient of :func:`energy_t4` as minus the divergence of d(energy density)/d(Df)."""
    _require_dim(f, 4)
    grad, _, _, _ = grad_t4_from_jacobian(f.grid, jacobian(f))
    return TangentField(f, grad)


def grad_t4_from_jacobian(g, Df: np.ndarray):
    """(gradient values, energy, Df^-1, H) sharing one Jacobian evaluation.

    Df^-1 and H are returned as grid fields, shapes (4, 4, *grid) and grid.
    """
    M, S, D, H = _deviation_on_source(Df)
    q = 0.25 * np.einsum("pab,pab->p", D, D)
    SD = S @ D
    SD[:, range(4), range(4)] += q[:, None]
    stress = (H[:, None, None] * SD) @ np.swapaxes(M, 1, 2)
    shape = Df.shape[2:]
    grad = -_grid.divergence(g, _fields(stress, shape))
    return grad, float(np.mean(q * H)), _fields(M, shape), H.reshape(shape)


def mu_tilde(f: TorusMap, tol: float = 1e-10, finv: TorusMap | None = None) -> KForm:
    """((f^-1)* omega)^- on the target grid, through an explicit inverse map."""
    _require_dim(f, 4)
    finv = finv if finv is not None else inverse(f, tol)
    omega = forms.ConstantStructures(f.grid).omega
    return forms.asd_part(pullback_2form_constant(finv, omega))


def deviation(f: TorusMap, tol: float = 1e-10, finv: TorusMap | None = None) -> KForm:
    omega = forms.ConstantStructures(f.grid).omega
    return mu_tilde(f, tol, finv) - forms.asd_part(omega)


def energy_t4_target(f: TorusMap, tol: float = 1e-10) -> float:
    dev = deviation(f, tol)
    return 0.5 * forms.l2_inner(dev, dev)


def grad_t4_target(f: TorusMap, tol: float = 1e-10, finv: TorusMap | None = None) -> TangentField:
    """Gradient through the target-side pipeline.

    dev on the target grid, beta = d* dev, beta evaluated at F(x) by
    interpolation, then value = -H Df^{-T} omega Df^{-1} beta(F(x)).
    """
    _require_dim(f, 4)
    finv = finv if finv is not None else inverse(f, tol)
    beta = forms.codifferential(deviation(f, tol, finv))
    beta_at_f = compose_values(f, beta.components)
    Df = jacobian(f)
    M = inv_field(Df)
    Om = forms.omega_matrix()
    value = -det_field(Df) * np.einsum("ba...,bc,cd...,d...->a...", M, Om, M, beta_at_f)
    return TangentField(f, value)


def grad_t4(f: TorusMap, tol: float = 1e-10, route: str = "source") -> TangentField:
    if route == "source":
        return grad_t4_source(f)
    if route == "target":
        return grad_t4_target(f, tol)
    raise ValueError(f"unknown route {route!r}")


def moment_hk(f: TorusMap, relative: bool = True) -> dict[str, np.ndarray]:
    """mu_bullet(f) = -(f* omega_bullet ^ omega) / vol for bullet in I, J, K.

    With ``relative=True`` the constant value at the identity is subtracted.
    """
    _require_dim(f, 4)
    g = f.grid
    cs = forms.ConstantStructures(g)
    Df = jacobian(f)
    out = {}
    for name, w in cs.hyperkahler.items():
        B = forms.two_form_matrix(w)[(...,) + (0,) * 4]
        P = forms.two_form_from_matrix(g, pullback_2form_matrix(Df, B))
        mu = -forms.wedge(P, cs.omega).components[0]
        if relative:
            mu = mu + forms.wedge(w, cs.omega).components[0]
        out[name] = mu
    return out


def moment_hk_max(f: TorusMap) -> float:
    return max(float(np.max(np.abs(m))) for m in moment_hk(f).values())


# -- dimension dispatch ---------------------------------------------------------


def energy(f: TorusMap) -> float:
    return energy_t2(f) if f.grid.dim == 2 else energy_t4(f)


def gradient(f: TorusMap) -> TangentField:
    return grad_t2(f) if f.grid.dim == 2 else grad_t4_source(f)


def moment_sup(f: TorusMap) -> float:
    """max |mu| on T^2, max over bullet of max |mu_bullet| on T^4."""
    if f.grid.dim == 2:
        return float(np.max(np.abs(moment_t2(f))))
    return moment_hk_max(f)
