import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow import forms
from torusflow import grid as G
from torusflow.checks import random_form, smooth_field
from torusflow.forms import FormError, KForm
from torusflow.grid import TorusGrid

G2 = TorusGrid(2, 16)
G4 = TorusGrid(4, 8)
seeds = st.integers(0, 2**32 - 1)


def test_component_count_enforced():
    with pytest.raises(FormError):
        KForm(G2, 1, np.zeros((3,) + G2.shape))


def test_d_of_sine_dy(g2):
    x = g2.coords[0]
    a = KForm(g2, 1, np.stack([np.zeros(g2.shape), np.sin(2 * np.pi * x)]))
    da = forms.exterior_derivative(a)
    assert np.max(np.abs(da.components[0] - 2 * np.pi * np.cos(2 * np.pi * x))) <= 1e-12


def test_d_of_constant_form_vanishes():
    assert forms.exterior_derivative(forms.basis(G4, 0)).max_abs() == 0.0


def test_d_top_degree_rejected():
    with pytest.raises(FormError, match="top degree"):
        forms.exterior_derivative(forms.basis(G2, 0, 1))


@given(seeds)
def test_dd_scalar_vanishes(seed):
    h = random_form(TorusGrid(2, 32), 0, np.random.default_rng(seed))
    assert forms.exterior_derivative(forms.exterior_derivative(h)).max_abs() <= 1e-11


def test_star_table_t4():
    b = forms.basis
    assert (forms.hodge_star(b(G4, 0, 1)) - b(G4, 2, 3)).max_abs() == 0.0
    assert (forms.hodge_star(b(G4, 0, 2)) + b(G4, 1, 3)).max_abs() == 0.0
    assert (forms.hodge_star(b(G4, 0, 3)) - b(G4, 1, 2)).max_abs() == 0.0


def test_star_t2_one_forms():
    assert (forms.hodge_star(forms.basis(G2, 0)) - forms.basis(G2, 1)).max_abs() == 0.0
    assert (forms.hodge_star(forms.basis(G2, 1)) + forms.basis(G2, 0)).max_abs() == 0.0


@given(seeds, st.sampled_from([2, 4]), st.integers(0, 4))
def test_star_squared_sign(seed, dim, k):
    g = G2 if dim == 2 else G4
    k = k % (dim + 1)
    a = random_form(g, k, np.random.default_rng(seed))
    sign = (-1) ** (k * (dim - k))
    assert (forms.hodge_star(forms.hodge_star(a)) - sign * a).max_abs() == 0.0


def test_codifferential_rejects_functions():
    with pytest.raises(FormError):
        forms.codifferential(forms.from_scalar(G2, np.zeros(G2.shape)))


def test_codifferential_of_constant_vanishes():
    assert forms.codifferential(forms.basis(G4, 2)).max_abs() == 0.0


def test_codifferential_of_rotation_lift_vanishes():
    # iota_x sigma = x dy - y dx has linear coefficients; d* of it is -trace(B)
    from torusflow.checks import lift_splitting_suite

    assert all(r.passed for r in lift_splitting_suite())


def test_codifferential_is_minus_laplacian(rng):
    g = TorusGrid(2, 32)
    h = random_form(g, 0, rng)
    lhs = forms.codifferential(forms.exterior_derivative(h)).components[0]
    scale = np.max(np.abs(G.laplacian(g, h.components[0])))
    assert np.max(np.abs(lhs + G.laplacian(g, h.components[0]))) <= 1e-12 * scale


@given(seeds, st.sampled_from([2, 4]))
def test_adjointness(seed, dim):
    g = TorusGrid(2, 32) if dim == 2 else G4
    rng = np.random.default_rng(seed)
    for k in range(dim):
        a, b = random_form(g, k, rng), random_form(g, k + 1, rng)
        lhs = forms.l2_inner(forms.exterior_derivative(a), b)
        rhs = forms.l2_inner(a, forms.codifferential(b))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@given(seeds)
def test_codifferential_squares_to_zero(seed):
    b = random_form(G4, 3, np.random.default_rng(seed))
    scale = np.max(np.abs(G.laplacian(G4, b.components)))
    assert forms.codifferential(forms.codifferential(b)).max_abs() <= 1e-11 * scale


def test_wedge_basics(rng):
    cs = forms.ConstantStructures(G2)
    assert (forms.wedge(forms.basis(G2, 0), forms.basis(G2, 1)) - cs.sigma).max_abs() == 0.0
    cs4 = forms.ConstantStructures(G4)
    assert (forms.wedge(cs4.omega, cs4.omega) + 2 * cs4.vol).max_abs() == 0.0
    a = random_form(G4, 1, rng)
    assert forms.wedge(a, a).max_abs() <= 1e-15


def test_wedge_degree_overflow():
    with pytest.raises(FormError):
        forms.wedge(forms.basis(G2, 0, 1), forms.basis(G2, 0))


@given(seeds, st.integers(0, 4), st.integers(0, 4))
def test_wedge_graded_commutative(seed, p, q):
    if p + q > 4:
        return
    rng = np.random.default_rng(seed)
    a, b = random_form(G4, p, rng), random_form(G4, q, rng)
    diff = forms.wedge(a, b) - (-1) ** (p * q) * forms.wedge(b, a)
    assert diff.max_abs() <= 1e-12


def test_interior_basis_contraction():
    ex = np.stack([np.ones(G2.shape), np.zeros(G2.shape)])
    out = forms.interior_product(ex, forms.ConstantStructures(G2).sigma)
    assert (out - forms.basis(G2, 1)).max_abs() == 0.0


def test_interior_rejects_functions():
    with pytest.raises(FormError):
        forms.interior_product(np.zeros((2,) + G2.shape), forms.from_scalar(G2, np.zeros(G2.shape)))


@given(seeds)
def test_interior_antiderivation(seed):
    rng = np.random.default_rng(seed)
    X = smooth_field(G4, rng, 4)
    a, b = random_form(G4, 1, rng), random_form(G4, 1, rng)
    lhs = forms.interior_product(X, forms.wedge(a, b))
    rhs = (forms.interior_product(X, a).components[0] * b) - (forms.interior_product(X, b).components[0] * a)
    assert (lhs - rhs).max_abs() <= 1e-11
    assert forms.interior_product(X, forms.interior_product(X, forms.wedge(a, b))).max_abs() <= 1e-11


def test_interior_hamiltonian_volume(rng):
    # with omega ^ omega = -2 vol the contraction picks up a minus sign
    cs = forms.ConstantStructures(G4)
    h = smooth_field(G4, rng, 1)[0]
    X = forms.sharp(-forms.exterior_derivative(forms.from_scalar(G4, h)), "omega")
    lhs = forms.interior_product(X, cs.vol)
    rhs = forms.wedge(forms.interior_product(X, cs.omega), cs.omega)
    assert (lhs + rhs).max_abs() <= 1e-12 * np.max(np.abs(X))


@given(seeds, st.sampled_from([(2, "sigma"), (2, "metric"), (4, "omega"), (4, "metric")]))
def test_sharp_flat_inverse(seed, case):
    dim, name = case
    g = G2 if dim == 2 else G4
    X = np.random.default_rng(seed).standard_normal((dim,) + g.shape)
    assert np.max(np.abs(forms.sharp(forms.flat(X, g, name), name) - X)) <= 1e-15


def test_flat_sigma_of_dx():
    ex = np.stack([np.ones(G2.shape), np.zeros(G2.shape)])
    assert (forms.flat(ex, G2, "sigma") - forms.basis(G2, 1)).max_abs() == 0.0


def test_flat_is_interior_product(rng):
    X = smooth_field(G4, rng, 4)
    omega = forms.ConstantStructures(G4).omega
    assert (forms.flat(X, G4, "omega") - forms.interior_product(X, omega)).max_abs() <= 1e-15


def test_sharp_sigma_is_minus_i_sharp_g(rng):
    a = random_form(G2, 1, rng)
    i = forms.complex_structure_t2()
    lhs = forms.sharp(a, "sigma")
    rhs = -np.einsum("ab,b...->a...", i, forms.sharp(a, "metric"))
    assert np.max(np.abs(lhs - rhs)) <= 1e-15


def test_right_j_action_is_minus_sharp_omega(rng):
    a = random_form(G4, 1, rng)
    J = forms.quaternion_matrix("j", "right")
    lhs = np.einsum("ab,b...->a...", J, forms.sharp(a, "metric"))
    assert np.max(np.abs(lhs + forms.sharp(a, "omega"))) <= 1e-15


def test_unsupported_structure():
    with pytest.raises(FormError):
        forms.structure_matrix(2, "omega")


def test_asd_split_examples():
    b = forms.basis
    plus, minus = forms.asd_split(b(G4, 0, 1))
    assert (plus - 0.5 * (b(G4, 0, 1) + b(G4, 2, 3))).max_abs() == 0.0
    assert (minus - 0.5 * (b(G4, 0, 1) - b(G4, 2, 3))).max_abs() == 0.0
    cs = forms.ConstantStructures(G4)
    plus, minus = forms.asd_split(cs.omega_J)
    assert plus.max_abs() == 0.0 and (minus - cs.omega_J).max_abs() == 0.0
    sd = b(G4, 0, 1) + b(G4, 2, 3)
    plus, minus = forms.asd_split(sd)
    assert (plus - sd).max_abs() == 0.0 and minus.max_abs() == 0.0


def test_asd_split_rejects_wrong_shape():
    with pytest.raises(FormError):
        forms.asd_split(forms.basis(G2, 0, 1))
    with pytest.raises(FormError):
        forms.asd_split(forms.basis(G4, 0))


@given(seeds)
def test_asd_split_properties(seed):
    b = random_form(G4, 2, np.random.default_rng(seed))
    plus, minus = forms.asd_split(b)
    assert (plus + minus - b).max_abs() <= 1e-15
    assert (forms.hodge_star(plus) - plus).max_abs() <= 1e-15
    assert (forms.hodge_star(minus) + minus).max_abs() <= 1e-15
    assert abs(forms.l2_inner(plus, minus)) <= 1e-14


def test_l2_inner_examples():
    cs = forms.ConstantStructures(G2)
    assert forms.l2_inner(cs.sigma, cs.sigma) == 1.0
    cs4 = forms.ConstantStructures(G4)
    assert forms.l2_inner(cs4.omega_I, cs4.omega_J) == 0.0


def test_l2_inner_mismatch():
    with pytest.raises(FormError):
        forms.l2_inner(forms.basis(G4, 0), forms.basis(G4, 0, 1))


@given(seeds)
def test_l2_inner_two_ways(seed):
    a = random_form(G4, 1, np.random.default_rng(seed))
    da = forms.exterior_derivative(a)
    assert abs(forms.l2_inner(da, da) - forms.l2_inner_via_star(da, da)) <= 1e-11 * forms.l2_inner(da, da)


@given(seeds)
def test_l2_inner_positive(seed):
    a = random_form(G4, 2, np.random.default_rng(seed))
    assert forms.l2_inner(a, a) > 0


@given(seeds)
def test_exact_forms_balance(seed):
    a = random_form(TorusGrid(4, 8), 1, np.random.default_rng(seed))
    plus, minus = forms.asd_split(forms.exterior_derivative(a))
    num = abs(forms.l2_inner(plus, plus) - forms.l2_inner(minus, minus))
    assert num <= 1e-8 * forms.l2_inner(plus + minus, plus + minus)


def test_hyperkahler_triple():
    cs = forms.ConstantStructures(G4)
    trip = cs.hyperkahler
    for w in trip.values():
        assert (forms.hodge_star(w) + w).max_abs() == 0.0
    assert (trip["I"] - (forms.basis(G4, 0, 1) - forms.basis(G4, 2, 3))).max_abs() == 0.0
    assert (trip["J"] - (forms.basis(G4, 0, 3) - forms.basis(G4, 1, 2))).max_abs() == 0.0
    assert (trip["K"] - (forms.basis(G4, 0, 2) + forms.basis(G4, 1, 3))).max_abs() == 0.0
