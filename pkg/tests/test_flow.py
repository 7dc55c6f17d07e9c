import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusflow import flow, forms, maps, moment
from torusflow import symbol as S
from torusflow.acceptance import fixed_hamiltonian, generator_steps
from torusflow.checks import smooth_field
from torusflow.flow import ConfigError, FlowAbort, RunConfig, StepOptions
from torusflow.grid import TorusGrid
from torusflow.maps import TorusMap

EPS = 0.03


def shear(g, eps=EPS):
    return TorusMap.from_function(g, lambda x, y: np.stack([eps * np.sin(2 * np.pi * y), 0 * x]))


def x_stretch(g, eps=EPS):
    return TorusMap.from_function(g, lambda x, y: np.stack([eps * np.sin(2 * np.pi * x), 0 * y]))


def generated(dim, n):
    g = TorusGrid(dim, n)
    return flow.hamiltonian_flow_map(g, fixed_hamiltonian(dim), 1.0, generator_steps(n))


# -- Hamiltonian fields -----------------------------------------------------------------


def test_constant_hamiltonian_has_zero_field(g2):
    assert np.all(flow.hamiltonian_vector_field(g2, np.full(g2.shape, 3.0)) == 0.0)


def test_hamiltonian_field_of_sine(g2):
    y = g2.coords[1]
    X = flow.hamiltonian_vector_field(g2, np.sin(2 * np.pi * y))
    assert np.max(np.abs(X[0] + 2 * np.pi * np.cos(2 * np.pi * y))) <= 1e-12
    assert np.max(np.abs(X[1])) <= 1e-12


@pytest.mark.parametrize("dim, n", [(2, 32), (4, 8)])
def test_hamiltonian_field_residual(dim, n, rng):
    g = TorusGrid(dim, n)
    name = flow.default_structure(dim)
    h = smooth_field(g, rng, 1)[0]
    X = flow.hamiltonian_vector_field(g, h)
    dh = forms.exterior_derivative(forms.from_scalar(g, h))
    assert (forms.flat(X, g, name) + dh).max_abs() <= 1e-12 * max(1.0, dh.max_abs())


def test_hamiltonian_flow_preserves_density():
    f = generated(2, 32)
    assert np.max(np.abs(maps.density(f) - 1.0)) <= 1e-6


# -- DeTurck fields -------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [2, 4])
def test_deturck_field_vanishes_at_identity(dim):
    g = TorusGrid(dim, 16 if dim == 2 else 8)
    assert np.all(flow.deturck_field(TorusMap.identity(g)) == 0.0)


def test_deturck_t2_stretch_and_shear(g2):
    assert np.max(np.abs(flow.deturck_field_t2(x_stretch(g2)))) <= 1e-12
    # k = d* iota_u sigma = -2 pi eps cos(2 pi y), W = -sharp_sigma dk
    y = g2.coords[1]
    W = flow.deturck_field_t2(shear(g2))
    assert np.max(np.abs(W[0] + 4 * np.pi**2 * EPS * np.sin(2 * np.pi * y))) <= 1e-11
    assert np.max(np.abs(W[1])) == 0.0


def test_deturck_t2_defining_identity(rng):
    g = TorusGrid(2, 32)
    f = flow.random_perturbation(g, 0.05, 3)
    sigma = forms.ConstantStructures(g).sigma
    k = forms.codifferential(forms.interior_product(f.u, sigma))
    lhs = forms.interior_product(flow.deturck_field_t2(f), sigma) + forms.exterior_derivative(k)
    assert lhs.max_abs() <= 1e-11


@pytest.mark.parametrize("route", ["source", "inverse"])
def test_deturck_t4_analytic(route):
    # F = id + (0, 0, eps sin(2 pi x1), 0): F^-1 = id - that, k o F = -2 pi eps cos(2 pi x1)
    g = TorusGrid(4, 8)
    f = TorusMap.from_function(g, lambda a, b, c, d: np.stack([0 * a, 0 * a, EPS * np.sin(2 * np.pi * a), 0 * a]))
    W = flow.deturck_field_t4(f, 1e-12, route)
    x1 = g.coords[0]
    assert np.max(np.abs(W[2] + 4 * np.pi**2 * EPS * np.sin(2 * np.pi * x1))) <= 1e-11
    assert np.max(np.abs(W[[0, 1, 3]])) <= 1e-11


def test_deturck_t4_routes_agree():
    f = flow.random_perturbation(TorusGrid(4, 8), 0.01, 2)
    src = flow.deturck_field_t4(f, 1e-12, "source")
    inv = flow.deturck_field_t4(f, 1e-12, "inverse")
    assert np.max(np.abs(src - inv)) <= 1e-3 * np.max(np.abs(src))


def test_deturck_t4_is_hamiltonian_in_potential(g4):
    f = flow.random_perturbation(g4, 0.05, 5)
    W = flow.deturck_field_t4(f)
    k = forms.from_scalar(g4, flow.deturck_potential_t4(f))
    assert (forms.flat(W, g4, "omega") - forms.exterior_derivative(k)).max_abs() <= 1e-11


@pytest.mark.parametrize("dim, n", [(2, 32), (4, 8)])
def test_deturck_field_is_hamiltonian(dim, n):
    g = TorusGrid(dim, n)
    W = flow.deturck_field(flow.random_perturbation(g, 0.05, 9))
    closed = forms.exterior_derivative(forms.flat(W, g, flow.default_structure(dim)))
    assert closed.max_abs() <= 1e-10 * max(1.0, np.max(np.abs(W)))


def test_deturck_unknown_route(g4):
    with pytest.raises(ValueError):
        flow.deturck_potential_t4(TorusMap.identity(g4), route="sideways")


# -- modified velocity ------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [2, 4])
def test_modified_velocity_zero_at_identity(dim):
    g = TorusGrid(dim, 16 if dim == 2 else 8)
    assert np.all(flow.modified_velocity(TorusMap.identity(g)).value == 0.0)


def test_modified_velocity_at_symplectomorphism_is_gauge_only():
    f = generated(2, 32)
    W = flow.deturck_field(f)
    pushed = maps.pushforward_vector(f, W).value
    assert np.max(np.abs(flow.modified_velocity(f).value - pushed)) <= 1e-6 * np.max(np.abs(pushed))


@pytest.mark.parametrize("dim, n, k", [(2, 32, (2, 1)), (4, 8, (1, 2, 0, -1))])
def test_linearisation_reproduces_elliptic_symbol(dim, n, k):
    # velocities and 1-forms are paired through iota_u (sigma or omega)
    g = TorusGrid(dim, n)
    name, s = flow.default_structure(dim), 1e-6

    def op(a):
        X = forms.sharp(a, name)
        vp = flow.modified_velocity(TorusMap(g, s * X)).value
        vm = flow.modified_velocity(TorusMap(g, -s * X)).value
        return forms.flat(-(vp - vm) / (2 * s), g, name)

    probe = S.symbol_probe(g, op, np.array(k))
    exact = (S.symbol_t2 if dim == 2 else S.symbol_t4)(1.0, 2 * np.pi * np.array(k, dtype=float))
    assert np.max(np.abs(probe.entries - exact.entries)) <= 1e-3 * np.max(np.abs(exact.entries))


def test_fused_evaluation_matches_modified_velocity():
    for g in (TorusGrid(2, 32), TorusGrid(4, 8)):
        f = flow.random_perturbation(g, 0.05, 1)
        ev = flow.evaluate(f, StepOptions(dealias=False))
        ref = flow.modified_velocity(f).value
        assert np.max(np.abs(ev.velocity - ref)) <= 1e-10 * np.max(np.abs(ref))


# -- stepping -----------------------------------------------------------------------------------


def test_step_keeps_phi_at_symplectomorphism():
    f = generated(2, 32)
    state = flow.initial_state(f, 1e-5)
    after = flow.step(state)
    assert after.phi <= state.phi + 1e-10


def test_hundred_monotone_steps():
    g = TorusGrid(2, 64)
    f = flow.random_perturbation(g, 0.05, 0)
    state = flow.initial_state(f, flow.auto_dt(g, float(maps.density(f).max())))
    for _ in range(100):
        nxt = flow.step(state)
        assert nxt.phi < state.phi
        state = nxt


def _fixed_steps(f, dt, m, opts):
    state = flow.initial_state(f, dt, opts)
    for _ in range(m):
        state = flow.step(state, dt, opts)
        assert state.diagnostics["dt"] == dt
    return state.f


def test_rk4_is_fourth_order():
    g = TorusGrid(2, 16)
    f = flow.random_perturbation(g, 0.05, 1)
    opts = StepOptions(dealias=False)
    T, dt = 4e-3, 1e-3
    ref = _fixed_steps(f, dt / 8, 32, opts)
    e1 = maps.max_displacement_difference(_fixed_steps(f, dt, 4, opts), ref)
    e2 = maps.max_displacement_difference(_fixed_steps(f, dt / 2, 8, opts), ref)
    assert T == pytest.approx(4 * dt)
    assert e1 / e2 >= 12


def test_step_rejects_nonpositive_dt(g2):
    with pytest.raises(flow.FlowError):
        flow.step(flow.initial_state(TorusMap.identity(g2), 1e-3), 0.0)


def test_step_underflow_aborts(g2, monkeypatch):
    state = flow.initial_state(flow.random_perturbation(g2, 0.05, 1), 1e-3)
    monkeypatch.setattr(flow, "PHI_SLACK", -math.inf)
    with pytest.raises(FlowAbort, match="underflow"):
        flow.step(state)


def test_unknown_integrator(g2):
    state = flow.initial_state(flow.random_perturbation(g2, 0.05, 1), 1e-4)
    with pytest.raises(flow.FlowError):
        flow.step(state, opts=StepOptions(integrator="euler"))


def test_imex_step_decreases_phi():
    g = TorusGrid(2, 32)
    f = flow.random_perturbation(g, 0.05, 2)
    opts = StepOptions(integrator="imex")
    state = flow.initial_state(f, flow.auto_dt(g, float(maps.density(f).max()), "imex"), opts)
    for _ in range(10):
        nxt = flow.step(state, opts=opts)
        assert nxt.phi < state.phi
        state = nxt


def test_near_symplectomorphism_stays_near():
    # at n = 32 the gauge-moved map is under-resolved and mu settles near 5e-6
    f = generated(2, 64)
    mu0 = np.max(np.abs(moment.moment_t2(f)))
    state = flow.initial_state(f, flow.auto_dt(f.grid, 1.0))
    for _ in range(100):
        state = flow.step(state)
    assert np.max(np.abs(moment.moment_t2(state.f))) <= 5 * mu0


# -- gauge reconstruction ------------------------------------------------------------------------


def test_gauge_of_zero_field_is_identity(g2):
    zero = np.zeros((2,) + g2.shape)
    gauges = flow.gauge_reconstruct(g2, [zero] * 5, 0.1)
    assert all(p.is_identity() for p in gauges)


def test_gauge_sample_count_checked(g2):
    zero = np.zeros((2,) + g2.shape)
    with pytest.raises(flow.FlowError):
        flow.gauge_reconstruct(g2, [zero] * 3, np.array([0.0, 1.0]))


def test_gauge_reconstruct_is_fourth_order():
    g = TorusGrid(2, 32)
    x, y = g.coords
    W = flow.hamiltonian_vector_field(g, 0.01 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    ref = flow.integrate_characteristics(g, -W, 1.0, 400)
    errs = []
    for m in (10, 20):
        p = flow.gauge_reconstruct(g, [W] * (m + 1), 1.0 / m)[-1]
        errs.append(maps.max_displacement_difference(p, ref))
    assert errs[0] / errs[1] >= 12
    assert np.max(np.abs(maps.density(p) - 1.0)) <= 1e-6


def test_deturck_residuals_vanish_for_static_maps(g2):
    f = TorusMap.identity(g2)
    r = flow.deturck_residuals(np.array([0.0, 0.1, 0.2]), [f] * 3, [f] * 3)
    assert math.isnan(r[0]) and math.isnan(r[-1]) and r[1] == 0.0


# -- initial data and runs -------------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_random_perturbation_reproducible(seed):
    g = TorusGrid(2, 16)
    a, b = flow.random_perturbation(g, 0.05, seed), flow.random_perturbation(g, 0.05, seed)
    assert np.array_equal(a.u, b.u)
    assert np.max(np.abs(a.u)) == pytest.approx(0.05, rel=1e-12)


def test_hamiltonian_perturbation_is_symplectic():
    f = flow.random_perturbation(TorusGrid(2, 32), 0.05, 1, kind="hamiltonian")
    assert np.max(np.abs(maps.density(f) - 1.0)) <= 1e-5


def test_unknown_perturbation_kind(g2):
    with pytest.raises(flow.FlowError):
        flow.random_perturbation(g2, 0.05, 1, kind="spiky")


def test_run_from_identity_stays_put():
    res = flow.run(RunConfig(dim=2, n=16, t_end=0.1, amplitude=0.0))
    assert res.summary["phi0"] == 0.0 and res.summary["phiT"] == 0.0
    assert res.final.f.is_identity()


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    cfg = dict(dim=2, n=16, t_end=2e-3, amplitude=0.05, seed=3, reconstruct_steps=4)
    a = flow.run(RunConfig(**cfg, out_dir=str(tmp_path / "a")))
    b = flow.run(RunConfig(**cfg, out_dir=str(tmp_path / "b")))
    text_a = (tmp_path / "a" / "diagnostics.csv").read_text()
    assert text_a == (tmp_path / "b" / "diagnostics.csv").read_text()
    rows = list(csv.reader(text_a.splitlines()))
    assert tuple(rows[0]) == flow.CSV_FIELDS
    assert float(rows[1][1]) == a.rows[0]["phi"]
    assert a.summary["phiT"] < a.summary["phi0"]
    assert (tmp_path / "a" / "final_map.bin").exists() and (tmp_path / "a" / "summary.json").exists()
    assert np.array_equal(a.final.f.u, b.final.f.u)


def test_csv_keeps_full_precision(tmp_path):
    row = {k: 0.1 + 1e-17 * i for i, k in enumerate(flow.CSV_FIELDS)}
    row["t"] = 1 / 3
    flow.write_csv(tmp_path / "d.csv", [row])
    values = list(csv.reader((tmp_path / "d.csv").read_text().splitlines()))[1]
    assert float(values[0]) == 1 / 3


def test_run_config_defaults_and_validation():
    cfg = RunConfig.from_mapping({"dim": 2, "n": 32, "t_end": 1.0})
    assert cfg.dt == "auto" and cfg.integrator == "rk4" and cfg.do_reconstruct
    assert not RunConfig(dim=4, n=8, t_end=1.0).do_reconstruct
    bad = [
        {"dim": 3, "n": 32, "t_end": 1.0},
        {"dim": 2, "n": 24, "t_end": 1.0},
        {"dim": 2, "n": 32, "t_end": 0.0},
        {"dim": 2, "n": 32, "t_end": 1.0, "dt": -1.0},
        {"dim": 2, "n": 32, "t_end": 1.0, "amplitude": 0.3},
        {"dim": 2, "n": 32, "t_end": 1.0, "colour": "red"},
        {"dim": 2, "n": 32},
    ]
    for data in bad:
        with pytest.raises(ConfigError):
            RunConfig.from_mapping(data)
    with pytest.raises(ConfigError, match="unsupported dimension"):
        RunConfig.from_mapping({"dim": 3, "n": 32, "t_end": 1.0})
