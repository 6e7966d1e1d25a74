import math

import numpy as np
import pytest

from lowmach import compressible as C
from lowmach.closure import reconstruct
from lowmach.entropy import energy
from lowmach.errors import DomainError, SimulationError
from lowmach.fields import DIRICHLET, FluidParams, Grid, vector_norm_l2_sq

SINGLE = FluidParams(gamma_plus=2.0, gamma_minus=3.0, mu=1e-6, lam=0.0, eps=1.0, c0=1.0)


def _single_phase(grid, rho):
    return C.ConservedField(rho, np.zeros(grid.shape), grid.zeros_vector())


def test_config_validation():
    for kw in ({"cfl": 1.0}, {"cfl": 0.0}, {"floor": 0.0}, {"limiter": "superbee"}, {"flux": "hllc"}):
        with pytest.raises(DomainError):
            C.SolverConfig(**kw)


def test_stable_dt_acoustic_example():
    g = Grid((32,))
    dt = C.stable_dt(g, _single_phase(g, np.ones(32)), SINGLE, C.SolverConfig(cfl=0.5))
    assert dt == pytest.approx(0.5 * g.h[0] / math.sqrt(2), rel=1e-12)


def test_stable_dt_halves_with_eps():
    g = Grid((32,))
    st = _single_phase(g, np.ones(32))
    cfg = C.SolverConfig()
    a = C.stable_dt(g, st, SINGLE, cfg)
    b = C.stable_dt(g, st, SINGLE.with_eps(0.5), cfg)
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_stable_dt_viscous_quarters():
    p = FluidParams(gamma_plus=2.0, gamma_minus=3.0, mu=10.0, eps=1.0, c0=1.0)
    cfg = C.SolverConfig()
    g = Grid((16, 16))
    st = C.rest_state(g, p)
    a = C.stable_dt(g, st, p, cfg)
    assert a == pytest.approx(cfg.cfl * g.h_min ** 2 * 1.0 / (2 * 2 * 20.0), rel=1e-12)
    g2 = g.refined()
    assert C.stable_dt(g2, C.rest_state(g2, p), p, cfg) == pytest.approx(a / 4, rel=1e-12)


def test_stable_dt_vacuum():
    g = Grid((8,))
    with pytest.raises(DomainError):
        C.stable_dt(g, _single_phase(g, np.zeros(8)), SINGLE, C.SolverConfig())


def test_mixture_sound_speed(params):
    g = Grid((8, 8))
    prim = reconstruct(*C.rest_state(g, params, 0.3).stack()[:2], g.zeros_vector(), params)
    cp, cm = C.sound_speeds(prim, params)
    # rho c^2 is the alpha-weighted harmonic mean of gamma_i p
    harm = 1.0 / (0.3 / (params.gamma_plus * prim.p) + 0.7 / (params.gamma_minus * prim.p))
    np.testing.assert_allclose(prim.rho * cm ** 2, harm, rtol=1e-12)
    np.testing.assert_allclose(cp, np.sqrt(params.gamma_plus * prim.rho_plus ** (params.gamma_plus - 1)))
    single = reconstruct(np.full(g.shape, 1.3), np.zeros(g.shape), g.zeros_vector(), params)
    cp, cm = C.sound_speeds(single, params)
    np.testing.assert_allclose(cm, cp, rtol=1e-12)


@pytest.mark.parametrize("flux", C.FLUXES)
@pytest.mark.parametrize("limiter", C.LIMITERS)
def test_rest_state_is_fixed_point(params, flux, limiter):
    g = Grid((8, 8))
    st = C.rest_state(g, params, 0.35)
    cfg = C.SolverConfig(flux=flux, limiter=limiter)
    dt = C.stable_dt(g, st, params, cfg)
    out = st
    for _ in range(20):
        out = C.step(g, out, params, cfg, dt)
    np.testing.assert_array_equal(out.R_plus, st.R_plus)
    np.testing.assert_array_equal(out.R_minus, st.R_minus)
    np.testing.assert_array_equal(out.m, st.m)


def test_mirror_symmetry_preserved():
    g = Grid((16, 16))
    p = FluidParams(eps=0.5)
    x, y = g.coords()
    alpha = 0.5 + 0.2 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    rho_p = p.rho_plus_limit * (1 + 0.05 * np.cos(2 * np.pi * x))
    u = np.stack([0.3 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y), 0.2 * np.cos(2 * np.pi * x)])
    st = C.from_primitive(g, alpha, rho_p, u, p)
    # mirror x -> 1 - x: cell i <-> n-1-i, u_x changes sign
    np.testing.assert_allclose(st.R_plus, st.R_plus[::-1], atol=1e-14)
    for limiter in C.LIMITERS:
        cfg = C.SolverConfig(limiter=limiter)
        s = st
        for _ in range(100):
            s = C.step(g, s, p, cfg, C.stable_dt(g, s, p, cfg))
        assert np.max(np.abs(s.R_plus - s.R_plus[::-1])) <= 1e-10
        assert np.max(np.abs(s.R_minus - s.R_minus[::-1])) <= 1e-10
        assert np.max(np.abs(s.m[0] + s.m[0][::-1])) <= 1e-10
        assert np.max(np.abs(s.m[1] - s.m[1][::-1])) <= 1e-10


def test_shear_viscous_decay():
    g = Grid((32, 32))
    p = FluidParams(gamma_plus=4, gamma_minus=2, mu=1e-2, eps=1.0, c0=1.0)
    s = 1e-3
    y = g.coords()[1]
    u = np.stack([s * np.sin(2 * np.pi * y), np.zeros(g.shape)])
    st = C.from_primitive(g, 0.5, 1.0, u, p)
    res = C.run(g, st, p, C.SolverConfig(t_end=0.5, cadence=0.05))
    ke = []
    for row in res.report.rows:
        ke.append(row["energy_E"])
    # potential part is constant (uniform density stays uniform), so
    # differences of E are kinetic
    e = np.array(ke) - ke[0] + 0.25 * s ** 2
    assert np.all(np.diff(e) < 0)
    rate = -np.polyfit(res.report.column("t"), np.log(e), 1)[0] / 2
    assert rate == pytest.approx(p.mu * (2 * np.pi) ** 2, rel=0.2)


def test_mass_conservation_and_budget(params):
    g = Grid((16, 16))
    x, y = g.coords()
    alpha = 0.5 + 0.2 * np.sin(2 * np.pi * x)
    u = np.stack([np.sin(2 * np.pi * y), np.sin(2 * np.pi * x)])
    st = C.from_primitive(g, alpha, params.rho_plus_limit, u, params)
    res = C.run(g, st, params, C.SolverConfig(t_end=0.05, cadence=0.01))
    assert res.max_mass_drift <= 1e-12
    assert res.floor_mass == 0.0
    assert res.max_budget_excess <= 1e-3
    assert res.max_pressure_residual <= 1e-10
    assert not res.aborted
    d = res.report.column("dissipation")
    assert np.all(np.diff(d) >= 0)


def test_dirichlet_1d_run():
    g = Grid((64,), bc=DIRICHLET)
    p = FluidParams(eps=0.5, mu=1e-2)
    x = g.coords()[0]
    st = C.from_primitive(g, 0.5 + 0.2 * np.cos(np.pi * x), p.rho_plus_limit * (1 + 0.01 * np.cos(np.pi * x)),
                          np.zeros((1, 64)), p)
    res = C.run(g, st, p, C.SolverConfig(t_end=0.1, cadence=0.05))
    assert res.max_mass_drift <= 1e-12
    assert res.max_budget_excess <= 1e-3
    assert res.state.is_finite()


def test_floor_accounting():
    g = Grid((4,))
    q = np.stack([np.array([1.0, 0.0, -1e-9, 2.0]), np.ones(4), np.zeros(4)])
    added = C.apply_floor(q, 1e-8, g)
    assert added == pytest.approx((1e-8 + 1e-8 + 1e-9) * 0.25)
    assert q[0].min() == 1e-8


def test_energy_abort_flag(params):
    g = Grid((8, 8))
    st = C.from_primitive(g, 0.5, params.rho_plus_limit, np.ones((2, 8, 8)), params)
    res = C.run(g, st, params, C.SolverConfig(t_end=0.1, cadence=0.05, energy_abort=0.5))
    assert res.aborted
    assert "energy growth" in res.report.meta["abort_reason"]


def test_nan_raises_with_snapshot(tmp_path, params, monkeypatch):
    g = Grid((8, 8))
    st = C.rest_state(g, params)

    def broken(*a, **k):
        out = st.copy()
        out.R_plus[0, 0] = np.nan
        return out

    monkeypatch.setattr(C, "step", broken)
    cfg = C.SolverConfig(t_end=0.1, cadence=0.05, checkpoint_dir=str(tmp_path))
    with pytest.raises(SimulationError) as exc:
        C.run(g, st, params, cfg)
    assert exc.value.snapshot_path.endswith("last_good.npz")
    back, t = C.ConservedField.load(exc.value.snapshot_path)
    assert t == 0.0
    np.testing.assert_array_equal(back.R_plus, st.R_plus)


def test_negative_initial_mass_rejected(params):
    g = Grid((8,))
    st = C.ConservedField(-np.ones(8), np.ones(8), np.zeros((1, 8)))
    with pytest.raises(DomainError):
        C.run(g, st, params, C.SolverConfig(t_end=0.01, cadence=0.01))


def test_snapshot_times_are_hit(params):
    g = Grid((8, 8))
    st = C.rest_state(g, params)
    res = C.run(g, st, params, C.SolverConfig(t_end=0.02, cadence=0.01), snapshot_times=(0.0, 0.015))
    assert sorted(res.snapshots) == [0.0, 0.015]
    assert list(res.report.column("t")) == pytest.approx([0.0, 0.01, 0.02])


# -------------------------------------------------------- self-convergence

def _smooth_solution(n, limiter):
    g = Grid((n,))
    x = g.coords()[0]
    rho = 1 + 0.2 * np.sin(2 * np.pi * x)
    st = C.ConservedField(rho, np.zeros(n), (rho * 0.5 * np.cos(2 * np.pi * x))[None])
    p = FluidParams(gamma_plus=2.0, gamma_minus=3.0, mu=1e-4, eps=1.0, c0=1.0)
    return C.run(g, st, p, C.SolverConfig(t_end=0.1, cadence=0.1, limiter=limiter)).state.R_plus


def _self_orders(limiter, ns):
    sols = [_smooth_solution(n, limiter) for n in ns]
    diffs = [np.mean(np.abs(sols[k + 1].reshape(-1, 2).mean(axis=1) - sols[k])) for k in range(len(ns) - 1)]
    return [math.log2(diffs[k] / diffs[k + 1]) for k in range(len(diffs) - 1)]


def test_self_convergence_minmod():
    orders = _self_orders("minmod", (64, 128, 256, 512))
    assert min(orders) >= 1.5


@pytest.mark.xfail(strict=True, reason="first-order self-convergence order tends to 1 from below")
def test_self_convergence_first_order():
    orders = _self_orders("none", (128, 256, 512, 1024))
    assert min(orders) >= 1.0


def test_first_order_rate_approaches_one():
    orders = _self_orders("none", (128, 256, 512, 1024))
    gaps = [1 - o for o in orders]
    assert orders[-1] > 0.98
    assert gaps[1] < 0.75 * gaps[0]


def test_conserved_field_roundtrip(tmp_path):
    g = Grid((4, 4))
    rng = np.random.default_rng(0)
    st = C.ConservedField(rng.random((4, 4)), rng.random((4, 4)), rng.random((2, 4, 4)))
    q = st.stack()
    assert q.shape == (4, 4, 4)
    back = C.ConservedField.unstack(q)
    np.testing.assert_array_equal(back.m, st.m)
    path = st.save(tmp_path / "s.npz")
    loaded, t = C.ConservedField.load(path)
    assert t is None
    np.testing.assert_array_equal(loaded.R_minus, st.R_minus)
    assert st.masses(g) == pytest.approx((st.R_plus.mean(), st.R_minus.mean()))
