import math

import numpy as np
import pytest

from lowmach.closure import (BISECT_WIDTH, RESIDUAL_TOL, companion_density, implicit_derivative,
                             lemma_alpha_ratio, limit_alpha, lipschitz_probe, reconstruct, solve_alpha,
                             solve_alpha_array)
from lowmach.errors import DomainError
from lowmach.fields import FluidParams

from oracles import bisect_alpha, bisect_scalar

GOLDEN = (math.sqrt(5) - 1) / 2


@pytest.mark.parametrize("d, gamma, expected", [(1, 1, 0.5), (1, 2, GOLDEN), (2, 2, 0.5)])
def test_closed_form_roots(d, gamma, expected):
    r = solve_alpha(d, gamma)
    assert abs(r.a - expected) <= 1e-12
    assert r.residual <= RESIDUAL_TOL
    # bisection to 1e-8 alone needs about 27 halvings
    assert r.iterations >= math.ceil(math.log2(1 / BISECT_WIDTH))


@pytest.mark.parametrize("d, gamma", [(0, 1), (-1, 2), (1, 0), (1, -3), (math.inf, 2), (math.nan, 2)])
def test_solve_alpha_domain(d, gamma):
    with pytest.raises(DomainError):
        solve_alpha(d, gamma)


def test_extreme_d():
    for d in (1e-12, 1e12):
        for gamma in (0.5, 2.0, 5.0):
            r = solve_alpha(d, gamma)
            assert 0 < r.a < 1
            assert abs(d * r.a ** gamma + r.a - 1) <= RESIDUAL_TOL


def test_array_solver_matches_oracle():
    rng = np.random.default_rng(7)
    d = 10 ** rng.uniform(-3, 3, 2000)
    gamma = 2.0
    a = solve_alpha_array(d, gamma)
    np.testing.assert_allclose(a, bisect_alpha(d, gamma), atol=1e-12)
    # warm start from a perturbed guess lands on the same roots
    a2 = solve_alpha_array(d, gamma, guess=np.clip(a + 0.05, 0.01, 0.99))
    np.testing.assert_allclose(a2, a, atol=1e-13)


def test_companion_density():
    assert companion_density(2.0, 4, 2) == pytest.approx(4.0)
    assert companion_density(0.0, 4, 2) == 0.0
    for gp, gm in [(2, 3), (4, 2), (5.5, 2.2)]:
        assert companion_density(1.0, gp, gm) == 1.0


def test_reconstruct_linear_closure():
    p = FluidParams(gamma_plus=2, gamma_minus=2)
    s = reconstruct(np.array([1.0]), np.array([1.0]), np.zeros((1, 1)), p)
    assert s.rho_plus[0] == pytest.approx(2.0, rel=1e-12)
    assert s.rho_minus[0] == pytest.approx(2.0, rel=1e-12)
    assert s.alpha_plus[0] == pytest.approx(0.5, rel=1e-12)


def test_reconstruct_golden_ratio():
    # independent oracle: rho_plus solves 1/rho + 1/rho^2 = 1
    rho_ref = bisect_scalar(lambda r: 1 / r + 1 / r ** 2 - 1, 1.0, 3.0)
    p = FluidParams(gamma_plus=4, gamma_minus=2)
    s = reconstruct(np.array([1.0]), np.array([1.0]), np.array([[0.6]]), p)
    assert s.rho_plus[0] == pytest.approx(rho_ref, rel=1e-12)
    assert s.rho_plus[0] == pytest.approx((1 + math.sqrt(5)) / 2, rel=1e-12)
    assert s.alpha_plus[0] == pytest.approx(GOLDEN, rel=1e-12)
    assert s.rho_minus[0] == pytest.approx(rho_ref ** 2, rel=1e-12)
    assert s.alpha_minus[0] == pytest.approx(1 - GOLDEN, rel=1e-12)
    assert s.rho[0] == 2.0
    assert s.u[0, 0] == pytest.approx(0.3)
    assert s.p[0] == pytest.approx(rho_ref ** 4, rel=1e-12)


def test_reconstruct_vacuum_and_pure_phases():
    p = FluidParams(gamma_plus=4, gamma_minus=2)
    Rp = np.array([0.0, 0.0, 2.0, 1e-12])
    Rm = np.array([0.0, 9.0, 0.0, 1.0])
    s = reconstruct(Rp, Rm, np.ones((1, 4)), p)
    # vacuum convention
    assert s.alpha_plus[0] == 0.5 and s.rho_plus[0] == 0 and s.rho_minus[0] == 0 and s.u[0, 0] == 0
    # pure minus phase, and the tiny-R_plus shortcut
    for i, rm in [(1, 9.0), (3, 1.0)]:
        assert s.alpha_plus[i] == 0 and s.rho_minus[i] == rm
        assert s.rho_plus[i] == pytest.approx(rm ** 0.5)
    # pure plus phase
    assert s.alpha_plus[2] == 1 and s.rho_plus[2] == 2.0 and s.rho_minus[2] == pytest.approx(4.0)
    np.testing.assert_array_equal(s.alpha_plus + s.alpha_minus, 1.0)


def test_reconstruct_rejects_negative():
    with pytest.raises(DomainError):
        reconstruct(np.array([-1e-3]), np.array([1.0]), np.zeros((1, 1)), FluidParams())


def test_limit_alpha():
    assert limit_alpha(3.0, 2.0, 4.0) == (0.5, 0.5)
    assert limit_alpha(2.0, 2.0, 4.0)[0] == 1.0
    assert limit_alpha(4.0, 2.0, 4.0)[0] == 0.0
    with pytest.raises(DomainError):
        limit_alpha(5.0, 2.0, 4.0)
    with pytest.raises(DomainError):
        limit_alpha(1.0, 2.0, 2.0)


def test_lipschitz_pair_example():
    # on [1, 2] with two samples the only pair is (1, 2)
    rep = lipschitz_probe(2.0, (1.0, 2.0), 2)
    assert rep.pairs == 1
    assert rep.max_ratio == pytest.approx(GOLDEN - 0.5, rel=1e-10)
    rep = lipschitz_probe(2.0, (1.0, 2.0), 50)
    assert rep.max_ratio >= GOLDEN - 0.5


def test_lipschitz_bound_from_implicit_derivative():
    rep = lipschitz_probe(2.0, (0.5, 4.0), 1000)
    d = np.linspace(0.5, 4.0, 1000)
    a = bisect_alpha(d, 2.0)
    bound = np.max(a ** 2 / (2 * d * a + 1))
    assert rep.derivative_bound == pytest.approx(bound, rel=1e-9)
    assert rep.max_ratio <= bound * (1 + 1e-9)
    assert implicit_derivative(1.0, GOLDEN, 2.0) == pytest.approx(GOLDEN ** 2 / (2 * GOLDEN + 1))


@pytest.mark.parametrize("bad", [(0.0, 1.0), (2.0, 1.0), (1.0, 1.0)])
def test_lipschitz_degenerate(bad):
    with pytest.raises(DomainError):
        lipschitz_probe(2.0, bad, 10)
    with pytest.raises(DomainError):
        lipschitz_probe(2.0, (1.0, 2.0), 1)


def test_lemma_alpha_ratio_bounded():
    rng = np.random.default_rng(11)
    n = 10_000
    Rp = rng.uniform(0.5, 2.0, n)
    Rm = rng.uniform(0.5, 2.0, n)
    Rp_e = Rp * (1 + rng.uniform(-0.3, 0.3, n))
    Rm_e = Rm * (1 + rng.uniform(-0.3, 0.3, n))
    r = lemma_alpha_ratio(Rp_e, Rm_e, Rp, Rm, 4.0, 2.0)
    assert np.all(np.isfinite(r))
    assert r.max() < 10.0
    assert lemma_alpha_ratio(Rp, Rm, Rp, Rm, 4.0, 2.0).max() == 0.0
