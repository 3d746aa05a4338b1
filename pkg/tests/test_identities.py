import math

import numpy as np
import pytest

from glassid.errors import DomainError
from glassid.gibbs import Constant, EnergyPower
from glassid.identities import (
    DEFAULT_GRID,
    BetaGrid,
    ModelFamily,
    ac_residual,
    applicable_identities,
    beta_average,
    cw_factorization_residual,
    gg_low_order,
    gg_residual,
    run_identity_suite,
    ss_poly_residual,
    thermal_fluct_residual,
)
from glassid.quenched import MonteCarlo, Quadrature
from glassid.replica import MonomialSum, ReplicaMonomial, parse_monomials
from glassid.spin_core import ModelSpec

C12 = parse_monomials("c12")
SK3 = ModelSpec.sk(3)


class TestBetaGrid:
    @pytest.mark.parametrize("args", [(1.0, 1.0, 5), (-0.1, 1.0, 5), (0.0, 1.0, 4), (0.0, 1.0, 1)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            BetaGrid(*args)

    def test_uniform(self):
        v = DEFAULT_GRID.values
        assert v[0] == 0.5 and v[-1] == 1.5 and len(v) == 21
        assert np.ptp(np.diff(v)) <= 1e-14

    def test_constant(self):
        assert beta_average([2.5] * 7, BetaGrid(0.2, 0.9, 7)) == pytest.approx(2.5, abs=1e-15)

    def test_linear(self):
        g = BetaGrid(0.0, 1.0, 101)
        assert beta_average(g.values, g) == pytest.approx(0.5, abs=1e-12)

    def test_sine(self):
        g = BetaGrid(0.0, math.pi, 101)
        assert beta_average(np.sin(g.values), g) == pytest.approx(2 / math.pi, abs=1e-8)

    def test_misaligned(self):
        with pytest.raises(Exception):
            beta_average([1.0, 2.0], DEFAULT_GRID)


class TestDeterministic:
    def test_thermal_fluct(self):
        cw = ModelSpec.curie_weiss(6)
        assert thermal_fluct_residual(cw, 0.7, Constant(1.0)) == pytest.approx(0, abs=1e-15)
        assert thermal_fluct_residual(cw, 0.7) >= 0
        assert thermal_fluct_residual(ModelSpec.curie_weiss(16), 0.3) < thermal_fluct_residual(ModelSpec.curie_weiss(8), 0.3)

    def test_thermal_fluct_rejects_disorder(self):
        with pytest.raises(DomainError):
            thermal_fluct_residual(SK3, 0.5)

    def test_factorization(self):
        assert cw_factorization_residual(8, 0.0) == pytest.approx(0, abs=1e-15)
        for beta in (0.3, 0.8):
            vals = [abs(cw_factorization_residual(N, beta)) for N in (8, 12, 16)]
            assert vals[0] > vals[1] > vals[2]
        with pytest.raises(DomainError):
            cw_factorization_residual(3, 0.5)

    def test_higher_factorization(self):
        assert abs(cw_factorization_residual(12, 0.3, n=3)) < abs(cw_factorization_residual(6, 0.3, n=3))


class TestGaussianResiduals:
    def test_ss_poly(self):
        mode = MonteCarlo(60, 2)
        assert ss_poly_residual(SK3, 0.9, Constant(1.0), mode).value == pytest.approx(0, abs=1e-15)
        est = ss_poly_residual(SK3, 0.9, EnergyPower(1), mode)
        assert est.value >= -3 * est.std_error

    def test_ac_beta0_sk2(self):
        # uniform replicas at N=2: c12 = eta1 eta2 / 4 with independent signs eta
        est = ac_residual(ModelSpec.sk(2), 0.0, Quadrature(8))
        assert est.value == pytest.approx(1 / 16, abs=1e-15)

    def test_gg_n1_constant_vanishes(self):
        for model in (SK3, ModelSpec.ea(2, 2)):
            est = gg_residual(model, [0.4, 1.3], 1, MonomialSum((ReplicaMonomial(1),)), MonteCarlo(20, 1))
            assert all(abs(e.value) <= 1e-15 for e in est)

    def test_gg_c12_equals_r1(self):
        mode = Quadrature(12)
        delta = gg_residual(SK3, 1.0, 2, C12, mode).value
        r1, _ = gg_low_order(SK3, 1.0, mode)
        assert delta == pytest.approx(r1.value, abs=1e-15)

    def test_ac_is_combination_of_low_order(self):
        # E(c12^2) - 4 E(c12 c23) + 3 E(c12 c34) = -4 r1 + 3 r2 after substitution
        mode = Quadrature(12)
        for beta in (0.5, 1.0, 1.5):
            r1, r2 = gg_low_order(SK3, beta, mode)
            assert ac_residual(SK3, beta, mode).value == pytest.approx(-4 * r1.value + 3 * r2.value, abs=1e-10)

    def test_gg_caps(self):
        with pytest.raises(DomainError):
            gg_residual(SK3, 1.0, 6, C12, MonteCarlo(4, 0))
        with pytest.raises(DomainError):
            gg_residual(SK3, 1.0, 1, parse_monomials("c12"), MonteCarlo(4, 0))

    def test_deterministic_model_rejected(self):
        with pytest.raises(DomainError):
            ac_residual(ModelSpec.curie_weiss(4), 1.0, MonteCarlo(4, 0))


class TestSuite:
    def test_capability_filter(self):
        assert set(applicable_identities(ModelSpec.curie_weiss(4))) == {"thermal_fluct", "cw_factorization"}
        reports = run_identity_suite(ModelFamily("CW"), [6, 8], BetaGrid(0.5, 1.5, 5))
        assert {r.identity for r in reports} == {"thermal_fluct", "cw_factorization"}

    def test_report_average_is_simpson(self):
        grid = BetaGrid(0.5, 1.5, 7)
        reports = run_identity_suite(ModelFamily("SK"), [3], grid, MonteCarlo(30, 4), ["ac", "gg_r1"])
        for r in reports:
            assert len(r.per_beta) == 7
            assert r.beta_average == pytest.approx(beta_average([v for _, v, _ in r.per_beta], grid), abs=1e-15)

    def test_deterministic(self):
        args = (ModelFamily("SK"), [3, 4], BetaGrid(0.5, 1.5, 5), MonteCarlo(30, 4))
        assert run_identity_suite(*args) == run_identity_suite(*args)

    def test_failing_cell_is_reported(self):
        reports = run_identity_suite(ModelFamily("EA", d=2), [4, 5], BetaGrid(0.5, 1.5, 3), MonteCarlo(4, 0), ["ac"])
        assert reports[0].error is None
        assert reports[1].error is not None

    def test_unknown_identity(self):
        with pytest.raises(DomainError):
            run_identity_suite(ModelFamily("SK"), [3], DEFAULT_GRID, MonteCarlo(4, 0), ["nope"])

    def test_sk_decay_small(self):
        reports = run_identity_suite(ModelFamily("SK"), [4, 8], DEFAULT_GRID, MonteCarlo(300, 7))
        by = {(r.identity, r.N): abs(r.beta_average) for r in reports}
        for name in ("ss_poly", "ac", "gg", "gg_r1", "gg_r2"):
            assert by[(name, 8)] < by[(name, 4)]
