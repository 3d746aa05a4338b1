import math

import numpy as np
import pytest
from scipy.integrate import quad

from glassid.errors import DomainError, SampleSizeError, SizeLimitError
from glassid.gibbs import Constant, EnergyPower, SpinProduct, gibbs_state, thermal_expectation
from glassid.quenched import (
    MonteCarlo,
    Obs,
    Quadrature,
    decomposition,
    disorder_table,
    gauss_hermite,
    gs_derivative,
    perturbed_quenched,
    quenched_expectation,
    sample_stream,
    stochastic_perturbed,
)
from glassid.replica import parse_monomials
from glassid.spin_core import DisorderRealization, ModelSpec

H = EnergyPower(1)
SK2 = ModelSpec.sk(2)
C12 = parse_monomials("c12")


def gaussian_integral(fn):
    """Oracle: integral of fn(J) against the standard normal density."""
    val, _ = quad(lambda J: fn(J) * math.exp(-J * J / 2) / math.sqrt(2 * math.pi), -40, 40, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def sk2_thermal(beta, J, f):
    return thermal_expectation(gibbs_state(SK2, DisorderRealization.for_model(SK2, [J]), beta), f)


class TestModes:
    def test_validation(self):
        with pytest.raises(SampleSizeError):
            MonteCarlo(1, 0)
        with pytest.raises(DomainError):
            Quadrature(3)
        with pytest.raises(DomainError):
            Quadrature(129)

    def test_quadrature_budget(self):
        with pytest.raises(SizeLimitError):
            quenched_expectation(ModelSpec.sk(5), 1.0, H, Quadrature(8))

    def test_gauss_hermite_symmetric_and_normalised(self):
        x, w = gauss_hermite(12)
        np.testing.assert_allclose(x, -x[::-1], atol=1e-14)
        np.testing.assert_allclose(w, w[::-1], rtol=1e-13)
        assert w.sum() == pytest.approx(1, abs=1e-15)
        assert w @ x**2 == pytest.approx(1, abs=1e-13)

    def test_streams_independent_of_order(self):
        a = sample_stream(5, 3).standard_normal(4)
        sample_stream(5, 2).standard_normal(4)
        np.testing.assert_array_equal(a, sample_stream(5, 3).standard_normal(4))
        assert not np.array_equal(a, sample_stream(5, 4).standard_normal(4))


class TestQuenchedExpectation:
    def test_beta0_c12(self):
        est = quenched_expectation(ModelSpec.sk(4), 0.0, C12, MonteCarlo(20, 1))
        assert abs(est.value) <= 1e-15

    def test_curie_weiss_exact(self):
        est = quenched_expectation(ModelSpec.curie_weiss(6), 0.8, SpinProduct((1,)), MonteCarlo(10, 0))
        assert abs(est.value) <= 1e-15 and est.std_error == 0.0

    def test_odd_integrand(self):
        est = quenched_expectation(SK2, 1.0, SpinProduct((1, 2)), Quadrature(16))
        assert abs(est.value) <= 1e-12
        assert est.std_error == 0.0

    @pytest.mark.parametrize("beta", [0.5, 1.0, 1.5])
    def test_energy_against_scalar_quadrature(self, beta):
        oracle = gaussian_integral(lambda J: sk2_thermal(beta, J, H))
        est = quenched_expectation(SK2, beta, H, Quadrature(128))
        assert est.value == pytest.approx(oracle, abs=1e-12)

    def test_beta_sequence_shares_draws(self):
        betas = [0.5, 1.0]
        ests = quenched_expectation(ModelSpec.sk(3), betas, H, MonteCarlo(50, 9))
        single = quenched_expectation(ModelSpec.sk(3), 1.0, H, MonteCarlo(50, 9))
        assert ests[1].value == pytest.approx(single.value, abs=1e-14)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 1.5])
    def test_monte_carlo_vs_quadrature(self, beta):
        exact = quenched_expectation(SK2, beta, H, Quadrature(128)).value
        est = quenched_expectation(SK2, beta, H, MonteCarlo(100_000, 4))
        assert abs(est.value - exact) <= 4 * est.std_error

    def test_std_error_is_sample_sd(self):
        model, mode = ModelSpec.sk(3), MonteCarlo(40, 2)
        table = disorder_table(model, 0.9, [Obs(H)], mode)
        per = table.values[:, 0, 0]
        est = quenched_expectation(model, 0.9, H, mode)
        assert est.std_error == pytest.approx(per.std(ddof=1) / math.sqrt(40), rel=1e-12)
        assert est.S_effective == 40

    def test_worker_count_invariance(self):
        model, mode = ModelSpec.sk(4), MonteCarlo(100, 17)
        a = quenched_expectation(model, [0.5, 1.2], parse_monomials("c12^2"), mode, workers=1)
        b = quenched_expectation(model, [0.5, 1.2], parse_monomials("c12^2"), mode, workers=3)
        assert [x.value for x in a] == [x.value for x in b]
        assert [x.std_error for x in a] == [x.std_error for x in b]


class TestPerturbedQuenched:
    def test_lambda_zero(self):
        model, mode = ModelSpec.sk(3), MonteCarlo(30, 1)
        assert perturbed_quenched(model, 0.8, H, 0.0, mode).value == pytest.approx(
            quenched_expectation(model, 0.8, H, mode).value, abs=1e-15
        )

    def test_constant(self):
        for lam in (-2.0, 0.5, 3.0):
            assert perturbed_quenched(ModelSpec.sk(3), 0.8, Constant(1.0), lam, MonteCarlo(30, 1)).value == pytest.approx(1.0, abs=1e-14)

    def test_sk2_against_scalar_quadrature(self):
        beta, lam = 1.0, 0.7
        tilt = lambda J, f: _tilted_pair(beta, J, lam, f)
        num = gaussian_integral(lambda J: tilt(J, H)[0])
        den = gaussian_integral(lambda J: tilt(J, H)[1])
        assert perturbed_quenched(SK2, beta, H, lam, Quadrature(128)).value == pytest.approx(num / den, abs=1e-11)

    def test_not_a_temperature_shift(self):
        """With disorder the tilt is not a pure temperature change."""
        model, beta, lam = ModelSpec.sk(4), 0.8, 0.5
        mode = Quadrature(6)
        tilted = perturbed_quenched(model, beta, H, lam, mode).value
        shifted = quenched_expectation(model, beta + lam / 4, H, mode).value
        assert abs(tilted - shifted) > 1e-3


def _tilted_pair(beta, J, lam, f):
    s = gibbs_state(SK2, DisorderRealization.for_model(SK2, [J]), beta)
    w = np.exp(-lam * s.h)
    return s.probs @ (w * s.h), s.probs @ w


class TestStochastic:
    def test_lambda_zero(self):
        model, mode = ModelSpec.sk(3), MonteCarlo(30, 1)
        assert stochastic_perturbed(model, 0.8, H, 0.0, mode).value == pytest.approx(
            quenched_expectation(model, 0.8, H, mode).value, abs=1e-15
        )

    def test_constant(self):
        assert stochastic_perturbed(ModelSpec.sk(3), 0.8, Constant(1.0), 0.4, MonteCarlo(30, 1)).value == pytest.approx(1.0)

    def test_negative_lambda(self):
        with pytest.raises(DomainError):
            stochastic_perturbed(SK2, 1.0, H, -0.1, Quadrature(8))

    def test_curie_weiss_rejected(self):
        with pytest.raises(DomainError):
            stochastic_perturbed(ModelSpec.curie_weiss(3), 1.0, H, 0.1, Quadrature(8))

    def test_shift_law_sk2(self):
        beta, lam = 1.0, 0.5
        shifted = math.sqrt(beta**2 + lam / 2)
        mode = Quadrature(128)
        for f in (C12, parse_monomials("c12^2")):
            lhs = stochastic_perturbed(SK2, beta, f, lam, mode).value
            rhs = quenched_expectation(SK2, shifted, f, mode).value
            assert abs(lhs - rhs) <= 1e-10

    def test_shift_law_monte_carlo(self):
        model, beta, lam = ModelSpec.sk(3), 0.8, 1.0
        shifted = math.sqrt(beta**2 + lam / 3)
        a = stochastic_perturbed(model, beta, C12, lam, MonteCarlo(4000, 1))
        b = quenched_expectation(model, shifted, C12, MonteCarlo(4000, 2))
        assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)


class TestDerivative:
    def test_constant(self):
        est = gs_derivative(ModelSpec.sk(3), 0.9, Constant(1.0), MonteCarlo(30, 0))
        assert est.value == pytest.approx(0, abs=1e-15)

    def test_energy_variance_nonnegative(self):
        for beta in (0.0, 0.7, 2.0):
            assert gs_derivative(ModelSpec.sk(3), beta, H, MonteCarlo(30, 0)).value >= 0

    @pytest.mark.parametrize("f", [H, EnergyPower(2)])
    def test_central_difference(self, f):
        model, beta, eps = ModelSpec.sk(3), 0.9, 1e-4
        mode = Quadrature(20)
        fd = (
            perturbed_quenched(model, beta, f, eps, mode).value
            - perturbed_quenched(model, beta, f, -eps, mode).value
        ) / (2 * eps)
        exact = -gs_derivative(model, beta, f, mode).value
        assert fd == pytest.approx(exact, rel=1e-6)


class TestDecomposition:
    def test_parts_sum(self):
        model, mode = ModelSpec.ea(2, 2), MonteCarlo(40, 3)
        for f in (H, SpinProduct((1, 2)), EnergyPower(2)):
            thermal, disorder = decomposition(model, 1.1, f, mode)
            total = gs_derivative(model, 1.1, f, mode)
            assert thermal.value + disorder.value == pytest.approx(total.value, abs=1e-12)

    def test_constant(self):
        thermal, disorder = decomposition(ModelSpec.sk(3), 1.0, Constant(1.0), MonteCarlo(20, 0))
        assert thermal.value == pytest.approx(0, abs=1e-15)
        assert disorder.value == pytest.approx(0, abs=1e-15)

    @pytest.mark.parametrize("N", [3, 4, 5])
    def test_beta_zero_closed_form(self, N):
        # uniform measure: Var(h) = sum_b J_b^2 / N^3, averaging to (N-1)/(2 N^2); omega_0(h) = 0
        thermal, disorder = decomposition(ModelSpec.sk(N), 0.0, H, MonteCarlo(4000, 5))
        assert abs(thermal.value - (N - 1) / (2 * N**2)) <= 4 * thermal.std_error
        assert disorder.value == pytest.approx(0, abs=1e-15)
