import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glassid.errors import DimensionError, SizeLimitError, UnsupportedModelError
from glassid.spin_core import (
    DisorderRealization,
    ModelSpec,
    SpinConfig,
    all_energies,
    config_matrix,
    covariance,
    covariance_matrix,
    energy,
    energy_per_particle,
    enumerate_configs,
    overlap,
    read_disorder,
    sample_disorder,
    write_disorder,
)


def cfg(*s):
    return SpinConfig(tuple(s))


def brute_energy(model, J, sigma):
    """Energy from the model definitions, written independently of the library."""
    s = sigma
    N = len(s)
    if model.kind == "CW":
        return -N * (sum(s) / N) ** 2
    if model.kind == "SK":
        pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
        return -sum(Jb * s[i] * s[j] for Jb, (i, j) in zip(J, pairs)) / math.sqrt(N)
    L, d = model.L, model.d
    bonds = []
    for site in range(N):
        coords = [(site // L**a) % L for a in range(d)]
        for a in range(d):
            nb = list(coords)
            nb[a] = (nb[a] + 1) % L
            bonds.append((site, sum(c * L**b for b, c in enumerate(nb))))
    return -sum(Jb * s[i] * s[j] for Jb, (i, j) in zip(J, bonds))


class TestSpinConfig:
    def test_rejects_non_spin_values(self):
        with pytest.raises(ValueError):
            SpinConfig((1, 0, -1))

    def test_index_round_trip(self):
        for k in range(16):
            assert SpinConfig.from_index(k, 4).index() == k


class TestEnumeration:
    def test_n1(self):
        assert list(enumerate_configs(1)) == [cfg(-1), cfg(1)]

    def test_n2_bit_order(self):
        assert list(enumerate_configs(2)) == [cfg(-1, -1), cfg(1, -1), cfg(-1, 1), cfg(1, 1)]

    def test_n20_length(self):
        seq = enumerate_configs(20)
        assert len(seq) == 1_048_576
        assert seq[-1] == SpinConfig((1,) * 20)

    @pytest.mark.parametrize("N", [0, 25])
    def test_size_limit(self, N):
        with pytest.raises(SizeLimitError):
            enumerate_configs(N)

    def test_matrix_rows_are_configs(self):
        M = config_matrix(3)
        assert [tuple(r) for r in M] == [c.spins for c in enumerate_configs(3)]


class TestModels:
    def test_bond_counts(self):
        assert ModelSpec.sk(5).n_bonds == 10
        assert ModelSpec.ea(3, 2).n_bonds == 18
        assert ModelSpec.ea(4, 1).n_bonds == 4
        assert ModelSpec.curie_weiss(7).n_bonds == 0

    @pytest.mark.parametrize("bad", [lambda: ModelSpec.sk(1), lambda: ModelSpec.ea(1), lambda: ModelSpec.curie_weiss(0)])
    def test_invalid_sizes(self, bad):
        with pytest.raises(ValueError):
            bad()

    def test_sk_ordering_is_lexicographic(self):
        assert ModelSpec.sk(4).bonds == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class TestEnergy:
    def test_sk_n2(self):
        m = ModelSpec.sk(2)
        d = DisorderRealization.for_model(m, [1.0])
        assert energy(m, d, cfg(1, 1)) == pytest.approx(-1 / math.sqrt(2), abs=1e-15)
        assert energy_per_particle(m, d, cfg(1, 1)) == pytest.approx(-0.35355339, abs=1e-8)

    def test_curie_weiss_all_up(self):
        m = ModelSpec.curie_weiss(4)
        assert energy(m, None, cfg(1, 1, 1, 1)) == -4
        assert energy_per_particle(m, None, cfg(1, 1, 1, 1)) == -1

    def test_ea_ring(self):
        m = ModelSpec.ea(3, 1, periodic=True)
        d = DisorderRealization.for_model(m, np.ones(3))
        assert energy(m, d, cfg(1, 1, 1)) == -3

    def test_zero_energy(self):
        m = ModelSpec.curie_weiss(2)
        assert energy_per_particle(m, None, cfg(1, -1)) == 0

    @pytest.mark.parametrize("model", [ModelSpec.sk(5), ModelSpec.ea(3, 1), ModelSpec.ea(2, 2), ModelSpec.ea(3, 2), ModelSpec.curie_weiss(5)])
    def test_all_energies_match_definition(self, model, rng):
        J = rng.standard_normal(model.n_bonds)
        H = all_energies(model, J)
        for k, sigma in enumerate(enumerate_configs(model.N)):
            assert H[k] == pytest.approx(brute_energy(model, J, sigma.spins), abs=1e-12)

    def test_linear_in_couplings(self, rng):
        m = ModelSpec.sk(5)
        J1, J2 = rng.standard_normal((2, m.n_bonds))
        a, b = 0.7, -1.9
        sigma = SpinConfig.from_index(13, 5)
        lhs = energy(m, DisorderRealization.for_model(m, a * J1 + b * J2), sigma)
        rhs = a * energy(m, DisorderRealization.for_model(m, J1), sigma) + b * energy(
            m, DisorderRealization.for_model(m, J2), sigma
        )
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_mismatched_disorder(self):
        m = ModelSpec.sk(3)
        with pytest.raises(DimensionError):
            energy(m, DisorderRealization.for_model(ModelSpec.sk(4), np.zeros(6)), cfg(1, 1, 1))
        with pytest.raises(DimensionError):
            DisorderRealization.for_model(m, np.zeros(2))
        with pytest.raises(DimensionError):
            energy(m, sample_disorder(m, np.random.default_rng(0)), cfg(1, 1))


class TestOverlapCovariance:
    def test_overlap_examples(self):
        s = cfg(1, -1, 1, 1)
        assert overlap(s, s) == 1
        assert overlap(s, cfg(-1, 1, -1, -1)) == -1
        assert overlap(s, cfg(1, -1, 1, -1)) == 0.5

    def test_sk_examples(self):
        m = ModelSpec.sk(2)
        assert covariance(m, cfg(1, -1), cfg(1, -1)) == 0.25
        assert covariance(m, cfg(1, 1), cfg(1, -1)) == -0.25

    def test_ea_diagonal(self):
        m = ModelSpec.ea(4, 1)
        s = cfg(1, -1, -1, 1)
        assert covariance(m, s, s) == 1

    def test_curie_weiss_unsupported(self):
        with pytest.raises(UnsupportedModelError):
            covariance(ModelSpec.curie_weiss(2), cfg(1, 1), cfg(1, 1))
        with pytest.raises(UnsupportedModelError):
            sample_disorder(ModelSpec.curie_weiss(2), np.random.default_rng(0))

    @pytest.mark.parametrize("model", [ModelSpec.sk(6), ModelSpec.ea(3, 2), ModelSpec.ea(2, 2)])
    def test_matrix_symmetric_and_matches_pointwise(self, model):
        C = covariance_matrix(model)
        np.testing.assert_array_equal(C, C.T)
        configs = enumerate_configs(model.N)
        for a, b in [(0, 1), (3, 7), (5, 5), (len(configs) - 1, 2)]:
            assert C[a, b] == pytest.approx(covariance(model, configs[a], configs[b]), abs=1e-15)

    def test_sk_diagonal(self):
        for N in range(2, 9):
            C = covariance_matrix(ModelSpec.sk(N))
            np.testing.assert_allclose(np.diag(C), 0.5 - 1 / (2 * N), atol=1e-15)

    @pytest.mark.parametrize("model", [ModelSpec.sk(5), ModelSpec.ea(2, 2)])
    def test_empirical_covariance(self, model):
        """(1/M) sum H(s)H(t)/N over sampled disorder approaches c(s, t)."""
        rng = np.random.default_rng(11)
        M = 100_000
        J = rng.standard_normal((M, model.n_bonds))
        H = all_energies(model, J)
        C = covariance_matrix(model)
        for a, b in [(0, 0), (1, 6), (3, 12), (7, 9)]:
            x = H[:, a] * H[:, b] / model.N
            assert abs(x.mean() - C[a, b]) <= 5 * x.std(ddof=1) / math.sqrt(M)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 7), st.data())
    def test_sk_bounded_by_half(self, N, data):
        a = data.draw(st.integers(0, 2**N - 1))
        b = data.draw(st.integers(0, 2**N - 1))
        m = ModelSpec.sk(N)
        c = covariance(m, SpinConfig.from_index(a, N), SpinConfig.from_index(b, N))
        assert -0.5 <= c <= 0.5
        assert c == covariance(m, SpinConfig.from_index(b, N), SpinConfig.from_index(a, N))


class TestDisorder:
    def test_deterministic(self):
        m = ModelSpec.sk(4)
        a = sample_disorder(m, np.random.default_rng(5))
        b = sample_disorder(m, np.random.default_rng(5))
        assert a.couplings.shape == (6,)
        np.testing.assert_array_equal(a.couplings, b.couplings)

    def test_mean_clt(self):
        m = ModelSpec.sk(2)
        rng = np.random.default_rng(99)
        draws = np.concatenate([sample_disorder(m, rng).couplings for _ in range(1000)])
        big = rng.standard_normal(10**6)
        assert abs(big.mean()) < 4e-3
        assert abs(draws.mean()) < 4 / math.sqrt(draws.size)

    def test_file_round_trip(self, tmp_path):
        m = ModelSpec.ea(3, 2)
        d = sample_disorder(m, np.random.default_rng(3), seed=3)
        path = tmp_path / "d.txt"
        write_disorder(path, m, d)
        lines = path.read_text().splitlines()
        assert lines[0] == "model=EA N=9 B=18 seed=3"
        back = read_disorder(path, m)
        np.testing.assert_array_equal(back.couplings, d.couplings)
        assert back.seed == 3

    def test_file_wrong_model(self, tmp_path):
        m = ModelSpec.sk(3)
        path = tmp_path / "d.txt"
        write_disorder(path, m, sample_disorder(m, np.random.default_rng(0)))
        with pytest.raises(DimensionError):
            read_disorder(path, ModelSpec.sk(4))
