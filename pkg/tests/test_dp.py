"""Dirichlet-process prior on gene-level null probabilities."""

import numpy as np
import pytest

from genescreen import DpConfig, GeneNullCounts, prior_expected_associated
from genescreen import dp as dpmod
from genescreen.errors import NumericalUnderflow

import oracles


def _state(theta, pi, clusters):
    theta = np.asarray(theta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    v = np.ones_like(pi)
    rem = 1.0
    for h in range(pi.size - 1):
        v[h] = pi[h] / rem
        rem -= pi[h]
    return dpmod.DpPriorState(theta, pi, v, np.asarray(clusters))


class TestConfig:
    def test_defaults(self):
        cfg = DpConfig()
        assert (cfg.alpha, cfg.a, cfg.b, cfg.truncation) == (1.0, 1.0, 1.0, 50)

    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"a": -1}, {"b": 0}, {"truncation": 0},
                                    {"truncation": 2.5}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DpConfig(**kw)


class TestAllocations:
    def test_single_cluster(self, rng):
        state = _state([0.3], [1.0], np.zeros(5, dtype=int))
        counts = GeneNullCounts([3, 1, 2, 5, 4], [1, 0, 2, 5, 0])
        dpmod.sample_allocations(state, counts, rng)
        assert np.all(state.cluster_of_gene == 0)

    def test_hand_probability(self, rng):
        # 0.5 * 0.9^2 / (0.5 * 0.9^2 + 0.5 * 0.1^2) = 0.405 / 0.410
        state = _state([0.9, 0.1], [0.5, 0.5], np.zeros(1, dtype=int))
        counts = GeneNullCounts([2], [2])
        log_w = dpmod.allocation_log_weights(state, counts)
        prob = np.exp(log_w - np.logaddexp.reduce(log_w, axis=1, keepdims=True))
        assert prob[0, 0] == pytest.approx(0.405 / 0.410, rel=1e-14)

        n = 100_000
        big = GeneNullCounts(np.full(n, 2), np.full(n, 2))
        state = _state([0.9, 0.1], [0.5, 0.5], np.zeros(n, dtype=int))
        dpmod.sample_allocations(state, big, rng)
        freq = np.mean(state.cluster_of_gene == 0)
        p = 0.405 / 0.410
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n)

    def test_zero_weight_cluster_never_chosen(self, rng):
        state = _state([0.5, 0.5, 0.5], [0.5, 0.0, 0.5], np.zeros(1000, dtype=int))
        counts = GeneNullCounts(np.full(1000, 3), np.full(1000, 1))
        dpmod.sample_allocations(state, counts, rng)
        assert not np.any(state.cluster_of_gene == 1)

    def test_degenerate_atoms_raise(self):
        log_w = np.full((2, 3), -np.inf)
        with pytest.raises(NumericalUnderflow):
            dpmod.allocate_from_uniforms(log_w, np.array([0.1, 0.2]))

    def test_permutation_equivariance(self, rng):
        g, h = 40, 6
        state = _state(rng.uniform(0.05, 0.95, h), rng.dirichlet(np.ones(h)),
                       np.zeros(g, dtype=int))
        sizes = rng.integers(1, 10, size=g)
        counts = GeneNullCounts(sizes, rng.integers(0, sizes + 1))
        u = rng.random(g)
        base = dpmod.allocate_from_uniforms(dpmod.allocation_log_weights(state, counts), u)

        perm = rng.permutation(g)
        permuted = GeneNullCounts(counts.sizes[perm], counts.nulls[perm])
        out = dpmod.allocate_from_uniforms(dpmod.allocation_log_weights(state, permuted),
                                           u[perm])
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(g)
        np.testing.assert_array_equal(out[inverse], base)


class TestSticks:
    def test_stick_identity(self):
        np.testing.assert_allclose(dpmod.sticks_to_weights([0.5, 0.5, 1.0]),
                                   [0.5, 0.25, 0.25], rtol=0, atol=1e-15)

    def test_weights_sum_to_one(self, rng):
        state = dpmod.init_state(DpConfig(truncation=50), 30, rng)
        for _ in range(20):
            dpmod.sample_stick_weights(state, 1.0, rng)
            assert abs(state.pi.sum() - 1.0) < 1e-12
            assert state.v[-1] == 1.0

    def test_no_genes_gives_prior(self, rng):
        alpha = 2.0
        draws = []
        for _ in range(4000):
            state = _state([0.5] * 3, [1 / 3] * 3, np.zeros(0, dtype=int))
            v, _ = dpmod.sample_stick_weights(state, alpha, rng)
            draws.append(v[0])
        draws = np.array(draws)
        mean = 1 / (1 + alpha)
        sd = np.sqrt(alpha / ((1 + alpha) ** 2 * (2 + alpha)))
        assert abs(draws.mean() - mean) < 4 * sd / np.sqrt(draws.size)

    def test_all_in_first_cluster(self, rng):
        g, alpha = 9, 1.0
        draws = np.array([
            dpmod.sample_stick_weights(_state([0.5] * 4, [0.25] * 4, np.zeros(g, dtype=int)),
                                       alpha, rng)[0][:2]
            for _ in range(4000)])
        # V_1 ~ Beta(1 + G, alpha); later sticks see no genes so revert to Beta(1, alpha)
        a, b = 1 + g, alpha
        mean = a / (a + b)
        sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        assert abs(draws[:, 0].mean() - mean) < 4 * sd / np.sqrt(len(draws))
        assert abs(draws[:, 1].mean() - 0.5) < 4 * np.sqrt(1 / 12) / np.sqrt(len(draws))


class TestAtoms:
    def _draws(self, rng, sizes, nulls, clusters, n=20000, cfg=DpConfig(truncation=2)):
        counts = GeneNullCounts(sizes, nulls)
        out = np.empty((n, 2))
        for i in range(n):
            state = _state([0.5, 0.5], [0.5, 0.5], np.asarray(clusters))
            dpmod.sample_atoms(state, counts, cfg, rng)
            out[i] = state.theta
        return out

    def test_conjugate_update(self, rng):
        # genes in cluster 0 hold 10 markers, 7 of them null -> Beta(8, 4)
        theta = self._draws(rng, [6, 4], [5, 2], [0, 0])
        assert abs(theta[:, 0].mean() - 8 / 12) < 4 * np.sqrt(8 * 4 / (144 * 13)) / np.sqrt(20000)
        # empty cluster 1 stays at the base Beta(1, 1)
        assert abs(theta[:, 1].mean() - 0.5) < 4 * np.sqrt(1 / 12) / np.sqrt(20000)

    def test_all_null_cluster(self, rng):
        theta = self._draws(rng, [20], [20], [0])
        var = 21 / (22 ** 2 * 23)
        assert abs(theta[:, 0].mean() - 21 / 22) < 4 * np.sqrt(var / 20000)

    def test_gene_probs_follow_atoms(self, rng):
        cfg = DpConfig()
        state = dpmod.init_state(cfg, 25, rng)
        sizes = rng.integers(1, 8, size=25)
        counts = GeneNullCounts(sizes, rng.integers(0, sizes + 1))
        for _ in range(30):
            p = dpmod.dp_update(state, counts, cfg, rng)
            assert np.array_equal(p, state.theta[state.cluster_of_gene])
            assert np.all((state.theta > 0) & (state.theta < 1))
            assert abs(state.pi.sum() - 1) < 1e-12

    def test_atoms_clamped(self, rng):
        cfg = DpConfig(a=1e-3, b=1e-3, truncation=3)
        state = _state([0.5] * 3, [1 / 3] * 3, np.zeros(1, dtype=int))
        for _ in range(200):
            dpmod.sample_atoms(state, GeneNullCounts([0], [0]), cfg, rng)
            assert np.all(state.theta >= dpmod.ATOM_CLAMP)
            assert np.all(state.theta <= 1 - dpmod.ATOM_CLAMP)


class TestExpectedAssociated:
    def test_uniform_base(self):
        assert prior_expected_associated(DpConfig(a=1, b=1), 100) == 50

    def test_small_lambda_reading(self):
        # base measure read as a prior on the association probability
        assert prior_expected_associated(DpConfig(a=1, b=999), 1000,
                                         base_is_null=False) == pytest.approx(1.0)
        lam, m = 0.01, 10_000
        val = prior_expected_associated(DpConfig(a=1, b=lam * m), m, base_is_null=False)
        assert val == pytest.approx(1 / lam, rel=1e-2)

    def test_null_convention(self):
        assert prior_expected_associated(DpConfig(a=1, b=999), 1000) == pytest.approx(999.0)


@pytest.mark.slow
def test_tiny_instance_matches_integration(rng):
    """G=2 single-marker genes, H=2, fixed indicators: Gibbs vs quadrature."""
    cfg = DpConfig(alpha=1.0, a=1.0, b=1.0, truncation=2)
    counts = GeneNullCounts([1, 1], [1, 0])
    state = dpmod.init_state(cfg, 2, rng)
    n = 100_000
    p = np.empty((n, 2))
    for i in range(n):
        p[i] = dpmod.dp_update(state, counts, cfg, rng)
    burn = 1000
    p = p[burn:]
    ref = oracles.tiny_dp_moments((1, 0))
    checks = {"p1": p[:, 0], "p2": p[:, 1], "p1p2": p[:, 0] * p[:, 1],
              "same": (p[:, 0] == p[:, 1]).astype(float)}
    for key, series in checks.items():
        se = oracles.batch_means_se(series)
        assert abs(series.mean() - ref[key]) < 3 * se + 1e-12, key


def test_small_alpha_single_cluster(rng):
    """alpha -> 0: after burn-in all genes share one cluster in > 99% of sweeps."""
    cfg = DpConfig(alpha=1e-6)
    sizes = rng.integers(2, 21, size=60)
    counts = GeneNullCounts(sizes, rng.binomial(sizes, 0.7))
    state = dpmod.init_state(cfg, 60, rng)
    shared = []
    for sweep in range(600):
        dpmod.dp_update(state, counts, cfg, rng)
        if sweep >= 100:
            shared.append(np.unique(state.cluster_of_gene).size == 1)
    assert np.mean(shared) > 0.99
