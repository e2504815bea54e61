"""Gibbs sampler, estimation modes and the cross-validation diagnostic."""

import math
import warnings

import numpy as np
import pytest
from scipy import stats

from genescreen import (
    DpConfig,
    EstimationMode,
    GibbsState,
    KernelDictionary,
    RunConfig,
    cross_validate_priors,
    kl_bernoulli,
    make_dataset,
    run_screen,
)
from genescreen import engine
from genescreen.data import build_gene_index
from genescreen.errors import DataError, InsufficientHoldout
from genescreen.simulate import ScenarioConfig, generate_kernel_scenario, generate_scenario


def _state(gene_prob, m):
    return GibbsState(np.zeros(m, dtype=bool), np.asarray(gene_prob, dtype=float))


class TestNullIndicators:
    def test_certain_prior(self, rng):
        st = _state([1.0, 1.0], 6)
        engine.sample_null_indicators(st, np.full(6, -20.0), np.array([0, 0, 0, 1, 1, 1]), rng)
        assert st.null_indicator.all()

    def test_fair_coin(self, rng):
        n = 10_000
        st = _state([0.5], n)
        engine.sample_null_indicators(st, np.zeros(n), np.zeros(n, dtype=int), rng)
        assert abs(st.null_indicator.mean() - 0.5) < 3 * 0.5 / math.sqrt(n)

    def test_hand_probability(self, rng):
        n = 10_000
        st = _state([0.9], 1)
        hits = 0
        for _ in range(n):
            cond = engine.sample_null_indicators(st, np.array([math.log(1 / 3)]),
                                                 np.zeros(1, dtype=int), rng)
            hits += st.null_indicator[0]
        assert cond[0] == pytest.approx(0.75)
        assert abs(hits / n - 0.75) < 4 * math.sqrt(0.75 * 0.25 / n)


class TestGeneProbs:
    def _draws(self, mode, indicators, genes, rng, n=20000):
        gi = build_gene_index(genes)
        out = np.empty((n, gi.n_genes))
        st = GibbsState(np.asarray(indicators, dtype=bool), np.zeros(gi.n_genes))
        for i in range(n):
            out[i] = engine.update_gene_probs(st, gi, mode, DpConfig(), rng)
        return out

    def test_simple(self, rng):
        p = self._draws("simple", [0, 1, 1], ["A", "A", "B"], rng, n=10)
        assert np.all(p == 0.5)

    def test_joint_conjugacy(self, rng):
        p = self._draws("joint", np.ones(10), ["A"] * 4 + ["B"] * 6, rng)
        assert np.all(p[:, 0] == p[:, 1])
        assert stats.kstest(p[:, 0], stats.beta(11, 1).cdf).pvalue > 1e-3

    def test_separate_conjugacy(self, rng):
        p = self._draws("separate", [1, 1, 0, 0, 0], ["A"] * 4 + ["B"], rng)
        assert stats.kstest(p[:, 0], stats.beta(3, 3).cdf).pvalue > 1e-3
        assert stats.kstest(p[:, 1], stats.beta(1, 2).cdf).pvalue > 1e-3

    def test_mode_parse(self):
        assert EstimationMode.parse("Hierarchical") is EstimationMode.HIERARCHICAL
        with pytest.raises(ValueError):
            EstimationMode.parse("bogus")


def _bimodal(seed=3, genes=60):
    return generate_scenario(ScenarioConfig(kind="bimodal", n_genes=genes, seed=seed))


class TestRunScreen:
    def test_bounds_and_shapes(self):
        lab = _bimodal()
        res = run_screen(lab.dataset, RunConfig(n_sweeps=300, n_burnin=50, seed=1))
        assert res.post_null.shape == (lab.dataset.n_markers,)
        for arr in (res.post_null, res.post_null_rb, res.gene_prob):
            assert np.all((arr >= 0) & (arr <= 1))
        assert len(res.chains) == 2

    def test_reproducible(self):
        data = _bimodal().dataset
        cfg = RunConfig(n_sweeps=200, n_burnin=20, seed=11)
        a, b = run_screen(data, cfg), run_screen(data, cfg)
        assert np.array_equal(a.post_null, b.post_null)
        assert np.array_equal(a.gene_prob, b.gene_prob)
        c = run_screen(data, RunConfig(n_sweeps=200, n_burnin=20, seed=12))
        assert not np.array_equal(a.gene_prob, c.gene_prob)

    @pytest.mark.parametrize("mode", list(EstimationMode))
    def test_modes_separate_signal(self, mode):
        lab = _bimodal(genes=80)
        res = run_screen(lab.dataset, RunConfig(n_sweeps=400, n_burnin=100, mode=mode, seed=5))
        truth = lab.truth_null
        # every mode should rank truly associated markers below null ones on average
        assert res.post_null[~truth].mean() < res.post_null[truth].mean()

    def test_simple_mode_prior(self):
        res = run_screen(_bimodal().dataset, RunConfig(n_sweeps=50, n_burnin=10, mode="simple"))
        assert np.all(res.gene_prob == 0.5)

    def test_mode_nesting_single_gene(self):
        lab = generate_scenario(ScenarioConfig(kind="beta", n_genes=1, markers_low=15,
                                               markers_high=15, seed=2))
        traces = {}
        for mode in ("separate", "joint"):
            res = run_screen(lab.dataset, RunConfig(n_sweeps=10_000, n_burnin=0, n_chains=1,
                                                    mode=mode, seed=9, trace=True))
            traces[mode] = res.traces[0]["gene_prob"][:, 0]
        assert stats.ks_2samp(traces["separate"], traces["joint"]).pvalue > 1e-3

    def test_trace_shapes(self):
        data = _bimodal(genes=10).dataset
        res = run_screen(data, RunConfig(n_sweeps=30, n_burnin=5, trace=True))
        assert res.traces[0]["gene_prob"].shape == (30, 10)
        assert res.traces[1]["null_indicator"].shape == (30, data.n_markers)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RunConfig(n_sweeps=10, n_burnin=10)
        with pytest.raises(ValueError):
            RunConfig(n_chains=0)

    def test_dictionary_required_for_continuous(self, rng):
        ds = make_dataset(rng.random((3, 4)), None, ["a", "a", "b"], [0, 0, 1, 1],
                          kind="continuous")
        with pytest.raises(DataError):
            run_screen(ds, RunConfig(n_sweeps=5, n_burnin=1))
        with pytest.raises(DataError):
            run_screen(_bimodal().dataset, RunConfig(n_sweeps=5, n_burnin=1),
                       KernelDictionary([0.5], [0.1], [1.0]))

    def test_truncation_warning(self):
        data = _bimodal(genes=40).dataset
        with pytest.warns(engine.TruncationWarning):
            run_screen(data, RunConfig(n_sweeps=60, n_burnin=10, n_chains=1,
                                       dp=DpConfig(alpha=50.0, truncation=3)))


def _kernel_dictionary(k=4, sigma=0.08):
    return KernelDictionary((np.arange(k) + 0.5) / k, np.full(k, sigma), np.full(k, 1.0 / k))


def _kernel_data(genes=30, seed=4):
    cfg = ScenarioConfig(kind="bimodal", n_genes=genes, n0=12, n1=10, seed=seed)
    return generate_kernel_scenario(cfg, _kernel_dictionary(), np.random.default_rng(seed))


class TestKernelModel:
    def test_bookkeeping_and_null_constraint(self):
        lab = _kernel_data()
        data = lab.dataset
        d = _kernel_dictionary()
        cfg = RunConfig(seed=3, block_size=37)
        model = engine._KernelModel(data, d, cfg.seed, cfg.block_size)
        rng = np.random.default_rng(0)
        st = GibbsState(np.zeros(data.n_markers, bool),
                        np.full(data.gene_index.n_genes, 0.5))
        model.init_chain(st, rng)
        n0, n1 = data.group_sizes
        for sweep in range(5):
            st.sweep = sweep
            model.marker_step(st, data.gene_index.gene_of_row, rng, 0, None)
            assert np.all(st.counts0.sum(axis=1) == n0)
            assert np.all(st.counts1.sum(axis=1) == n1)
            null = st.null_indicator
            assert np.array_equal(st.weights0[null], st.weights1[null])

    @pytest.mark.parametrize("threads", [2, 8])
    def test_thread_count_invariance(self, threads):
        data = _kernel_data().dataset
        d = _kernel_dictionary()
        base = RunConfig(n_sweeps=40, n_burnin=10, seed=21, block_size=50, threads=1)
        a = run_screen(data, base, d)
        b = run_screen(data, RunConfig(n_sweeps=40, n_burnin=10, seed=21, block_size=50,
                                       threads=threads), d)
        assert np.array_equal(a.post_null, b.post_null)
        assert np.array_equal(a.post_null_rb, b.post_null_rb)
        assert np.array_equal(a.gene_prob, b.gene_prob)

    def test_detects_signal(self):
        lab = _kernel_data(genes=40)
        res = run_screen(lab.dataset, RunConfig(n_sweeps=300, n_burnin=60, seed=2),
                         _kernel_dictionary())
        truth = lab.truth_null
        assert res.post_null[~truth].mean() < 0.5 < res.post_null[truth].mean()


class TestKL:
    def test_identity(self):
        q = np.linspace(0, 1, 11)
        np.testing.assert_allclose(kl_bernoulli(q, q), 0.0, atol=1e-12)
        assert kl_bernoulli(0.5, 0.5) == 0.0

    def test_hand_value(self):
        expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
        assert kl_bernoulli(0.9, 0.5) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.3681, abs=1e-4)

    def test_non_negative(self, rng):
        q, p = rng.random(1000), rng.random(1000)
        assert np.all(kl_bernoulli(q, p) >= 0)

    def test_extremes_are_finite(self):
        assert np.isfinite(kl_bernoulli(1.0, 0.0))


class TestCrossValidation:
    def test_zero_holdout(self):
        data = _bimodal(genes=10).dataset
        with pytest.raises(InsufficientHoldout):
            cross_validate_priors(data, RunConfig(n_sweeps=10, n_burnin=2), 0.0, rng=1)
        with pytest.raises(InsufficientHoldout):
            cross_validate_priors(data, RunConfig(n_sweeps=10, n_burnin=2), 1.0, rng=1)

    def test_simple_mode_is_divergence_from_half(self):
        data = _bimodal(genes=30).dataset
        cfg = RunConfig(n_sweeps=120, n_burnin=20, seed=4)
        kl = cross_validate_priors(data, cfg, 0.1, rng=np.random.default_rng(8),
                                   modes=["simple"])
        # recompute with the same held-out set
        held = np.sort(np.random.default_rng(8).choice(
            data.n_markers, size=int(round(0.1 * data.n_markers)), replace=False))
        full = run_screen(data, RunConfig(n_sweeps=120, n_burnin=20, seed=4, mode="simple"))
        assert kl["simple"] == pytest.approx(np.mean(kl_bernoulli(full.post_null[held], 0.5)),
                                             rel=1e-12)

    def test_direction(self):
        data = _bimodal(genes=20).dataset
        cfg = RunConfig(n_sweeps=60, n_burnin=10, n_chains=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = cross_validate_priors(data, cfg, 0.2, rng=3, modes=["joint"])
            b = cross_validate_priors(data, cfg, 0.2, rng=3, modes=["joint"],
                                      direction="prior")
        assert a["joint"] >= 0 and b["joint"] >= 0
        assert a["joint"] != b["joint"]
        with pytest.raises(ValueError):
            cross_validate_priors(data, cfg, 0.2, rng=3, direction="sideways")
