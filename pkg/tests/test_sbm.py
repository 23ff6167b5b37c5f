import numpy as np
import pytest

from sbm_miss import (
    CovariateSet,
    InputError,
    SbmParams,
    VariationalState,
    ari,
    expected_loglik_sbm,
    logistic,
    predict_probabilities,
    sample_network,
    spectral_init,
)

from util import adjacency_from_edges, planted_params


def hard_state(labels, q):
    tau = np.zeros((len(labels), q))
    tau[np.arange(len(labels)), labels] = 1.0
    return VariationalState(tau=tau)


def counting_loglik(adj, labels, alpha, pi):
    """Independent complete-data log-likelihood oracle by direct counting."""
    total = sum(np.log(alpha[z]) for z in labels)
    for i, j in adj.dyads():
        y = adj.entry(i, j)
        p = pi[labels[i], labels[j]]
        total += np.log(p) if y else np.log(1.0 - p)
    return total


class TestSampleNetwork:
    def test_certain_edges_give_complete_graph(self):
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[1.0]]))
        adj, _ = sample_network(params, 8, rng_seed=1)
        assert all(adj.entry(i, j) == 1 for i, j in adj.dyads())

    def test_zero_edges_give_empty_graph(self):
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[0.0]]))
        adj, _ = sample_network(params, 8, rng_seed=1)
        assert all(adj.entry(i, j) == 0 for i, j in adj.dyads())

    def test_block_frequencies_within_3se(self):
        params = planted_params(2, 0.9, 0.1)
        adj, draw = sample_network(params, 200, rng_seed=2)
        z = draw.labels
        within = [adj.entry(i, j) for i, j in adj.dyads() if z[i] == z[j]]
        between = [adj.entry(i, j) for i, j in adj.dyads() if z[i] != z[j]]
        for sample, p in ((within, 0.9), (between, 0.1)):
            freq = np.mean(sample)
            se = np.sqrt(p * (1 - p) / len(sample))
            assert abs(freq - p) <= 3 * se

    def test_reproducible_bit_exact(self):
        params = planted_params(3, 0.5, 0.05)
        a1, d1 = sample_network(params, 50, rng_seed=7)
        a2, d2 = sample_network(params, 50, rng_seed=7)
        assert a1 == a2
        np.testing.assert_array_equal(d1.labels, d2.labels)

    def test_single_block_edge_count_binomial(self):
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[0.3]]))
        adj, _ = sample_network(params, 60, rng_seed=3)
        count = sum(adj.entry(i, j) for i, j in adj.dyads())
        mean = adj.n_dyads * 0.3
        sd = np.sqrt(adj.n_dyads * 0.3 * 0.7)
        assert abs(count - mean) <= 4 * sd

    def test_undirected_symmetry_and_no_self_loops(self):
        adj, _ = sample_network(planted_params(2, 0.5, 0.2), 20, rng_seed=4)
        m = adj.matrix
        assert np.all(np.isnan(np.diag(m)))
        off = ~np.eye(20, dtype=bool)
        np.testing.assert_array_equal(m[off], m.T[off])

    def test_directed_generation(self):
        params = planted_params(2, 0.8, 0.1, directed=True)
        adj, _ = sample_network(params, 40, rng_seed=5)
        assert adj.directed
        m = adj.matrix
        assert np.nansum(np.abs(m - m.T)) > 0  # orientations drawn independently

    def test_covariate_variant_rates(self):
        x = (np.arange(200) % 2).astype(float)
        cov = CovariateSet.from_nodal([x])
        gamma = np.array([[0.5]])
        params = SbmParams(alpha=np.array([1.0]), gamma=gamma, beta=np.array([2.0]))
        adj, _ = sample_network(params, 200, covariates=cov, rng_seed=6)
        sim = -np.abs(x[:, None] - x[None, :])
        for value in (0.0, -1.0):
            stratum = np.triu(sim == value, 1)
            rate = logistic(0.5 + 2.0 * value)
            freq = adj.filled()[stratum].mean()
            se = np.sqrt(rate * (1 - rate) / stratum.sum())
            assert abs(freq - rate) <= 3 * se


class TestExpectedLoglik:
    def test_single_block_fully_observed(self):
        adj, _ = sample_network(SbmParams(alpha=np.array([1.0]), pi=np.array([[0.4]])), 12, rng_seed=8)
        edges = sum(adj.entry(i, j) for i, j in adj.dyads())
        p = 0.37
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[p]]))
        state = hard_state(np.zeros(12, dtype=int), 1)
        expected = edges * np.log(p) + (adj.n_dyads - edges) * np.log(1 - p)
        assert expected_loglik_sbm(params, adj, state) == pytest.approx(expected, abs=1e-9)

    def test_hard_tau_matches_counting_oracle(self):
        adj, draw = sample_network(planted_params(3, 0.7, 0.1), 30, rng_seed=9)
        z = draw.labels
        # empirical block frequencies as parameters
        counts = np.zeros((3, 3))
        totals = np.zeros((3, 3))
        for i, j in adj.dyads():
            counts[z[i], z[j]] += adj.entry(i, j)
            totals[z[i], z[j]] += 1
        counts, totals = counts + counts.T, totals + totals.T
        pi = np.clip(counts / np.maximum(totals, 1), 1e-6, 1 - 1e-6)
        alpha = np.bincount(z, minlength=3) / 30
        alpha = np.clip(alpha, 1e-9, None)
        alpha = alpha / alpha.sum()
        params = SbmParams(alpha=alpha, pi=pi)
        value = expected_loglik_sbm(params, adj, hard_state(z, 3))
        oracle = counting_loglik(adj, z, alpha, pi)
        assert value == pytest.approx(oracle, abs=1e-8)

    def test_single_block_mnar_with_nu_equal_pi(self):
        adj, _ = sample_network(SbmParams(alpha=np.array([1.0]), pi=np.array([[0.5]])), 14, rng_seed=10)
        from sbm_miss import SamplingDesign, observe_network

        observed = observe_network(adj, SamplingDesign("dyad", 0.7), rng_seed=11)
        p = 0.42
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[p]]))
        nu = np.full(observed.n_missing, p)
        state = VariationalState(tau=np.ones((14, 1)), nu=nu)
        edges = sum(observed.entry(i, j) for i, j in observed.dyads() if observed.entry(i, j) is not None)
        observed_dyads = observed.n_observed
        non_edges = observed_dyads - edges
        miss = observed.n_missing
        expected = (edges * np.log(p) + non_edges * np.log(1 - p)
                    + miss * (p * np.log(p) + (1 - p) * np.log(1 - p)))
        assert expected_loglik_sbm(params, observed, state) == pytest.approx(expected, abs=1e-9)

    def test_label_permutation_invariance(self):
        adj, draw = sample_network(planted_params(3, 0.6, 0.1), 25, rng_seed=12)
        rng = np.random.default_rng(13)
        tau = rng.dirichlet([1.5] * 3, size=25)
        alpha = np.array([0.2, 0.3, 0.5])
        pi = np.array([[0.7, 0.2, 0.1], [0.2, 0.6, 0.3], [0.1, 0.3, 0.5]])
        perm = np.array([2, 0, 1])
        value = expected_loglik_sbm(SbmParams(alpha=alpha, pi=pi), adj, VariationalState(tau=tau))
        permuted = expected_loglik_sbm(
            SbmParams(alpha=alpha[perm], pi=pi[np.ix_(perm, perm)]), adj,
            VariationalState(tau=tau[:, perm]))
        assert value == pytest.approx(permuted, abs=1e-9)


class TestPredictProbabilities:
    def test_hard_tau_looks_up_pi(self):
        labels = np.array([0, 1, 0, 1])
        pi = np.array([[0.8, 0.2], [0.2, 0.6]])
        params = SbmParams(alpha=np.array([0.5, 0.5]), pi=pi)
        out = predict_probabilities(params, hard_state(labels, 2))
        for i in range(4):
            for j in range(4):
                if i != j:
                    assert out[i, j] == pytest.approx(pi[labels[i], labels[j]])
        assert np.isnan(out[0, 0])

    def test_single_block_constant(self):
        params = SbmParams(alpha=np.array([1.0]), pi=np.array([[0.31]]))
        out = predict_probabilities(params, hard_state(np.zeros(5, dtype=int), 1))
        off = ~np.eye(5, dtype=bool)
        np.testing.assert_allclose(out[off], 0.31)

    def test_uniform_tau_averages(self):
        a, b, c = 0.8, 0.3, 0.5
        params = SbmParams(alpha=np.array([0.5, 0.5]), pi=np.array([[a, b], [b, c]]))
        tau = np.full((4, 2), 0.5)
        out = predict_probabilities(params, VariationalState(tau=tau))
        off = ~np.eye(4, dtype=bool)
        np.testing.assert_allclose(out[off], (a + 2 * b + c) / 4)

    def test_entries_in_unit_interval_and_symmetric(self):
        rng = np.random.default_rng(14)
        tau = rng.dirichlet([1.0] * 3, size=10)
        pi = rng.uniform(0.05, 0.95, size=(3, 3))
        pi = 0.5 * (pi + pi.T)
        params = SbmParams(alpha=np.full(3, 1 / 3), pi=pi)
        out = predict_probabilities(params, VariationalState(tau=tau))
        off = ~np.eye(10, dtype=bool)
        assert np.all(out[off] >= 0) and np.all(out[off] <= 1)
        np.testing.assert_allclose(out[off], out.T[off])


class TestSpectralInit:
    def test_two_disconnected_cliques(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
        adj = adjacency_from_edges(8, edges)
        part = spectral_init(adj, 2, rng_seed=0)
        assert ari(part.labels, [0, 0, 0, 0, 1, 1, 1, 1]) == 1.0

    def test_single_block(self):
        adj = adjacency_from_edges(5, [(0, 1)])
        part = spectral_init(adj, 1, rng_seed=0)
        assert part.q == 1 and set(part.labels) == {0}

    def test_too_many_blocks_is_error(self):
        adj = adjacency_from_edges(4, [(0, 1)])
        with pytest.raises(InputError):
            spectral_init(adj, 5)

    def test_planted_three_blocks_high_ari(self):
        params = planted_params(3, 0.5, 0.02)
        hits = 0
        for seed in range(20):
            adj, draw = sample_network(params, 150, rng_seed=seed)
            part = spectral_init(adj, 3, rng_seed=seed)
            if ari(part.labels, draw.labels) >= 0.95:
                hits += 1
        assert hits >= 19  # >= 95% of seeds

    def test_missing_entries_count_as_zero(self):
        adj = adjacency_from_edges(6, [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)],
                                   missing=[(0, 3)])
        part = spectral_init(adj, 2, rng_seed=1)
        assert ari(part.labels, [0, 0, 0, 1, 1, 1]) == 1.0

    def test_deterministic(self):
        adj, _ = sample_network(planted_params(2, 0.5, 0.1), 40, rng_seed=15)
        a = spectral_init(adj, 2, rng_seed=3)
        b = spectral_init(adj, 2, rng_seed=3)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_params_validation_and_json_round_trip():
    with pytest.raises(InputError):
        SbmParams(alpha=np.array([0.5, 0.4]), pi=np.full((2, 2), 0.5))
    with pytest.raises(InputError):
        SbmParams(alpha=np.array([0.5, 0.5]), pi=np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(InputError):
        SbmParams(alpha=np.array([1.0]))
    params = planted_params(2, 0.6, 0.1)
    again = SbmParams.from_json(params.to_json())
    np.testing.assert_array_equal(params.pi, again.pi)
    cov = SbmParams(alpha=np.array([1.0]), gamma=np.array([[0.2]]), beta=np.array([1.0, -1.0]))
    again = SbmParams.from_json(cov.to_json())
    np.testing.assert_array_equal(cov.beta, again.beta)
