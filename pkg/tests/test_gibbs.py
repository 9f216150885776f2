import math

import numpy as np
import pytest
import scipy.stats as st

from conftest import make_hyper, random_tiny_state
from ss3m import gibbs
from ss3m.errors import SamplingError
from ss3m.gibbs import (
    TrainOptions,
    activation_log_odds,
    initialize_state,
    phenotype_counts,
    sample_activation,
    sample_phi,
    sample_theta,
    sample_z_token,
    sweep,
    token_counts,
    train,
)
from ss3m.model import (
    LABEL_PRESENT,
    LABEL_UNKNOWN,
    Corpus,
    DocLengthSpec,
    LabelMatrix,
    ModelState,
    dirichlet_prior_row,
    generate,
    labels_from_activations,
)
from ss3m.util import sample_dirichlet, substream


class TestSampleZToken:
    def test_degenerate_theta(self, rng):
        phi = np.array([[0.5, 0.5], [0.9, 0.1]])
        for _ in range(50):
            assert sample_z_token([1.0, 0.0], phi, 0, rng) == 0

    def test_exact_normalization(self, rng):
        # hand-check oracle: 0.5*0.6 / (0.5*0.2 + 0.5*0.6) = 0.75
        phi = np.array([[0.2, 0.8], [0.6, 0.4]])
        n = 10 ** 5
        hits = sum(sample_z_token([0.5, 0.5], phi, 0, rng) for _ in range(n))
        p = 0.75
        assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)

    def test_uniform_symmetry(self, rng):
        P = 4
        phi = np.full((P, 3), 1 / 3)
        n = 10 ** 5
        theta = np.full(P, 1 / P)
        draws = gibbs._sample_z_batch(
            np.tile(theta, (n, 1))[:1], phi,
            np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), rng)
        counts = np.bincount(draws, minlength=P)
        assert st.chisquare(counts).pvalue > 0.001

    def test_corrupt_state_raises(self, rng):
        phi = np.array([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(SamplingError):
            sample_z_token([0.5, 0.5], phi, 0, rng)


def _state_with_counts(counts_row, A_row, B, Bstar, P):
    """One patient whose z counts equal counts_row."""
    total = int(sum(counts_row))
    z = np.repeat(np.arange(P), counts_row).astype(np.int64)
    corpus = Corpus(vocab=[["w"]], tokens=[[np.zeros(total, dtype=np.int64)]])
    state = ModelState(
        theta=np.full((1, P), 1.0 / P), phi=[np.ones((P, 1))], z=[[z]],
        A=np.array([A_row], dtype=np.int8), B=np.asarray(B, dtype=float),
        Bstar=float(Bstar))
    return state, corpus


class TestSampleTheta:
    def test_prior_only_moments(self, rng):
        # Dirichlet mean oracle: E[theta_0] = 10 / 10.01
        state, corpus = _state_with_counts([0, 0], [1, 0], [10.0, 5.0], 0.01, 2)
        n = 10 ** 4
        draws = np.array([sample_theta(0, state, corpus, rng)[0]
                          for _ in range(n)])
        mean = 10.0 / 10.01
        var = mean * (1 - mean) / (10.01 + 1)
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / n)

    def test_counts_dominate(self, rng):
        state, corpus = _state_with_counts([100, 0], [0, 0], [1.0, 1.0], 0.01, 2)
        n = 10 ** 4
        draws = np.array([sample_theta(0, state, corpus, rng)[0]
                          for _ in range(n)])
        total = 100.02
        mean = 100.01 / total
        var = mean * (1 - mean) / (total + 1)
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / n)

    def test_simplex_closure(self, rng):
        state, corpus = _state_with_counts([3, 1], [1, 1], [2.0, 2.0], 0.01, 2)
        for _ in range(100):
            out = sample_theta(0, state, corpus, rng)
            assert abs(out.sum() - 1.0) < 1e-9 and np.all(out >= 0)


class TestSamplePhi:
    def _empty_assignment_state(self, V, P=2):
        corpus = Corpus(vocab=[[f"w{v}" for v in range(V)]],
                        tokens=[[np.empty(0, dtype=np.int64)]])
        state = ModelState(
            theta=np.full((1, P), 1.0 / P), phi=[np.full((P, V), 1.0 / V)],
            z=[[np.empty(0, dtype=np.int64)]],
            A=np.ones((1, P), dtype=np.int8), B=np.ones(P), Bstar=0.5)
        return state, corpus

    def test_symmetric_prior_is_sparse(self, rng):
        # simulation oracle: symmetric Dir(0.01) on V=10 concentrates mass
        h = make_hyper(P=2, gamma=0.01)
        state, corpus = self._empty_assignment_state(V=10)
        hits = sum(sample_phi(0, 0, state, corpus, h, rng).max() > 0.9
                   for _ in range(400))
        assert hits / 400 > 0.5

    def test_count_moments(self, rng):
        h = make_hyper(P=1, gamma=0.01)
        corpus = Corpus(vocab=[["a", "b", "c"]],
                        tokens=[[np.zeros(1000, dtype=np.int64)]])
        state = ModelState(
            theta=np.ones((1, 1)), phi=[np.full((1, 3), 1 / 3)],
            z=[[np.zeros(1000, dtype=np.int64)]],
            A=np.ones((1, 1), dtype=np.int8), B=np.ones(1), Bstar=0.5)
        n = 10 ** 4
        draws = np.array([sample_phi(0, 0, state, corpus, h, rng)[0]
                          for _ in range(n)])
        total = 1000.03
        mean = 1000.01 / total
        var = mean * (1 - mean) / (total + 1)
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / n)

    def test_simplex_closure(self, rng):
        h = make_hyper(P=2, gamma=0.3)
        state, corpus = self._empty_assignment_state(V=6)
        for _ in range(100):
            out = sample_phi(0, 1, state, corpus, h, rng)
            assert abs(out.sum() - 1.0) < 1e-9


def _oracle_log_odds(d, p, state, hyper):
    """Direct two-point normalization via scipy Dirichlet densities."""
    theta = state.theta[d] / state.theta[d].sum()
    prior1 = dirichlet_prior_row(state.A[d], state.B, state.Bstar).copy()
    prior0 = prior1.copy()
    prior1[p] = state.B[p]
    prior0[p] = state.Bstar
    log_p1 = math.log(hyper.alpha) + st.dirichlet.logpdf(theta, prior1)
    log_p0 = math.log(1 - hyper.alpha) + st.dirichlet.logpdf(theta, prior0)
    return log_p1 - log_p0


class TestActivationLogOdds:
    def test_equal_b_reduces_to_prior_odds(self, rng):
        h = make_hyper(P=2, alpha=0.1)
        state, _ = random_tiny_state(rng, P=2)
        state.B = np.array([0.7, 0.7])
        state.Bstar = 0.7
        got = activation_log_odds(0, 1, state, h)
        assert got == pytest.approx(math.log(1 / 9), abs=1e-12)

    def test_matches_density_ratio_oracle(self, rng):
        h = make_hyper(P=3, alpha=0.3)
        for _ in range(200):
            state, _ = random_tiny_state(rng, D=2, P=3, bstar_low=1e-3)
            d, p = int(rng.integers(2)), int(rng.integers(3))
            got = activation_log_odds(d, p, state, h)
            want = _oracle_log_odds(d, p, state, h)
            assert got == pytest.approx(want, rel=1e-10)

    def test_monotone_in_theta_when_b_exceeds_bstar(self, rng):
        h = make_hyper(P=2, alpha=0.1)
        state, _ = random_tiny_state(rng, D=1, P=2)
        state.B = np.array([10.0, 10.0])
        state.Bstar = 0.01
        values = []
        for t in np.linspace(0.01, 0.99, 25):
            state.theta = np.array([[t, 1 - t]])
            values.append(activation_log_odds(0, 0, state, h))
        assert np.all(np.diff(values) > 0)
        assert values[-1] > 10  # large and positive near theta -> 1


class TestSampleActivation:
    def _setup(self, rng, alpha=0.5):
        h = make_hyper(P=2, P_lab=1, alpha=alpha)
        state, _ = random_tiny_state(rng, D=1, P=2)
        state.B = np.array([0.7, 0.7])
        state.Bstar = 0.7  # log-odds = prior odds only
        return h, state

    def test_present_label_clamps_to_one(self, rng):
        h, state = self._setup(rng)
        labels = LabelMatrix(entries=np.array([[LABEL_PRESENT]]),
                             label_names=["l0"])
        opts = TrainOptions(missing_label_mode="estimate")
        for _ in range(50):
            assert sample_activation(0, 0, state, labels, opts, h, rng) == 1

    def test_unknown_fix_zero_clamps_to_zero(self, rng):
        h, state = self._setup(rng)
        labels = LabelMatrix(entries=np.array([[LABEL_UNKNOWN]]),
                             label_names=["l0"])
        opts = TrainOptions(missing_label_mode="fix_zero")
        for _ in range(50):
            assert sample_activation(0, 0, state, labels, opts, h, rng) == 0

    def test_zero_log_odds_is_fair_coin(self, rng):
        # alpha = 0.5 and B == Bstar gives exactly zero log-odds
        h, state = self._setup(rng, alpha=0.5)
        labels = LabelMatrix(entries=np.array([[LABEL_UNKNOWN]]),
                             label_names=["l0"])
        opts = TrainOptions(missing_label_mode="estimate")
        n = 10 ** 5
        hits = sum(sample_activation(0, 0, state, labels, opts, h, rng)
                   for _ in range(n))
        assert abs(hits / n - 0.5) < 3 * math.sqrt(0.25 / n)


class TestSweep:
    def _toy(self, seed=0, P_lab=2):
        h = make_hyper(P=4, P_lab=P_lab, S=2, gamma=0.1, iterations=3)
        corpus, truth = generate(h, [12, 9], DocLengthSpec.poisson(15, 2), 20,
                                 seed=seed)
        labels = labels_from_activations(truth, P_lab)
        return h, corpus, labels, truth

    def test_deterministic_given_seed(self):
        h, corpus, labels, _ = self._toy()
        opts = TrainOptions(b_mode="sampled", seed=5)
        states = []
        for _ in range(2):
            rng = substream(5, "sweep-test")
            state = initialize_state(corpus, labels, h, opts, rng)
            sweep(state, corpus, labels, opts, h, rng)
            states.append(state)
        a, b = states
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.A, b.A)
        assert np.array_equal(a.B, b.B) and a.Bstar == b.Bstar
        for s in range(2):
            assert np.array_equal(a.phi[s], b.phi[s])
            for d in range(corpus.num_patients):
                assert np.array_equal(a.z[s][d], b.z[s][d])

    def test_post_sweep_invariants(self):
        h, corpus, labels, _ = self._toy()
        opts = TrainOptions(b_mode="sampled", seed=1)
        rng = substream(1, "sweep-test")
        state = initialize_state(corpus, labels, h, opts, rng)
        for _ in range(3):
            sweep(state, corpus, labels, opts, h, rng)
            state.validate(corpus)

    def test_z_accuracy_above_chance_at_truth(self):
        # with globals clamped to the generating values, one z pass matches
        # the true assignments more often than 1/P
        P = 5
        h = make_hyper(P=P, S=1, gamma=0.05)
        corpus, truth = generate(h, [50], DocLengthSpec.fixed(20, 1), 500,
                                 seed=9)
        rng = substream(2, "sweep-test")
        lengths = [w.size for w in corpus.tokens[0]]
        w_flat = np.concatenate([w for w in corpus.tokens[0] if w.size])
        doc_idx = np.repeat(np.arange(500), lengths)
        z_flat = gibbs._sample_z_batch(truth.theta, truth.phi[0], w_flat,
                                       doc_idx, rng)
        z_true = np.concatenate(truth.z[0])
        accuracy = (z_flat == z_true).mean()
        assert accuracy > 1.0 / P
        assert len(z_true) >= 10 ** 4

    def test_count_bookkeeping_matches_recount(self):
        h, corpus, labels, _ = self._toy()
        opts = TrainOptions(seed=3)
        rng = substream(3, "sweep-test")
        state = initialize_state(corpus, labels, h, opts, rng)
        sweep(state, corpus, labels, opts, h, rng)
        c = phenotype_counts(state, corpus)
        brute = np.zeros_like(c)
        for s in range(corpus.num_sources):
            for d in range(corpus.num_patients):
                for z in state.z[s][d]:
                    brute[d, z] += 1
        assert np.array_equal(c, brute)
        for s in range(corpus.num_sources):
            m = token_counts(state, corpus, s)
            brute_m = np.zeros_like(m)
            for d in range(corpus.num_patients):
                for z, w in zip(state.z[s][d], corpus.tokens[s][d]):
                    brute_m[z, w] += 1
            assert np.array_equal(m, brute_m)


class TestClampInvariants:
    def test_all_present_stays_one(self):
        h = make_hyper(P=3, P_lab=2, gamma=0.2, iterations=4)
        corpus, truth = generate(h, [10], DocLengthSpec.fixed(8, 1), 15, seed=2)
        labels = LabelMatrix(
            entries=np.full((15, 2), LABEL_PRESENT, dtype=np.int8),
            label_names=["a", "b"])
        trace = train(corpus, labels, h, TrainOptions(
            missing_label_mode="estimate", seed=4))
        assert np.all(trace.best_state.A[:, :2] == 1)

    def test_fix_zero_with_unknown_stays_zero(self):
        h = make_hyper(P=3, P_lab=2, gamma=0.2, iterations=4)
        corpus, truth = generate(h, [10], DocLengthSpec.fixed(8, 1), 15, seed=2)
        labels = LabelMatrix(
            entries=np.full((15, 2), LABEL_UNKNOWN, dtype=np.int8),
            label_names=["a", "b"])
        trace = train(corpus, labels, h, TrainOptions(
            missing_label_mode="fix_zero", seed=4))
        assert np.all(trace.best_state.A[:, :2] == 0)


class TestTrain:
    def test_zero_iterations(self):
        h = make_hyper(P=2, gamma=0.2, iterations=0)
        corpus, truth = generate(h, [6], DocLengthSpec.fixed(5, 1), 8, seed=1)
        trace = train(corpus, None, h, TrainOptions(seed=0))
        assert len(trace.log_likelihoods) == 1
        assert trace.best_iteration == 0
        assert trace.best_state is not None

    def test_likelihood_improves_over_initialization(self):
        h = make_hyper(P=5, S=1, gamma=0.05, iterations=10)
        corpus, _ = generate(h, [50], DocLengthSpec.poisson(40, 1), 200, seed=0)
        improved = 0
        for seed in range(20):
            trace = train(corpus, None, h, TrainOptions(seed=seed))
            if max(trace.log_likelihoods) > trace.log_likelihoods[0]:
                improved += 1
        assert improved >= 19

    def test_best_state_matches_best_iteration(self):
        h = make_hyper(P=3, P_lab=1, gamma=0.2, iterations=6)
        corpus, truth = generate(h, [10], DocLengthSpec.fixed(10, 1), 12, seed=3)
        labels = labels_from_activations(truth, 1)
        trace = train(corpus, labels, h, TrainOptions(seed=7))
        assert trace.best_log_likelihood == max(trace.log_likelihoods)
        assert (trace.log_likelihoods[trace.best_iteration]
                == trace.best_log_likelihood)

    def test_no_labels_path_is_reproducible(self):
        # the unsupervised reduction (zero labeled phenotypes) is the same
        # code path; identical seeds give bit-identical traces
        h = make_hyper(P=3, P_lab=0, gamma=0.2, iterations=4)
        corpus, _ = generate(h, [10], DocLengthSpec.fixed(10, 1), 12, seed=5)
        empty = LabelMatrix(entries=np.empty((12, 0), dtype=np.int8),
                            label_names=[])
        t1 = train(corpus, None, h, TrainOptions(seed=11))
        t2 = train(corpus, empty, h, TrainOptions(seed=11))
        assert t1.log_likelihoods == t2.log_likelihoods
        assert np.array_equal(t1.best_state.theta, t2.best_state.theta)
