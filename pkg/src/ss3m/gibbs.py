"""Gibbs sampler: the four normalizable complete conditionals (z, A, theta,
phi), the HMC updates for B and Bstar, and the training sweep tying them
together.

The sampler is uncollapsed: theta and phi are explicitly sampled, which is
required because the activation conditional depends on theta_d. Within a
sweep the update order is z -> A -> theta -> phi -> B/Bstar. Because z
assignments are conditionally independent given (theta, phi), the z pass is
resampled in one vectorized batch per source; this is the same Gibbs kernel
as a token-by-token scan.
"""

import logging
from dataclasses import dataclass, field
from math import lgamma, log

import numpy as np

from . import hmc
from .errors import ConfigError, SamplingError
from .model import (
    LABEL_ABSENT,
    LABEL_PRESENT,
    LABEL_UNKNOWN,
    Corpus,
    Hyperparameters,
    LabelMatrix,
    ModelState,
    complete_data_log_likelihood,
    dirichlet_prior_row,
    prior_matrix,
)
from .util import PROB_FLOOR, floored_log, sample_dirichlet, substream

logger = logging.getLogger(__name__)

MISSING_FIX_ZERO = "fix_zero"
MISSING_ESTIMATE = "estimate"
B_FIXED = "fixed"
B_SAMPLED = "sampled"


@dataclass(frozen=True)
class TrainOptions:
    missing_label_mode: str = MISSING_FIX_ZERO
    b_mode: str = B_FIXED
    seed: int = 0
    record_trace: bool = True
    sweep_order_seed: int = 0

    def __post_init__(self):
        if self.missing_label_mode not in (MISSING_FIX_ZERO, MISSING_ESTIMATE):
            raise ConfigError(
                f"unknown missing_label_mode {self.missing_label_mode!r}")
        if self.b_mode not in (B_FIXED, B_SAMPLED):
            raise ConfigError(f"unknown b_mode {self.b_mode!r}")


@dataclass
class TrainTrace:
    log_likelihoods: list = field(default_factory=list)
    hmc_accepts: list = field(default_factory=list)
    hmc_attempts: list = field(default_factory=list)
    best_state: ModelState = None
    best_iteration: int = -1

    @property
    def best_log_likelihood(self) -> float:
        return max(self.log_likelihoods) if self.log_likelihoods else float("-inf")


def sample_z_token(theta_d, phi_s, w: int, rng: np.random.Generator) -> int:
    """Draw one phenotype assignment with probability proportional to
    theta_d[p] * phi_s[p, w]."""
    weights = np.asarray(theta_d, dtype=float) * np.asarray(phi_s)[:, int(w)]
    total = weights.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise SamplingError("all-zero assignment weights (corrupt state)")
    return int(np.searchsorted(np.cumsum(weights), rng.random() * total,
                               side="right"))


def _sample_z_batch(theta, phi_s, w_flat, doc_idx, rng):
    """Vectorized z resample for all tokens of one source."""
    probs = theta[doc_idx, :] * phi_s[:, w_flat].T
    totals = probs.sum(axis=1)
    bad = ~(totals > 0.0) | ~np.isfinite(totals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SamplingError(
            f"all-zero assignment weights at patient {int(doc_idx[i])}, "
            f"token {i} (corrupt state)")
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(w_flat)) * totals
    return (cum < u[:, None]).sum(axis=1).astype(np.int64)


def phenotype_counts(state: ModelState, corpus: Corpus) -> np.ndarray:
    """c[d, p] = number of tokens of patient d assigned to phenotype p."""
    D, P = state.theta.shape
    c = np.zeros((D, P), dtype=np.int64)
    for s in range(corpus.num_sources):
        for d in range(D):
            z_sd = state.z[s][d]
            if z_sd.size:
                c[d] += np.bincount(z_sd, minlength=P)
    return c


def token_counts(state: ModelState, corpus: Corpus, s: int) -> np.ndarray:
    """m[p, v] = number of source-s tokens with value v assigned to p."""
    P = state.theta.shape[1]
    v_s = len(corpus.vocab[s])
    flat = np.zeros(P * v_s, dtype=np.int64)
    for d in range(corpus.num_patients):
        z_sd = state.z[s][d]
        if z_sd.size:
            idx = z_sd * v_s + corpus.tokens[s][d]
            flat += np.bincount(idx, minlength=P * v_s)
    return flat.reshape(P, v_s)


def sample_theta(d: int, state: ModelState, corpus: Corpus,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw theta_d from Dir(prior_d + phenotype counts of patient d)."""
    P = state.theta.shape[1]
    counts = np.zeros(P, dtype=np.int64)
    for s in range(corpus.num_sources):
        z_sd = state.z[s][d]
        if z_sd.size:
            counts += np.bincount(z_sd, minlength=P)
    prior = dirichlet_prior_row(state.A[d], state.B, state.Bstar)
    return sample_dirichlet(prior + counts, rng)


def sample_phi(s: int, p: int, state: ModelState, corpus: Corpus,
               hyper: Hyperparameters, rng: np.random.Generator) -> np.ndarray:
    """Draw phi_sp from Dir(gamma_s + per-token assignment counts)."""
    v_s = len(corpus.vocab[s])
    m = np.zeros(v_s, dtype=np.int64)
    for d in range(corpus.num_patients):
        z_sd = state.z[s][d]
        if z_sd.size:
            mask = z_sd == p
            if mask.any():
                m += np.bincount(corpus.tokens[s][d][mask], minlength=v_s)
    return sample_dirichlet(hyper.gamma[s] + m, rng)


def activation_log_odds(d: int, p: int, state: ModelState,
                        hyper: Hyperparameters) -> float:
    """log P(A_dp=1 | rest) - log P(A_dp=0 | rest).

    Ratio of the two Dirichlet densities on theta_d whose concentration
    vectors differ only at coordinate p (Bstar vs B_p), times the Bernoulli
    prior odds.
    """
    b_p = float(state.B[p])
    bstar = float(state.Bstar)
    prior = dirichlet_prior_row(state.A[d], state.B, bstar).astype(float)
    t0 = float(prior.sum() - prior[p] + bstar)  # total with A_dp = 0
    log_theta = float(floored_log(state.theta[d, p]))
    val = (log(hyper.alpha / (1.0 - hyper.alpha))
           + lgamma(t0 - bstar + b_p) - lgamma(t0)
           + lgamma(bstar) - lgamma(b_p)
           + (b_p - bstar) * log_theta)
    if not np.isfinite(val):
        raise SamplingError(
            f"non-finite activation log-odds at patient {d}, phenotype {p}")
    return val


def sample_activation(d: int, p: int, state: ModelState, labels: LabelMatrix,
                      options: TrainOptions, hyper: Hyperparameters,
                      rng: np.random.Generator) -> int:
    """Resample one activation bit, honoring the label clamp rules."""
    if labels is not None and p < labels.num_labels:
        cell = int(labels.entries[d, p])
        if cell == LABEL_PRESENT:
            return 1
        if cell == LABEL_ABSENT:
            return 0
        if options.missing_label_mode == MISSING_FIX_ZERO:
            return 0
    odds = activation_log_odds(d, p, state, hyper)
    # sigmoid(odds) via a draw on the log scale avoids overflow at |odds|>>0
    prob_one = 1.0 / (1.0 + np.exp(-odds)) if odds > -700 else 0.0
    return int(rng.random() < prob_one)


def sweep(state: ModelState, corpus: Corpus, labels: LabelMatrix,
          options: TrainOptions, hyper: Hyperparameters,
          rng: np.random.Generator, update_activations: bool = True,
          update_theta_prior: bool = True) -> dict:
    """One full Gibbs pass over z, A, theta, phi and (optionally) B/Bstar.

    Mutates state in place. update_activations/update_theta_prior exist so
    the unstructured-prior baseline (fixed symmetric concentration, A
    frozen) can reuse the same sweep. Returns HMC bookkeeping counts.
    """
    D, P = state.theta.shape

    # (1) phenotype assignments, vectorized per source.
    for s in range(corpus.num_sources):
        lengths = [w.size for w in corpus.tokens[s]]
        if sum(lengths) == 0:
            continue
        w_flat = np.concatenate([w for w in corpus.tokens[s] if w.size])
        doc_idx = np.repeat(np.arange(D), lengths)
        z_flat = _sample_z_batch(state.theta, state.phi[s], w_flat, doc_idx, rng)
        bounds = np.cumsum(lengths)[:-1]
        state.z[s] = list(np.split(z_flat, bounds))

    # (2) activations, patients then phenotypes in index order.
    if update_activations:
        for d in range(D):
            for p in range(P):
                state.A[d, p] = sample_activation(
                    d, p, state, labels, options, hyper, rng)

    # (3) patient-phenotype distributions.
    counts = phenotype_counts(state, corpus)
    if update_theta_prior:
        prior = prior_matrix(state.A, state.B, state.Bstar)
    else:
        prior = np.full((D, P), float(state.B[0]))
    state.theta = sample_dirichlet(prior + counts, rng)

    # (4) phenotype-token distributions.
    for s in range(corpus.num_sources):
        m = token_counts(state, corpus, s)
        state.phi[s] = sample_dirichlet(hyper.gamma[s] + m, rng)

    # (5) prior pseudo-counts via HMC.
    accepts = 0
    attempts = 0
    if options.b_mode == B_SAMPLED and update_theta_prior:
        for p in range(P):
            target = hmc.b_target(p, state, hyper)
            eta = np.array([log(max(float(state.B[p]), PROB_FLOOR))])
            res = hmc.hmc_step(eta, target, hyper.hmc_step_size,
                               hyper.hmc_path_length, rng)
            attempts += 1
            if res.accepted:
                accepts += 1
                state.B[p] = max(float(np.exp(res.next_point[0])), PROB_FLOOR)
        target = hmc.bstar_target(state, hyper)
        eta = np.array([log(max(float(state.Bstar), PROB_FLOOR))])
        res = hmc.hmc_step(eta, target, hyper.hmc_step_size,
                           hyper.hmc_path_length, rng)
        attempts += 1
        if res.accepted:
            accepts += 1
            state.Bstar = max(float(np.exp(res.next_point[0])), PROB_FLOOR)

    return {"hmc_accepts": accepts, "hmc_attempts": attempts}


def initialize_state(corpus: Corpus, labels: LabelMatrix,
                     hyper: Hyperparameters, options: TrainOptions,
                     rng: np.random.Generator) -> ModelState:
    """Initial state: z uniform, A clamped per labels with free entries
    Bern(alpha), B/Bstar from their Gamma priors, theta/phi from their
    conditionals given the initial z and A."""
    D = corpus.num_patients
    P = hyper.num_phenotypes

    z = []
    for s in range(corpus.num_sources):
        z.append([rng.integers(0, P, size=w.size) for w in corpus.tokens[s]])

    A = (rng.random((D, P)) < hyper.alpha).astype(np.int8)
    if labels is not None:
        P_lab = labels.num_labels
        ent = labels.entries
        clamp_one = ent == LABEL_PRESENT
        A[:, :P_lab][clamp_one] = 1
        clamp_zero = ent == LABEL_ABSENT
        if options.missing_label_mode == MISSING_FIX_ZERO:
            clamp_zero = clamp_zero | (ent == LABEL_UNKNOWN)
        A[:, :P_lab][clamp_zero] = 0

    B = np.maximum(rng.gamma(hyper.b_shape, hyper.b_scale, size=P), PROB_FLOOR)
    Bstar = float(max(rng.gamma(hyper.bstar_shape, hyper.bstar_scale),
                      PROB_FLOOR))

    state = ModelState(theta=np.empty((D, P)), phi=[None] * corpus.num_sources,
                       z=z, A=A, B=B, Bstar=Bstar)
    counts = phenotype_counts(state, corpus)
    state.theta = sample_dirichlet(prior_matrix(A, B, Bstar) + counts, rng)
    for s in range(corpus.num_sources):
        m = token_counts(state, corpus, s)
        state.phi[s] = sample_dirichlet(hyper.gamma[s] + m, rng)
    return state


def train(corpus: Corpus, labels: LabelMatrix, hyper: Hyperparameters,
          options: TrainOptions) -> TrainTrace:
    """Run hyper.iterations Gibbs sweeps, tracking the complete-data
    log-likelihood and keeping a deep snapshot of the best state."""
    if corpus.num_patients == 0:
        raise ConfigError("corpus is empty")
    rng = substream(options.seed, "gibbs.train")
    state = initialize_state(corpus, labels, hyper, options, rng)
    trace = TrainTrace()

    ll = complete_data_log_likelihood(state, corpus, hyper)
    trace.log_likelihoods.append(ll)
    trace.best_state = state.copy()
    trace.best_iteration = 0
    best_ll = ll

    try:
        for it in range(1, hyper.iterations + 1):
            stats = sweep(state, corpus, labels, options, hyper, rng)
            ll = complete_data_log_likelihood(state, corpus, hyper)
            trace.log_likelihoods.append(ll)
            trace.hmc_accepts.append(stats["hmc_accepts"])
            trace.hmc_attempts.append(stats["hmc_attempts"])
            if ll > best_ll:
                best_ll = ll
                trace.best_state = state.copy()
                trace.best_iteration = it
    except KeyboardInterrupt:
        logger.warning("training interrupted at iteration %d; returning "
                       "partial trace", len(trace.log_likelihoods) - 1)
    return trace


def train_unstructured(corpus: Corpus, hyper: Hyperparameters,
                       concentration: float, seed: int) -> TrainTrace:
    """Baseline trainer: symmetric Dirichlet(concentration) prior on each
    theta_d, activations frozen at 1 and B/Bstar unused. Shares the sweep
    machinery with the gated model."""
    if corpus.num_patients == 0:
        raise ConfigError("corpus is empty")
    if concentration <= 0:
        raise ConfigError("concentration must be positive")
    rng = substream(seed, "gibbs.train")
    D = corpus.num_patients
    P = hyper.num_phenotypes
    options = TrainOptions(b_mode=B_FIXED, seed=seed)

    z = [[rng.integers(0, P, size=w.size) for w in per_source]
         for per_source in corpus.tokens]
    state = ModelState(
        theta=np.empty((D, P)), phi=[None] * corpus.num_sources, z=z,
        A=np.ones((D, P), dtype=np.int8),
        B=np.full(P, float(concentration)), Bstar=float(concentration))
    counts = phenotype_counts(state, corpus)
    state.theta = sample_dirichlet(np.full((D, P), concentration) + counts, rng)
    for s in range(corpus.num_sources):
        m = token_counts(state, corpus, s)
        state.phi[s] = sample_dirichlet(hyper.gamma[s] + m, rng)

    trace = TrainTrace()
    ll = complete_data_log_likelihood(state, corpus, hyper)
    trace.log_likelihoods.append(ll)
    trace.best_state = state.copy()
    trace.best_iteration = 0
    best_ll = ll
    for it in range(1, hyper.iterations + 1):
        sweep(state, corpus, None, options, hyper, rng,
              update_activations=False, update_theta_prior=False)
        ll = complete_data_log_likelihood(state, corpus, hyper)
        trace.log_likelihoods.append(ll)
        if ll > best_ll:
            best_ll = ll
            trace.best_state = state.copy()
            trace.best_iteration = it
    return trace
