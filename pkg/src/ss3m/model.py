"""Core model: domain types, the activation-gated Dirichlet prior, the
forward generative sampler, and the complete-data log-likelihood.

The model describes D patients observed through S token sources. Each
patient d carries a distribution theta_d over P phenotypes; each phenotype p
carries, per source s, a distribution phi_sp over that source's vocabulary.
Binary activations A_dp gate the Dirichlet prior on theta_d between a
per-phenotype pseudo-count B_p (active) and a shared small pseudo-count
Bstar (inactive), which pushes patient mass onto activated phenotypes.
"""

from dataclasses import dataclass
from math import lgamma, log

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, DataError, DimensionError, NumericalError
from .util import PROB_FLOOR, floored_log, sample_dirichlet

# Tri-state label cell values.
LABEL_PRESENT = 1
LABEL_ABSENT = 0
LABEL_UNKNOWN = -1


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed model parameters and sampler settings.

    gamma is one symmetric Dirichlet concentration per source.
    b_shape/b_scale and bstar_shape/bstar_scale are shape-scale Gamma
    parameters for B_p and Bstar.
    """

    num_phenotypes: int
    num_labeled: int
    num_sources: int
    alpha: float
    gamma: tuple
    b_shape: float = 10.0
    b_scale: float = 1.0
    bstar_shape: float = 0.01
    bstar_scale: float = 1.0
    hmc_path_length: int = 25
    hmc_step_size: float = 0.01
    iterations: int = 200

    def __post_init__(self):
        if self.num_phenotypes < 1:
            raise ConfigError("num_phenotypes must be positive")
        if not 0 <= self.num_labeled <= self.num_phenotypes:
            raise ConfigError("num_labeled must lie in [0, num_phenotypes]")
        if self.num_sources < 1:
            raise ConfigError("num_sources must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly in (0, 1)")
        gam = tuple(float(g) for g in self.gamma)
        if len(gam) != self.num_sources:
            raise ConfigError("gamma must have one entry per source")
        if any(g <= 0 for g in gam):
            raise ConfigError("gamma entries must be positive")
        object.__setattr__(self, "gamma", gam)
        for name in ("b_shape", "b_scale", "bstar_shape", "bstar_scale",
                     "hmc_step_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.hmc_path_length < 1:
            raise ConfigError("hmc_path_length must be a positive integer")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")


@dataclass(frozen=True)
class Corpus:
    """Per-source, per-patient token-ID sequences with per-source vocabularies.

    vocab[s] is the token-string list for source s; tokens[s][d] is a 1-D
    integer array of token IDs for patient d in source s (possibly empty).
    """

    vocab: list
    tokens: list

    def __post_init__(self):
        if len(self.vocab) != len(self.tokens):
            raise DimensionError("vocab and tokens must have one entry per source")
        counts = {len(per_source) for per_source in self.tokens}
        if len(counts) > 1:
            raise DimensionError("all sources must cover the same patients")
        for s, voc in enumerate(self.vocab):
            if len(set(voc)) != len(voc):
                raise ConfigError(f"vocabulary for source {s} has duplicates")
            v_s = len(voc)
            for d, w in enumerate(self.tokens[s]):
                w = np.asarray(w, dtype=np.int64)
                self.tokens[s][d] = w
                if w.size and (w.min() < 0 or w.max() >= v_s):
                    raise DimensionError(
                        f"token ID out of range for source {s}, patient {d}")

    @property
    def num_sources(self) -> int:
        return len(self.vocab)

    @property
    def num_patients(self) -> int:
        return len(self.tokens[0]) if self.tokens else 0

    def vocab_sizes(self):
        return [len(v) for v in self.vocab]

    def num_tokens(self) -> int:
        return sum(int(w.size) for per_source in self.tokens for w in per_source)


@dataclass(frozen=True)
class LabelMatrix:
    """D x P_lab tri-state observations (LABEL_PRESENT/ABSENT/UNKNOWN)."""

    entries: np.ndarray
    label_names: list

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int8)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2:
            raise DimensionError("label entries must be a 2-D matrix")
        if entries.shape[1] != len(self.label_names):
            raise DimensionError("label_names must match the number of columns")
        valid = np.isin(entries, (LABEL_PRESENT, LABEL_ABSENT, LABEL_UNKNOWN))
        if not valid.all():
            raise DataError("label entries must be Present/Absent/Unknown")

    @property
    def num_patients(self) -> int:
        return self.entries.shape[0]

    @property
    def num_labels(self) -> int:
        return self.entries.shape[1]


@dataclass
class ModelState:
    """Full latent state: theta (D,P), phi (per source (P,V_s)), z (mirrors
    corpus tokens), A (D,P) binary, B (P,) positive, Bstar positive."""

    theta: np.ndarray
    phi: list
    z: list
    A: np.ndarray
    B: np.ndarray
    Bstar: float

    def validate(self, corpus: Corpus = None, atol: float = 1e-9):
        D, P = self.theta.shape
        if self.A.shape != (D, P):
            raise DimensionError("A must be D x P")
        if self.B.shape != (P,):
            raise DimensionError("B must have length P")
        if np.any(self.theta < 0) or np.any(
                np.abs(self.theta.sum(axis=1) - 1.0) > atol):
            raise NumericalError("theta rows must be simplex vectors")
        for phi_s in self.phi:
            if phi_s.shape[0] != P:
                raise DimensionError("phi must have P rows per source")
            if np.any(phi_s < 0) or np.any(np.abs(phi_s.sum(axis=1) - 1.0) > atol):
                raise NumericalError("phi rows must be simplex vectors")
        if np.any(self.B <= 0) or self.Bstar <= 0:
            raise NumericalError("B and Bstar must be strictly positive")
        if corpus is not None:
            for s, per_source in enumerate(corpus.tokens):
                for d, w in enumerate(per_source):
                    if self.z[s][d].shape != w.shape:
                        raise DimensionError(
                            f"z shape mismatch at source {s}, patient {d}")

    def copy(self) -> "ModelState":
        return ModelState(
            theta=self.theta.copy(),
            phi=[p.copy() for p in self.phi],
            z=[[zz.copy() for zz in per_source] for per_source in self.z],
            A=self.A.copy(),
            B=self.B.copy(),
            Bstar=float(self.Bstar),
        )


@dataclass(frozen=True)
class DocLengthSpec:
    """Per-source document-length law for synthesis: ('fixed', n) or
    ('poisson', lam)."""

    modes: tuple

    @classmethod
    def fixed(cls, n: int, num_sources: int) -> "DocLengthSpec":
        if n < 0:
            raise ConfigError("fixed document length must be >= 0")
        return cls(tuple(("fixed", int(n)) for _ in range(num_sources)))

    @classmethod
    def poisson(cls, lam: float, num_sources: int) -> "DocLengthSpec":
        if lam <= 0:
            raise ConfigError("poisson mean must be > 0")
        return cls(tuple(("poisson", float(lam)) for _ in range(num_sources)))

    def draw(self, s: int, size: int, rng: np.random.Generator) -> np.ndarray:
        kind, value = self.modes[s]
        if kind == "fixed":
            return np.full(size, int(value), dtype=np.int64)
        if kind == "poisson":
            return rng.poisson(value, size=size).astype(np.int64)
        raise ConfigError(f"unknown document-length mode {kind!r}")


def dirichlet_prior_row(A_row, B, Bstar: float) -> np.ndarray:
    """Gated Dirichlet concentration for one patient: B[p] where the
    activation bit is set, Bstar elsewhere."""
    A_row = np.asarray(A_row)
    B = np.asarray(B, dtype=float)
    if A_row.shape != B.shape:
        raise DimensionError("activation row and B must share length P")
    return np.where(A_row == 1, B, float(Bstar))


def prior_matrix(A, B, Bstar: float) -> np.ndarray:
    """dirichlet_prior_row for every patient at once; (D,P)."""
    return np.where(np.asarray(A) == 1, np.asarray(B, dtype=float)[None, :],
                    float(Bstar))


def generate(hyper: Hyperparameters, vocab_sizes, doc_lengths: DocLengthSpec,
             D: int, seed: int):
    """Forward-simulate a corpus and the latent state that produced it.

    Identical seed gives bit-identical output. Returns (Corpus, ModelState).
    """
    if D < 1:
        raise ConfigError("D must be positive")
    vocab_sizes = [int(v) for v in vocab_sizes]
    if len(vocab_sizes) != hyper.num_sources:
        raise ConfigError("vocab_sizes must have one entry per source")
    if any(v < 1 for v in vocab_sizes):
        raise ConfigError("vocabulary sizes must be positive")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    P, S = hyper.num_phenotypes, hyper.num_sources

    phi = []
    for s in range(S):
        conc = np.full((P, vocab_sizes[s]), hyper.gamma[s])
        phi.append(sample_dirichlet(conc, rng))

    B = np.maximum(
        rng.gamma(hyper.b_shape, hyper.b_scale, size=P), PROB_FLOOR)
    Bstar = float(max(rng.gamma(hyper.bstar_shape, hyper.bstar_scale),
                      PROB_FLOOR))

    A = (rng.random((D, P)) < hyper.alpha).astype(np.int8)
    theta = sample_dirichlet(prior_matrix(A, B, Bstar), rng)

    tokens = [[] for _ in range(S)]
    z = [[] for _ in range(S)]
    for s in range(S):
        lengths = doc_lengths.draw(s, D, rng)
        for d in range(D):
            n = int(lengths[d])
            z_sd = _categorical_rows(np.broadcast_to(theta[d], (n, P)), rng)
            w_sd = _categorical_rows(phi[s][z_sd], rng)
            z[s].append(z_sd)
            tokens[s].append(w_sd)

    vocab = [[f"s{s}_w{v:05d}" for v in range(vocab_sizes[s])]
             for s in range(S)]
    corpus = Corpus(vocab=vocab, tokens=tokens)
    state = ModelState(theta=theta, phi=phi, z=z, A=A, B=B, Bstar=Bstar)
    return corpus, state


def _categorical_rows(probs, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (n, K) probability matrix."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    cum = np.cumsum(probs, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((probs.shape[0], 1))
    return (cum < u).sum(axis=1).astype(np.int64)


def labels_from_activations(state: ModelState, num_labeled: int,
                            label_names=None) -> LabelMatrix:
    """Derive a Present/Unknown label matrix from ground-truth activations
    on the first num_labeled phenotype columns."""
    A = state.A[:, :num_labeled]
    entries = np.where(A == 1, LABEL_PRESENT, LABEL_UNKNOWN).astype(np.int8)
    if label_names is None:
        label_names = [f"label_{p}" for p in range(num_labeled)]
    return LabelMatrix(entries=entries, label_names=list(label_names))


def log_dirichlet_pdf(x, alpha) -> float:
    """log Dirichlet density with probability floor on x."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return float(lgamma(alpha.sum()) - sum(lgamma(a) for a in alpha)
                 + np.dot(alpha - 1.0, floored_log(x)))


def log_gamma_pdf(x: float, shape: float, scale: float) -> float:
    """log of the shape-scale Gamma density."""
    return ((shape - 1.0) * log(x) - x / scale
            - lgamma(shape) - shape * log(scale))


def complete_data_log_likelihood(state: ModelState, corpus: Corpus,
                                 hyper: Hyperparameters) -> float:
    """Joint log-density of tokens and every latent variable.

    Returns -inf (never NaN) if an assigned token sits on an exactly-zero
    phi entry; theta and phi logs inside prior terms use the underflow
    floor.
    """
    D, P = state.theta.shape
    total = 0.0

    # Phenotype-token Dirichlet priors.
    for s in range(corpus.num_sources):
        gam = hyper.gamma[s]
        v_s = len(corpus.vocab[s])
        norm = lgamma(gam * v_s) - v_s * lgamma(gam)
        total += P * norm + (gam - 1.0) * floored_log(state.phi[s]).sum()

    # Gamma priors on B and Bstar.
    total += sum(log_gamma_pdf(float(b), hyper.b_shape, hyper.b_scale)
                 for b in state.B)
    total += log_gamma_pdf(float(state.Bstar), hyper.bstar_shape,
                           hyper.bstar_scale)

    # Bernoulli activations.
    n_active = int(state.A.sum())
    total += n_active * log(hyper.alpha) + (D * P - n_active) * log(
        1.0 - hyper.alpha)

    # Patient-phenotype Dirichlet priors.
    prior = prior_matrix(state.A, state.B, state.Bstar)
    total += float(gammaln(prior.sum(axis=1)).sum() - gammaln(prior).sum()
                   + ((prior - 1.0) * floored_log(state.theta)).sum())

    # Token terms: log theta_d[z] + log phi_s[z, w].
    log_theta = floored_log(state.theta)
    for s in range(corpus.num_sources):
        for d in range(D):
            z_sd = state.z[s][d]
            if z_sd.size == 0:
                continue
            w_sd = corpus.tokens[s][d]
            phi_vals = state.phi[s][z_sd, w_sd]
            if np.any(phi_vals == 0.0):
                return float("-inf")
            total += float(log_theta[d, z_sd].sum()
                           + np.log(phi_vals).sum())

    if np.isnan(total):
        raise NumericalError("complete-data log-likelihood is NaN")
    return float(total)


def phenotype_summary(state: ModelState, corpus: Corpus, k: int):
    """Top-k tokens per (source, phenotype), sorted by descending
    probability with ties broken by ascending token ID.

    Returns a nested list: summary[s][p] = [(token, prob), ...].
    """
    if k < 1:
        raise ConfigError("k must be positive")
    out = []
    for s in range(corpus.num_sources):
        phi_s = state.phi[s]
        v_s = phi_s.shape[1]
        kk = min(k, v_s)
        per_phen = []
        for p in range(phi_s.shape[0]):
            # lexsort: primary key descending probability, ties by token ID.
            order = np.lexsort((np.arange(v_s), -phi_s[p]))[:kk]
            per_phen.append([(corpus.vocab[s][v], float(phi_s[p, v]))
                             for v in order])
        out.append(per_phen)
    return out
