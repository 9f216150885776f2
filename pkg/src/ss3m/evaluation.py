"""Held-out label prediction, baseline classifiers, and the metric suite
(micro/macro AUROC and AUPRC plus max complete-data log-likelihood).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln
from scipy.stats import rankdata

from . import gibbs
from .errors import (
    ConfigError,
    DataError,
    OptimizationError,
    UndefinedMetricError,
)
from .model import (
    LABEL_PRESENT,
    Corpus,
    Hyperparameters,
    LabelMatrix,
    ModelState,
    prior_matrix,
)
from .util import sample_dirichlet, substream

logger = logging.getLogger(__name__)

SUITE_COLUMNS = (
    "ss3m_smplA0_smplB",
    "ss3m_smplA0_fixB",
    "ss3m_fixA0_smplB",
    "ss3m_fixA0_fixB",
    "mc3m_sp_lr",
    "mc3m_sp_nb",
    "mc3m_lr",
    "mc3m_nb",
    "raw_lr",
    "raw_nb",
)


@dataclass
class ScoreMatrix:
    """D_test x P_lab scores; higher means more likely Present."""

    scores: np.ndarray
    label_names: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(self.scores)):
            raise DataError("scores must be finite")


@dataclass
class HeldoutResult:
    score_matrix: ScoreMatrix
    theta_mean: np.ndarray
    activation_mean: np.ndarray


@dataclass
class MetricsReport:
    model_id: str
    auroc_micro: float = None
    auroc_macro: float = None
    auprc_micro: float = None
    auprc_macro: float = None
    max_log_likelihood: float = None  # absent for raw-token baselines


def _sample_activations_collapsed(state, counts, hyper, rng):
    """Resample every activation bit from P(A_dp | z, A_d,-p) with theta
    integrated out (Dirichlet-multinomial marginal).

    The plain conditional given theta cannot move when Bstar is a spike
    near zero: an interior theta coordinate forces A on, a corner forces
    it off, and theta in turn follows A. Collapsing theta restores mixing
    while leaving the stationary distribution unchanged (blocked Gibbs:
    A given z, then theta given A and z).
    """
    D, P = state.A.shape
    prior_bias = np.log(hyper.alpha) - np.log1p(-hyper.alpha)
    totals = counts.sum(axis=1)
    for d in range(D):
        n_d = counts[d]
        N = totals[d]
        for p in range(P):
            base = 0.0
            for q in range(P):
                if q != p:
                    base += state.B[q] if state.A[d, q] else state.Bstar
            t_on = base + state.B[p]
            t_off = base + state.Bstar
            log_odds = (prior_bias
                        + gammaln(t_on) - gammaln(t_on + N)
                        + gammaln(state.B[p] + n_d[p]) - gammaln(state.B[p])
                        - gammaln(t_off) + gammaln(t_off + N)
                        - gammaln(state.Bstar + n_d[p])
                        + gammaln(state.Bstar))
            state.A[d, p] = 1 if rng.random() < expit(log_odds) else 0


def heldout_infer(test_corpus: Corpus, trained: ModelState,
                  hyper: Hyperparameters, burn_in: int = 50,
                  samples: int = 100, seed: int = 0,
                  label_names=None, theta_prior=None) -> HeldoutResult:
    """Patient-local Gibbs over (z, A, theta) with the trained globals
    (phi, B, Bstar) held fixed.

    Every labeled activation runs in Estimate mode -- the labels are what
    is being predicted. score(d, p) is the mean of sampled A_dp over the
    retained samples. theta_prior, when given, replaces the gated prior
    with a fixed symmetric concentration (the unstructured baseline) and
    skips activation updates.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    for s in range(test_corpus.num_sources):
        if trained.phi[s].shape[1] != len(test_corpus.vocab[s]):
            raise DataError(
                f"test vocabulary for source {s} does not match trained phi")
    rng = substream(seed, "evaluation.heldout")
    D = test_corpus.num_patients
    P = hyper.num_phenotypes
    P_lab = hyper.num_labeled
    gated = theta_prior is None

    state = ModelState(
        theta=np.empty((D, P)),
        phi=[p.copy() for p in trained.phi],
        z=[[rng.integers(0, P, size=w.size) for w in per_source]
           for per_source in test_corpus.tokens],
        # start fully active: when Bstar is a spike near zero the
        # off-to-on move has vanishing probability, so the chain must
        # prune activations rather than discover them
        A=np.ones((D, P), dtype=np.int8),
        B=trained.B.copy(),
        Bstar=float(trained.Bstar),
    )
    counts = gibbs.phenotype_counts(state, test_corpus)
    prior = (prior_matrix(state.A, state.B, state.Bstar) if gated
             else np.full((D, P), float(theta_prior)))
    state.theta = sample_dirichlet(prior + counts, rng)

    a_sum = np.zeros((D, P))
    theta_sum = np.zeros((D, P))
    for it in range(burn_in + samples):
        for s in range(test_corpus.num_sources):
            lengths = [w.size for w in test_corpus.tokens[s]]
            if sum(lengths) == 0:
                continue
            w_flat = np.concatenate(
                [w for w in test_corpus.tokens[s] if w.size])
            doc_idx = np.repeat(np.arange(D), lengths)
            z_flat = gibbs._sample_z_batch(
                state.theta, state.phi[s], w_flat, doc_idx, rng)
            state.z[s] = list(np.split(z_flat, np.cumsum(lengths)[:-1]))
        counts = gibbs.phenotype_counts(state, test_corpus)
        if gated:
            _sample_activations_collapsed(state, counts, hyper, rng)
        prior = (prior_matrix(state.A, state.B, state.Bstar) if gated
                 else np.full((D, P), float(theta_prior)))
        state.theta = sample_dirichlet(prior + counts, rng)
        if it >= burn_in:
            a_sum += state.A
            theta_sum += state.theta

    a_mean = a_sum / samples
    theta_mean = theta_sum / samples
    if label_names is None:
        label_names = [f"label_{p}" for p in range(P_lab)]
    return HeldoutResult(
        score_matrix=ScoreMatrix(scores=a_mean[:, :P_lab],
                                 label_names=list(label_names)),
        theta_mean=theta_mean,
        activation_mean=a_mean,
    )


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def auroc(scores, truth) -> float:
    """Mann-Whitney AUROC with ties counted half."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            "AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def auprc(scores, truth) -> float:
    """Area under the precision-recall curve by step-wise summation over
    descending unique score thresholds, ties grouped."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    t_sorted = truth[order]
    # indices where a threshold group ends (last occurrence of each value)
    distinct = np.flatnonzero(np.diff(s_sorted))
    ends = np.append(distinct, len(s_sorted) - 1)
    tp = np.cumsum(t_sorted)[ends]
    n_at = ends + 1.0
    precision = tp / n_at
    recall = tp / n_pos
    return float(np.sum(np.diff(np.concatenate(([0.0], recall))) * precision))


def micro_macro(per_label_fn, scores, truth):
    """(micro, macro) for a per-label metric. Macro averages over labels
    where the metric is defined (skips logged); micro pools all pairs."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ConfigError("scores and truth must have identical shape")
    values = []
    skipped = 0
    for j in range(scores.shape[1]):
        try:
            values.append(per_label_fn(scores[:, j], truth[:, j]))
        except UndefinedMetricError:
            skipped += 1
    if skipped:
        logger.warning("macro average skipped %d degenerate label(s)", skipped)
    if not values:
        raise UndefinedMetricError("metric undefined for every label")
    macro = float(np.mean(values))
    micro = float(per_label_fn(scores.ravel(), truth.ravel()))
    return micro, macro


# ---------------------------------------------------------------------------
# Baseline classifiers (one-vs-rest)
# ---------------------------------------------------------------------------

NB_MULTINOMIAL = "multinomial"
NB_GAUSSIAN = "gaussian"
_VAR_FLOOR = 1e-6


def nb_train(features, truth, mode: str):
    """Fit one-vs-rest naive Bayes.

    multinomial: token counts with add-one smoothing (raw-token features);
    gaussian: per-dimension mean/variance with a variance floor (simplex
    features). Returns an opaque model dict for nb_predict.
    """
    X = np.asarray(features, dtype=float)
    Y = np.asarray(truth).astype(bool)
    if mode not in (NB_MULTINOMIAL, NB_GAUSSIAN):
        raise ConfigError(f"unknown naive Bayes mode {mode!r}")
    n, _ = X.shape
    models = []
    for j in range(Y.shape[1]):
        y = Y[:, j]
        n1 = int(y.sum())
        n0 = n - n1
        log_prior = np.log((n1 + 1.0) / (n + 2.0)) - np.log(
            (n0 + 1.0) / (n + 2.0))
        if n1 == 0 or n0 == 0:
            # degenerate class: fall back to the prior log-odds alone
            models.append({"degenerate": True, "log_prior": log_prior})
            continue
        if mode == NB_MULTINOMIAL:
            c1 = X[y].sum(axis=0) + 1.0
            c0 = X[~y].sum(axis=0) + 1.0
            models.append({
                "degenerate": False,
                "log_prior": log_prior,
                "log_p1": np.log(c1 / c1.sum()),
                "log_p0": np.log(c0 / c0.sum()),
            })
        else:
            models.append({
                "degenerate": False,
                "log_prior": log_prior,
                "mu1": X[y].mean(axis=0),
                "var1": np.maximum(X[y].var(axis=0), _VAR_FLOOR),
                "mu0": X[~y].mean(axis=0),
                "var0": np.maximum(X[~y].var(axis=0), _VAR_FLOOR),
            })
    return {"mode": mode, "labels": models}


def nb_predict(model, features) -> np.ndarray:
    """Posterior log-odds scores, one column per label."""
    X = np.asarray(features, dtype=float)
    cols = []
    for m in model["labels"]:
        if m["degenerate"]:
            cols.append(np.full(X.shape[0], m["log_prior"]))
        elif model["mode"] == NB_MULTINOMIAL:
            cols.append(m["log_prior"] + X @ (m["log_p1"] - m["log_p0"]))
        else:
            ll1 = -0.5 * (np.log(2 * np.pi * m["var1"])
                          + (X - m["mu1"]) ** 2 / m["var1"]).sum(axis=1)
            ll0 = -0.5 * (np.log(2 * np.pi * m["var0"])
                          + (X - m["mu0"]) ** 2 / m["var0"]).sum(axis=1)
            cols.append(m["log_prior"] + ll1 - ll0)
    return np.column_stack(cols)


def _lr_loss_grad(w, Xb, y, lam):
    """L2-regularized logistic loss and gradient; intercept (last
    coordinate) is not regularized."""
    logits = Xb @ w
    # log(1 + exp(-m)) with m = y_pm * logits, stable both directions
    m = np.where(y, logits, -logits)
    loss = float(np.logaddexp(0.0, -m).sum())
    p = expit(logits)
    grad = Xb.T @ (p - y)
    loss += 0.5 * lam * float(w[:-1] @ w[:-1])
    grad = grad + lam * np.append(w[:-1], 0.0)
    return loss, grad


def lr_train(features, truth, lam: float = 1.0, epochs: int = 200,
             learning_rate: float = 1.0):
    """One-vs-rest L2 logistic regression by full-batch gradient descent
    with backtracking line search (objective decreases monotonically)."""
    X = np.asarray(features, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    Y = np.asarray(truth).astype(bool)
    Xb = np.column_stack([X, np.ones(X.shape[0])])
    weights = []
    for j in range(Y.shape[1]):
        y = Y[:, j].astype(float)
        w = np.zeros(Xb.shape[1])
        loss, grad = _lr_loss_grad(w, Xb, y, lam)
        for _ in range(epochs):
            gnorm2 = float(grad @ grad)
            if gnorm2 < 1e-18:
                break
            t = learning_rate
            stalled = False
            while t > 1e-14:
                w_new = w - t * grad
                new_loss, new_grad = _lr_loss_grad(w_new, Xb, y, lam)
                if not np.isfinite(new_loss):
                    raise OptimizationError(
                        "objective diverged to a non-finite value")
                if new_loss < loss:
                    break
                t *= 0.5
            else:
                # no step along -grad improves the objective: we are at
                # the floating-point optimum, which counts as converged
                stalled = True
            if stalled:
                break
            w, loss, grad = w_new, new_loss, new_grad
        weights.append(w)
    return {"weights": np.array(weights), "lam": lam}


def lr_predict(model, features) -> np.ndarray:
    """Logit scores, one column per label."""
    X = np.asarray(features, dtype=float)
    Xb = np.column_stack([X, np.ones(X.shape[0])])
    return Xb @ model["weights"].T


# ---------------------------------------------------------------------------
# Feature extraction and the full suite
# ---------------------------------------------------------------------------

def raw_token_features(corpus: Corpus) -> np.ndarray:
    """Per-patient token-count vectors, sources concatenated."""
    D = corpus.num_patients
    blocks = []
    for s in range(corpus.num_sources):
        v_s = len(corpus.vocab[s])
        block = np.zeros((D, v_s))
        for d in range(D):
            w = corpus.tokens[s][d]
            if w.size:
                block[d] = np.bincount(w, minlength=v_s)
        blocks.append(block)
    return np.hstack(blocks)


def truth_matrix(labels: LabelMatrix) -> np.ndarray:
    """Binary truth for metrics: Present -> 1, anything else -> 0."""
    return (labels.entries == LABEL_PRESENT).astype(int)


def compute_report(model_id: str, scores, truth,
                   max_log_likelihood=None) -> MetricsReport:
    roc_micro, roc_macro = micro_macro(auroc, scores, truth)
    prc_micro, prc_macro = micro_macro(auprc, scores, truth)
    return MetricsReport(
        model_id=model_id,
        auroc_micro=roc_micro, auroc_macro=roc_macro,
        auprc_micro=prc_micro, auprc_macro=prc_macro,
        max_log_likelihood=max_log_likelihood,
    )


def evaluate_suite(artifacts: dict, train_corpus: Corpus,
                   train_labels: LabelMatrix, test_corpus: Corpus,
                   test_labels: LabelMatrix, hyper: Hyperparameters,
                   burn_in: int = 50, samples: int = 100, seed: int = 0,
                   mc3m_concentration: float = 1.0,
                   lr_lam: float = 1.0, lr_epochs: int = 200):
    """One MetricsReport per configured column.

    artifacts maps a subset of SUITE_COLUMNS' mixed-membership ids
    ("ss3m_*", "mc3m_sp", "mc3m") to (ModelState, max_log_likelihood).
    Missing artifacts yield placeholder (all-None) reports. The raw-token
    columns need no artifact.
    """
    truth_test = truth_matrix(test_labels)
    truth_train = truth_matrix(train_labels)
    reports = []

    for col in SUITE_COLUMNS[:4]:
        if col not in artifacts:
            logger.warning("no artifact for %s; emitting placeholder", col)
            reports.append(MetricsReport(model_id=col))
            continue
        state, max_ll = artifacts[col]
        res = heldout_infer(test_corpus, state, hyper, burn_in=burn_in,
                            samples=samples, seed=seed,
                            label_names=test_labels.label_names)
        reports.append(compute_report(col, res.score_matrix.scores,
                                      truth_test, max_ll))

    for base_id in ("mc3m_sp", "mc3m"):
        present = base_id in artifacts
        if not present:
            logger.warning("no artifact for %s; emitting placeholders", base_id)
        for clf in ("lr", "nb"):
            col = f"{base_id}_{clf}"
            if not present:
                reports.append(MetricsReport(model_id=col))
                continue
            state, max_ll = artifacts[base_id]
            theta_prior = mc3m_concentration if base_id == "mc3m" else None
            res = heldout_infer(test_corpus, state, hyper, burn_in=burn_in,
                                samples=samples, seed=seed,
                                label_names=test_labels.label_names,
                                theta_prior=theta_prior)
            feats_train = state.theta  # max-likelihood theta on train
            feats_test = res.theta_mean
            if clf == "lr":
                model = lr_train(feats_train, truth_train, lam=lr_lam,
                                 epochs=lr_epochs)
                scores = lr_predict(model, feats_test)
            else:
                model = nb_train(feats_train, truth_train, NB_GAUSSIAN)
                scores = nb_predict(model, feats_test)
            reports.append(compute_report(col, scores, truth_test, max_ll))

    feats_train = raw_token_features(train_corpus)
    feats_test = raw_token_features(test_corpus)
    model = lr_train(feats_train, truth_train, lam=lr_lam, epochs=lr_epochs)
    reports.append(compute_report(
        "raw_lr", lr_predict(model, feats_test), truth_test))
    model = nb_train(feats_train, truth_train, NB_MULTINOMIAL)
    reports.append(compute_report(
        "raw_nb", nb_predict(model, feats_test), truth_test))
    return reports


def reports_to_csv(reports) -> str:
    """CSV with columns model_id, metric, averaging, value."""
    lines = ["model_id,metric,averaging,value"]
    for r in reports:
        for metric, avg, value in (
                ("auroc", "micro", r.auroc_micro),
                ("auroc", "macro", r.auroc_macro),
                ("auprc", "micro", r.auprc_micro),
                ("auprc", "macro", r.auprc_macro),
                ("log_likelihood", "", r.max_log_likelihood)):
            rendered = "" if value is None else repr(float(value))
            lines.append(f"{r.model_id},{metric},{avg},{rendered}")
    return "\n".join(lines) + "\n"


def reports_to_table(reports) -> str:
    """Aligned text table: metric rows by model columns."""
    by_id = {r.model_id: r for r in reports}
    ids = [r.model_id for r in reports]
    rows = [
        ("AUROC micro", "auroc_micro"),
        ("AUROC macro", "auroc_macro"),
        ("AUPRC micro", "auprc_micro"),
        ("AUPRC macro", "auprc_macro"),
        ("Log-likelihood", "max_log_likelihood"),
    ]
    width = max(14, max(len(i) for i in ids) + 2)
    header = f"{'':<16}" + "".join(f"{i:>{width}}" for i in ids)
    lines = [header]
    for title, attr in rows:
        cells = []
        for i in ids:
            v = getattr(by_id[i], attr)
            if v is None:
                cells.append(f"{'--':>{width}}")
            elif attr == "max_log_likelihood":
                cells.append(f"{v:>{width}.6g}")
            else:
                cells.append(f"{v:>{width}.3f}")
        lines.append(f"{title:<16}" + "".join(cells))
    return "\n".join(lines) + "\n"


def export_scores_csv(score_matrix: ScoreMatrix, patient_ids) -> str:
    """CSV with header patient_id,label,score."""
    lines = ["patient_id,label,score"]
    for i, pid in enumerate(patient_ids):
        for j, name in enumerate(score_matrix.label_names):
            lines.append(f"{pid},{name},{score_matrix.scores[i, j]!r}")
    return "\n".join(lines) + "\n"
