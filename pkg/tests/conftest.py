import numpy as np
import pytest

from ss3m.model import Corpus, Hyperparameters, ModelState
from ss3m.util import sample_dirichlet


def make_hyper(P=3, P_lab=0, S=1, alpha=0.3, gamma=0.5, **kw):
    return Hyperparameters(
        num_phenotypes=P, num_labeled=P_lab, num_sources=S,
        alpha=alpha, gamma=(gamma,) * S, **kw)


def random_tiny_state(rng, D=2, P=2, S=1, V=3, max_tokens=3,
                      b_low=0.1, b_high=20.0, bstar_low=1e-4, bstar_high=1.0):
    """A consistent random (state, corpus) pair with moderate parameter
    ranges (keeps independent density oracles away from underflow)."""
    vocab = [[f"s{s}_w{v}" for v in range(V)] for s in range(S)]
    tokens = [[rng.integers(0, V, size=rng.integers(0, max_tokens + 1))
               for _ in range(D)] for _ in range(S)]
    corpus = Corpus(vocab=vocab, tokens=tokens)
    A = rng.integers(0, 2, size=(D, P)).astype(np.int8)
    B = rng.uniform(b_low, b_high, size=P)
    Bstar = float(np.exp(rng.uniform(np.log(bstar_low), np.log(bstar_high))))
    theta = sample_dirichlet(np.full((D, P), 2.0), rng)
    phi = [sample_dirichlet(np.full((P, V), 2.0), rng) for _ in range(S)]
    z = [[rng.integers(0, P, size=w.size) for w in per_source]
         for per_source in tokens]
    state = ModelState(theta=theta, phi=phi, z=z, A=A, B=B, Bstar=Bstar)
    return state, corpus


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
