"""Hamiltonian Monte Carlo over unconstrained coordinates, plus the
log-transformed conditional targets for the prior pseudo-counts B_p and
Bstar.

Positivity of B_p and Bstar is handled by sampling eta = log(B) with the
exp-transform Jacobian folded into the target density, so the kernel itself
is plain HMC with an identity mass matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .errors import ConfigError, NumericalError
from .util import PROB_FLOOR, floored_log


class DifferentiableTarget:
    """Log-density with gradient, both over an unconstrained real vector."""

    def log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FunctionTarget(DifferentiableTarget):
    def __init__(self, log_density, gradient):
        self._f = log_density
        self._g = gradient

    def log_density(self, x):
        return float(self._f(np.asarray(x, dtype=float)))

    def gradient(self, x):
        return np.asarray(self._g(np.asarray(x, dtype=float)), dtype=float)


@dataclass
class HmcResult:
    next_point: np.ndarray
    accepted: bool
    hamiltonian_error: float


def leapfrog(x, momentum, target: DifferentiableTarget, eps: float, L: int):
    """Standard leapfrog integration of L steps of size eps.

    Uses potential U = -log_density, so dp/dt = gradient of log_density.
    Exactly reversible: negate the final momentum and integrate again to
    return to the start.
    """
    if eps <= 0:
        raise ConfigError("step size must be positive")
    if L < 1:
        raise ConfigError("path length must be at least 1")
    x = np.array(x, dtype=float)
    p = np.array(momentum, dtype=float)
    grad = target.gradient(x)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient at leapfrog step 0")
    p = p + 0.5 * eps * grad
    for step in range(L):
        x = x + eps * p
        grad = target.gradient(x)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at leapfrog step {step + 1}")
        if step < L - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return x, p


def hmc_step(x, target: DifferentiableTarget, eps: float, L: int,
             rng: np.random.Generator) -> HmcResult:
    """One Metropolis-corrected HMC transition from x."""
    x = np.asarray(x, dtype=float)
    logp0 = target.log_density(x)
    if not np.isfinite(logp0):
        raise NumericalError("log-density not finite at the current point")
    p0 = rng.standard_normal(x.shape)
    x1, p1 = leapfrog(x, p0, target, eps, L)
    h0 = -logp0 + 0.5 * float(p0 @ p0)
    h1 = -target.log_density(x1) + 0.5 * float(p1 @ p1)
    dh = h1 - h0
    if not np.isfinite(dh):
        return HmcResult(next_point=x.copy(), accepted=False,
                         hamiltonian_error=float("inf"))
    if np.log(rng.random()) < -dh:
        return HmcResult(next_point=x1, accepted=True, hamiltonian_error=dh)
    return HmcResult(next_point=x.copy(), accepted=False, hamiltonian_error=dh)


class _LogBTarget(DifferentiableTarget):
    """Conditional for eta = log B_p given everything else.

    log_density(eta) = eta*b_shape - exp(eta)/b_scale
        + sum over active patients of
          [lgamma(T_d(b)) - lgamma(b) + (b - 1) * log theta_dp],
    with b = exp(eta) and T_d(b) the patient's total prior concentration
    with coordinate p set to b. The eta*b_shape term is the Gamma prior's
    (shape-1)*eta plus the +eta exp-transform Jacobian.
    """

    def __init__(self, base_totals, log_theta_p, b_shape, b_scale):
        self.base = np.asarray(base_totals, dtype=float)   # T_d minus coord p
        self.logt = np.asarray(log_theta_p, dtype=float)   # floored logs
        self.shape = float(b_shape)
        self.scale = float(b_scale)

    def _b(self, eta):
        return max(float(np.exp(float(np.asarray(eta).reshape(())))), PROB_FLOOR)

    def log_density(self, eta):
        b = self._b(eta)
        val = float(np.asarray(eta).reshape(())) * self.shape - b / self.scale
        if self.base.size:
            totals = self.base + b
            val += float(gammaln(totals).sum() - self.base.size * gammaln(b)
                         + (b - 1.0) * self.logt.sum())
        return val

    def gradient(self, eta):
        b = self._b(eta)
        g = self.shape - b / self.scale
        if self.base.size:
            totals = self.base + b
            # Multiply by b inside the sum: digamma(t) ~ -1/t for tiny t,
            # so b*digamma stays O(1) where the bare sum could overflow.
            g += float((b * digamma(totals)).sum()
                       - self.base.size * b * digamma(b)
                       + b * self.logt.sum())
        return np.array([g])


class _LogBstarTarget(DifferentiableTarget):
    """Conditional for eta = log Bstar given everything else.

    Each patient d contributes lgamma(T_d) - k_d*lgamma(b) +
    (b-1)*sum of log theta over its k_d inactive coordinates, where
    T_d = (sum of active B) + k_d*b.
    """

    def __init__(self, active_totals, k_inactive, sum_log_theta_inactive,
                 bstar_shape, bstar_scale):
        self.active = np.asarray(active_totals, dtype=float)
        self.k = np.asarray(k_inactive, dtype=float)
        self.slt = np.asarray(sum_log_theta_inactive, dtype=float)
        self.shape = float(bstar_shape)
        self.scale = float(bstar_scale)

    def _b(self, eta):
        return max(float(np.exp(float(np.asarray(eta).reshape(())))), PROB_FLOOR)

    def log_density(self, eta):
        b = self._b(eta)
        val = float(np.asarray(eta).reshape(())) * self.shape - b / self.scale
        if self.active.size:
            totals = self.active + self.k * b
            val += float(gammaln(totals).sum() - gammaln(b) * self.k.sum()
                         + (b - 1.0) * self.slt.sum())
        return val

    def gradient(self, eta):
        b = self._b(eta)
        g = self.shape - b / self.scale
        if self.active.size:
            totals = self.active + self.k * b
            g += float((self.k * b * digamma(totals)).sum()
                       - b * digamma(b) * self.k.sum() + b * self.slt.sum())
        return np.array([g])


def b_target(p: int, state, hyper) -> DifferentiableTarget:
    """Target over eta = log B_p. With no active patients for p the density
    reduces to the transformed Gamma prior alone."""
    active = state.A[:, p] == 1
    from .model import prior_matrix
    prior = prior_matrix(state.A, state.B, state.Bstar)
    base = prior[active].sum(axis=1) - state.B[p]
    log_theta_p = floored_log(state.theta[active, p])
    return _LogBTarget(base, log_theta_p, hyper.b_shape, hyper.b_scale)


def bstar_target(state, hyper) -> DifferentiableTarget:
    """Target over eta = log Bstar, summed over all patients' inactive
    phenotype coordinates."""
    A = state.A
    inactive = A == 0
    active_totals = (A * state.B[None, :]).sum(axis=1)
    k = inactive.sum(axis=1)
    slt = (inactive * floored_log(state.theta)).sum(axis=1)
    return _LogBstarTarget(active_totals, k, slt,
                           hyper.bstar_shape, hyper.bstar_scale)
