"""Shared numeric primitives, the Bayesian model interface, and RNG streams.

Everything in this module is a pure function over immutable inputs and is
safe to call from any thread.  RNG streams are single-owner: parallel code
must pre-split streams with :func:`rng_stream` rather than share one
generator.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

# Any sampler coordinate beyond this magnitude is treated as divergence.
DIVERGENCE_LIMIT = 1e8

# Central-difference step; balances truncation and rounding error for
# double precision on O(1)-scale parameters.
FD_STEP = 1e-5


class UsageError(ValueError):
    """The caller violated a documented precondition."""


class NumericError(RuntimeError):
    """A numeric evaluation produced a non-finite value."""


class DivergenceError(RuntimeError):
    """A sampler state left the finite region it is allowed to occupy."""

    def __init__(self, message: str, theta=None, context: str | None = None):
        if context:
            message = f"{message} ({context})"
        super().__init__(message)
        self.theta = None if theta is None else np.asarray(theta)
        self.context = context


class DegenerateEnsembleError(RuntimeError):
    """All particles carry zero weight; the estimate cannot continue."""


class EstimatorTimeout(RuntimeError):
    """A run exceeded its wall-clock budget."""


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the generator for (seed, stream).

    Identical (seed, stream) pairs yield identical draw sequences no matter
    how many other streams exist or which thread consumes them, so particle
    loops can be parallelised without changing results.  Built on the
    counter-based Philox bit generator.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) computed by max-shift, overflow-free.

    An all ``-inf`` input is valid (zero total mass) and returns ``-inf``;
    an empty input is a usage error.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise UsageError("log_sum_exp of an empty vector")
    if np.isnan(v).any() or np.any(v == np.inf):
        raise UsageError("log_sum_exp entries must lie in [-inf, +inf)")
    m = float(np.max(v))
    if m == -np.inf:
        return -np.inf
    return m + math.log(float(np.sum(np.exp(v - m))))


def log_mean_exp(values) -> float:
    """log of the arithmetic mean of exp(values); same domain as log_sum_exp."""
    v = np.asarray(values, dtype=float)
    return log_sum_exp(v) - math.log(v.size) if v.size else log_sum_exp(v)


def finite_diff_grad(f, theta, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector.

    Test oracle for hand-derived model gradients.  Raises
    :class:`NumericError` naming the coordinate if an evaluation is
    non-finite.
    """
    if h <= 0:
        raise UsageError("finite difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h
        fp = f(theta + step)
        fm = f(theta - step)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(
                f"non-finite evaluation while differencing coordinate {j}"
            )
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


class BayesModel(ABC):
    """Everything an estimator needs from a Bayesian model.

    Implementations provide per-observation log-likelihoods and their
    hand-derived gradients in an unconstrained parameter space, plus a
    prior sampler.  ``log_lik`` must be finite for every finite parameter
    vector and every observation the model can generate.  Observations are
    rows of a float array with ``obs_arity`` columns.
    """

    dim: int
    obs_arity: int

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float: ...

    @abstractmethod
    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def log_lik(self, theta: np.ndarray, obs: np.ndarray) -> float: ...

    @abstractmethod
    def grad_log_lik(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def sample_prior(self, rng: np.random.Generator) -> np.ndarray: ...

    # Batch paths used in hot loops; subclasses override with vectorised
    # versions.  The defaults define the contract: plain sums of the
    # per-observation quantities.

    def log_lik_batch(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Per-row log-likelihoods for a 2-D observation block."""
        obs = np.atleast_2d(obs)
        return np.array([self.log_lik(theta, row) for row in obs])

    def log_lik_total(self, theta: np.ndarray, obs: np.ndarray) -> float:
        """Summed log-likelihood of a 2-D observation block."""
        if len(obs) == 0:
            return 0.0
        return float(np.sum(self.log_lik_batch(theta, obs)))

    def grad_log_lik_total(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`log_lik_total` with respect to theta."""
        obs = np.atleast_2d(obs)
        g = np.zeros(self.dim)
        for row in obs:
            g += self.grad_log_lik(theta, row)
        return g
