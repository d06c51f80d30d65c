"""Stochastic gradient Hamiltonian Monte Carlo kernel.

The integrator advances a (position, momentum) pair under a stochastic
estimate of the potential energy of a tempered sequential posterior:

    U(theta) = -lam * log p(chunk | theta)
               - (n_prev / |B|) * sum_{y in B} log p(y | theta)
               - log p(theta)

where B is a mini-batch drawn i.i.d. with replacement from the previously
observed data, so the stochastic gradient is an unbiased estimate of the
exact one.  One gradient evaluation is made per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DIVERGENCE_LIMIT, BayesModel, DivergenceError, UsageError


@dataclass(frozen=True)
class SghmcParams:
    """Integrator tunables.

    ``eta`` is the learning rate, ``1 - alpha`` the per-step momentum
    decay, and ``beta_hat`` an optional offset for the variance of the
    stochastic gradient term (kept at 0 throughout; the injected noise
    scale is then sqrt(2 * alpha * eta) per coordinate).
    """

    eta: float
    alpha: float = 0.2
    beta_hat: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise UsageError("eta must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError("alpha must lie in (0, 1]")
        if not 0.0 <= self.beta_hat <= self.alpha:
            raise UsageError("beta_hat must lie in [0, alpha]")

    @property
    def noise_scale(self) -> float:
        return math.sqrt(2.0 * (self.alpha - self.beta_hat) * self.eta)


@dataclass
class KineticState:
    """Position/momentum pair of one particle."""

    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.momentum = np.asarray(self.momentum, dtype=float)
        if self.position.shape != self.momentum.shape:
            raise UsageError("position and momentum must have equal length")

    def copy(self) -> "KineticState":
        return KineticState(self.position.copy(), self.momentum.copy())


@dataclass
class PotentialSpec:
    """Target of the integrator: one tempered sequential posterior.

    ``chunk`` is the observation block currently being annealed in with
    exponent ``lam``; ``history`` supplies mini-batches standing in for the
    ``n_prev`` observations already absorbed.  With ``n_prev == 0`` the
    history term is exactly zero and the gradient is deterministic.
    """

    model: BayesModel
    chunk: np.ndarray
    lam: float
    n_prev: int = 0
    history: object | None = None  # needs .sample(size, rng) and .n_seen
    batch_size: int = 1

    def __post_init__(self):
        self.chunk = np.atleast_2d(np.asarray(self.chunk, dtype=float))
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError("lam must lie in [0, 1]")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.n_prev < 0:
            raise UsageError("n_prev must be nonnegative")


def prior_only_spec(model: BayesModel) -> PotentialSpec:
    """Potential with no data terms: U(theta) = -log p(theta)."""
    return PotentialSpec(model, np.zeros((0, model.obs_arity)), lam=0.0)


def potential_grad_for_batch(
    spec: PotentialSpec, theta: np.ndarray, batch: np.ndarray | None
) -> np.ndarray:
    """Potential gradient for an explicitly given history mini-batch.

    Deterministic core of :func:`stochastic_potential_grad`; exposed so the
    unbiasedness of the mini-batch estimator can be checked by exhaustive
    enumeration over all ordered batches.
    """
    g = np.asarray(spec.model.grad_log_prior(theta), dtype=float).copy()
    if spec.lam > 0.0 and spec.chunk.shape[0]:
        g += spec.lam * spec.model.grad_log_lik_total(theta, spec.chunk)
    if spec.n_prev > 0:
        if batch is None or len(batch) == 0:
            raise UsageError("history mini-batch required when n_prev > 0")
        scale = spec.n_prev / len(batch)
        g += scale * spec.model.grad_log_lik_total(theta, np.atleast_2d(batch))
    grad = -g
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite potential gradient", theta=theta)
    return grad


def stochastic_potential_grad(
    spec: PotentialSpec, theta: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Unbiased stochastic gradient of the potential at theta.

    Draws a fresh mini-batch (i.i.d. with replacement) from the history
    source; its expectation over batches equals the exact gradient.
    """
    batch = None
    if spec.n_prev > 0:
        if spec.history is None or spec.history.n_seen == 0:
            raise UsageError("n_prev > 0 but the history source is empty")
        batch = spec.history.sample(spec.batch_size, rng)
    return potential_grad_for_batch(spec, theta, batch)


def _check_state(pos: np.ndarray, mom: np.ndarray, context: str | None):
    bad = not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom)))
    if bad or np.max(np.abs(pos)) > DIVERGENCE_LIMIT:
        raise DivergenceError("integrator state diverged", theta=pos, context=context)


def sghmc_step(
    state: KineticState,
    spec: PotentialSpec,
    params: SghmcParams,
    rng: np.random.Generator,
    context: str | None = None,
) -> KineticState:
    """One integrator step.

    position' = position + momentum
    momentum' = momentum - eta * grad_U(position) - alpha * momentum + noise

    with the gradient evaluated at the pre-step position and fresh standard
    Gaussian noise scaled by sqrt(2 (alpha - beta_hat) eta) per coordinate.
    The noise is drawn even when its scale is zero so that a (seed, stream)
    pair maps to the same draw sequence regardless of parameters.
    """
    grad = stochastic_potential_grad(spec, state.position, rng)
    eps = rng.standard_normal(state.momentum.shape)
    pos = state.position + state.momentum
    mom = (
        state.momentum
        - params.eta * grad
        - params.alpha * state.momentum
        + params.noise_scale * eps
    )
    _check_state(pos, mom, context)
    return KineticState(pos, mom)


def sghmc_burn_in(
    state: KineticState,
    spec: PotentialSpec,
    params: SghmcParams,
    steps: int,
    rng: np.random.Generator,
    context: str | None = None,
) -> KineticState:
    """Apply ``steps`` integrator steps with a fresh mini-batch each step."""
    if steps < 1:
        raise UsageError("steps must be >= 1")
    for _ in range(steps):
        state = sghmc_step(state, spec, params, rng, context=context)
    return state
