"""Sequential evidence estimation with adaptive thermal annealing.

The estimator folds chunks of observations into a particle ensemble: for
each chunk it anneals the chunk's likelihood exponent from 0 to 1 along an
adaptive schedule chosen by solving ESS(delta) = target, updating the
log importance weights by delta * log p(chunk | theta_i) at each step and
rejuvenating the particles with mini-batch SGHMC between steps.  After each
chunk, log_mean_exp of the weights estimates the log evidence of all data
seen so far.

All weights live in log space throughout; over long streams they span
thousands of nats.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BayesModel,
    DegenerateEnsembleError,
    DivergenceError,
    EstimatorTimeout,
    UsageError,
    log_mean_exp,
    log_sum_exp,
    rng_stream,
)
from .data import FullHistory
from .sghmc import KineticState, PotentialSpec, SghmcParams, sghmc_step

# One chunk must finish its schedule within this many annealing steps.
MAX_STEPS_PER_CHUNK = 10_000


class ScheduleError(RuntimeError):
    """The adaptive schedule failed to reach lambda = 1."""


@dataclass
class ParticleEnsemble:
    """The estimator's whole mutable state: M particles plus log-weights."""

    states: list
    log_weights: np.ndarray

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if len(self.states) != len(self.log_weights):
            raise UsageError("one log-weight per particle")
        if len(self.states) < 2:
            raise UsageError("need at least two particles")

    @property
    def n_particles(self) -> int:
        return len(self.states)

    def log_evidence(self) -> float:
        """Current estimate: log of the mean importance weight."""
        return log_mean_exp(self.log_weights)


def init_ensemble(model: BayesModel, particle_rngs) -> ParticleEnsemble:
    """Particles drawn from the prior with unit weights and zero momenta."""
    states = [
        KineticState(model.sample_prior(rng), np.zeros(model.dim))
        for rng in particle_rngs
    ]
    return ParticleEnsemble(states, np.zeros(len(states)))


@dataclass(frozen=True)
class EstimatorConfig:
    """All tunables of a sequential run.

    ``resample_threshold`` switches on adaptive resampling: before each
    MCMC update, resample when the cumulative-weight ESS drops below
    threshold * n_particles.  The default leaves resampling off.
    """

    sghmc: SghmcParams
    chunk_size: int = 500
    batch_size: int = 500
    n_particles: int = 10
    ess_target: float = 5.0
    burn_in_steps: int = 20
    resample_threshold: float | None = None
    seed: int = 0
    n_threads: int = 1

    def __post_init__(self):
        if self.chunk_size < 1 or self.batch_size < 1 or self.burn_in_steps < 1:
            raise UsageError("chunk_size, batch_size, burn_in_steps must be >= 1")
        if self.n_particles < 2:
            raise UsageError("need at least two particles")
        if not 1.0 <= self.ess_target <= self.n_particles:
            raise UsageError("ess_target must lie in [1, n_particles]")
        if self.resample_threshold is not None and not 0.0 < self.resample_threshold <= 1.0:
            raise UsageError("resample_threshold must lie in (0, 1]")

    @classmethod
    def for_data_size(cls, n_total: int, lr: float = 0.1, alpha: float = 0.2,
                      beta_hat: float = 0.0, **kwargs) -> "EstimatorConfig":
        """Defaults with the learning rate scaled per observation (eta = lr / N)."""
        return cls(sghmc=SghmcParams(eta=lr / n_total, alpha=alpha, beta_hat=beta_hat),
                   **kwargs)

    def with_overrides(self, **kwargs) -> "EstimatorConfig":
        return replace(self, **kwargs)


@dataclass
class AnnealRecord:
    """Per-chunk trace entry: the unit all results are reported in."""

    chunk_index: int
    lambdas: list
    log_z_after: float
    wall_time: float
    n_seen: int = 0

    @property
    def steps(self) -> int:
        return len(self.lambdas)


def incremental_ess(log_incr, delta: float) -> float:
    """Effective sample size of the tempered incremental weights.

    ESS(delta) = (sum_i w_i)^2 / sum_i w_i^2 with w_i = exp(delta *
    log_incr_i), evaluated in log space; always in [1, M], equal to M iff
    the exponents are all equal.
    """
    li = np.asarray(log_incr, dtype=float)
    if li.size == 0:
        raise UsageError("incremental_ess of an empty vector")
    if delta < 0:
        raise UsageError("delta must be nonnegative")
    a = delta * li
    return float(math.exp(2.0 * log_sum_exp(a) - log_sum_exp(2.0 * a)))


def solve_annealing_step(log_incr, lam: float, ess_target: float,
                         tol: float = 1e-10, max_iter: int = 60) -> float:
    """Largest admissible exponent increment for the next annealing step.

    Returns 1 - lam when the chunk can be finished in one jump without the
    ESS dropping below target; otherwise bisects ESS(delta) = ess_target on
    (0, 1 - lam) to absolute tolerance ``tol`` in delta.
    """
    li = np.asarray(log_incr, dtype=float)
    if not 0.0 <= lam < 1.0:
        raise UsageError("lam must lie in [0, 1)")
    if not 1.0 <= ess_target <= li.size:
        raise UsageError("ess_target must lie in [1, M]")
    remaining = 1.0 - lam
    if incremental_ess(li, remaining) >= ess_target:
        return remaining
    lo, hi = 0.0, remaining
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if incremental_ess(li, mid) >= ess_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def update_log_weights(ensemble: ParticleEnsemble, log_incr, delta: float) -> None:
    """log w_i += delta * log_incr_i, in place; nothing else is touched."""
    if not 0.0 < delta <= 1.0:
        raise UsageError("delta must lie in (0, 1]")
    li = np.asarray(log_incr, dtype=float)
    if not np.all(np.isfinite(li)):
        raise UsageError("incremental log-likelihoods must be finite")
    ensemble.log_weights += delta * li


def weight_ess(log_weights) -> float:
    """Cumulative-weight ESS (sum w)^2 / sum w^2, in log space."""
    lw = np.asarray(log_weights, dtype=float)
    return float(math.exp(2.0 * log_sum_exp(lw) - log_sum_exp(2.0 * lw)))


def systematic_resample(ensemble: ParticleEnsemble, rng: np.random.Generator) -> None:
    """Resample particles proportionally to their weights, in place.

    Single stratified uniform: one u ~ U[0, 1/M) probed at u + k/M against
    the normalized-weight CDF.  Every log-weight is then set to
    log_mean_exp of the old log-weights, which leaves the evidence
    estimate invariant.  Uniform weights reproduce each particle exactly
    once.
    """
    lw = ensemble.log_weights
    if np.all(lw == -np.inf):
        raise DegenerateEnsembleError("all particle weights are zero")
    m = ensemble.n_particles
    log_total = log_sum_exp(lw)
    weights = np.exp(lw - log_total)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    points = (rng.random() + np.arange(m)) / m
    idx = np.searchsorted(cdf, points, side="right")
    new_log_w = log_mean_exp(lw)
    ensemble.states = [ensemble.states[j].copy() for j in idx]
    ensemble.log_weights = np.full(m, new_log_w)


def _advance_particles(ensemble, spec, config, particle_rngs, executor, context):
    """burn_in_steps SGHMC steps per particle, one rng stream per particle."""

    def advance(i):
        state = ensemble.states[i]
        rng = particle_rngs[i]
        for _ in range(config.burn_in_steps):
            state = sghmc_step(state, spec, config.sghmc, rng, context=context)
        ensemble.states[i] = state

    indices = range(ensemble.n_particles)
    if executor is None:
        for i in indices:
            advance(i)
    else:
        list(executor.map(advance, indices))


def sgais_chunk_update(
    ensemble: ParticleEnsemble,
    chunk: np.ndarray,
    history,
    n_prev: int,
    config: EstimatorConfig,
    particle_rngs,
    resample_rng: np.random.Generator,
    chunk_index: int = 0,
    executor=None,
) -> AnnealRecord:
    """Absorb one chunk: anneal its exponent 0 -> 1 adaptively, in place.

    Each annealing step recomputes the particles' chunk log-likelihoods,
    solves for the exponent increment, updates the weights, optionally
    resamples (before the MCMC update), then rejuvenates every particle
    with mini-batch SGHMC targeting the partially-tempered posterior.
    Momenta are refreshed at the start of the chunk and persist across the
    inner loop.
    """
    chunk = np.atleast_2d(chunk)
    if chunk.shape[0] == 0:
        raise UsageError("chunk must be nonempty")
    context = f"chunk {chunk_index}"
    start = time.perf_counter()

    mom_scale = math.sqrt(config.sghmc.eta)
    for i, state in enumerate(ensemble.states):
        state.momentum = mom_scale * particle_rngs[i].standard_normal(state.momentum.shape)

    lam = 0.0
    lambdas: list[float] = []
    model = ensemble.states[0]  # placeholder to appease linters; replaced below
    del model
    while lam < 1.0:
        if len(lambdas) >= MAX_STEPS_PER_CHUNK:
            raise ScheduleError(
                f"chunk {chunk_index}: schedule exceeded {MAX_STEPS_PER_CHUNK} steps"
            )
        spec_model = history_model = None  # resolved through the spec below
        log_incr = np.array(
            [ensemble_model_log_lik(ensemble, i, chunk) for i in range(ensemble.n_particles)]
        )
        delta = solve_annealing_step(log_incr, lam, config.ess_target)
        full_jump = delta >= (1.0 - lam)
        lam = 1.0 if full_jump else lam + delta
        if lam >= 1.0:
            lam = 1.0
        update_log_weights(ensemble, log_incr, delta)
        lambdas.append(lam)
        if (
            config.resample_threshold is not None
            and weight_ess(ensemble.log_weights)
            < config.resample_threshold * ensemble.n_particles
        ):
            systematic_resample(ensemble, resample_rng)
        spec = PotentialSpec(
            _ensemble_model(ensemble),
            chunk,
            lam,
            n_prev=n_prev,
            history=history,
            batch_size=config.batch_size,
        )
        _advance_particles(ensemble, spec, config, particle_rngs, executor, context)

    return AnnealRecord(
        chunk_index=chunk_index,
        lambdas=lambdas,
        log_z_after=ensemble.log_evidence(),
        wall_time=time.perf_counter() - start,
        n_seen=n_prev + chunk.shape[0],
    )


def sgais_run(
    model: BayesModel,
    stream,
    config: EstimatorConfig,
    history=None,
    deadline: float | None = None,
) -> list[AnnealRecord]:
    """Run the sequential estimator over a chunked stream.

    Returns one record per chunk; the last record's ``log_z_after``
    estimates the log evidence of all consumed data.  The marginal cost per
    chunk is independent of how much data came before it (fixed mini-batch
    size).  Identical (config, seed) runs produce bit-identical traces.
    """
    particle_rngs = [rng_stream(config.seed, 1 + i) for i in range(config.n_particles)]
    resample_rng = rng_stream(config.seed, 0)
    data_rng = rng_stream(config.seed, config.n_particles + 1)
    ensemble = init_ensemble(model, particle_rngs)
    ensemble.model = model
    if history is None:
        history = FullHistory(model.obs_arity)

    executor = None
    records: list[AnnealRecord] = []
    try:
        if config.n_threads > 1:
            executor = ThreadPoolExecutor(max_workers=config.n_threads)
        n_prev = 0
        for chunk_index, chunk in enumerate(stream):
            if deadline is not None and time.monotonic() > deadline:
                raise EstimatorTimeout(f"timed out before chunk {chunk_index}")
            try:
                record = sgais_chunk_update(
                    ensemble,
                    chunk,
                    history,
                    n_prev,
                    config,
                    particle_rngs,
                    resample_rng,
                    chunk_index=chunk_index,
                    executor=executor,
                )
            except DivergenceError as err:
                err.context = f"chunk {chunk_index}"
                raise
            history.add(chunk, data_rng)
            n_prev += len(np.atleast_2d(chunk))
            records.append(record)
    finally:
        if executor is not None:
            executor.shutdown()
    if not records:
        raise UsageError("the stream yielded no chunks")
    return records


def _ensemble_model(ensemble: ParticleEnsemble) -> BayesModel:
    return ensemble.model


def ensemble_model_log_lik(ensemble: ParticleEnsemble, i: int, chunk) -> float:
    return ensemble.model.log_lik_total(ensemble.states[i].position, chunk)
