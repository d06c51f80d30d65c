"""Benchmark Bayesian models with hand-derived gradients.

Three benchmark models (linear regression with an analytically known
evidence, softmax multiclass regression, and a diagonal-covariance Gaussian
mixture with marginalised component assignments), plus a one-parameter
conjugate Gaussian-mean model used as a closed-form oracle in tests.

All models live in an unconstrained parameter space so the gradient-based
samplers never see a constraint; the mixture model reparameterises weights
through logits and variances through logs, with the prior density
transported accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BayesModel, UsageError

LOG_2PI = math.log(2.0 * math.pi)


def _lse_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-D array."""
    m = np.max(a, axis=1)
    return m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


class LinRegModel(BayesModel):
    """Linear regression y = w.x + b + noise with known noise variance.

    Observation rows pack (x_1..x_5, y); parameters (w, b) carry standard
    Gaussian priors, so d = 6.  The evidence is available in closed form,
    see :func:`linreg_log_ml_exact`.
    """

    def __init__(self, x_dim: int = 5, noise_var: float = 1.0):
        if noise_var <= 0:
            raise UsageError("noise variance must be positive")
        self.x_dim = x_dim
        self.noise_var = float(noise_var)
        self.dim = x_dim + 1
        self.obs_arity = x_dim + 1

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        return -0.5 * (self.dim * LOG_2PI + float(theta @ theta))

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float)

    def sample_prior(self, rng):
        return rng.standard_normal(self.dim)

    def _residuals(self, theta, obs):
        x = obs[:, : self.x_dim]
        y = obs[:, self.x_dim]
        return y - x @ theta[: self.x_dim] - theta[self.x_dim]

    def log_lik(self, theta, obs):
        return float(self.log_lik_batch(theta, np.atleast_2d(obs))[0])

    def grad_log_lik(self, theta, obs):
        return self.grad_log_lik_total(theta, np.atleast_2d(obs))

    def log_lik_batch(self, theta, obs):
        obs = np.atleast_2d(obs)
        r = self._residuals(np.asarray(theta, dtype=float), obs)
        return -0.5 * (LOG_2PI + math.log(self.noise_var)) - r**2 / (2 * self.noise_var)

    def log_lik_total(self, theta, obs):
        if len(obs) == 0:
            return 0.0
        return float(np.sum(self.log_lik_batch(theta, obs)))

    def grad_log_lik_total(self, theta, obs):
        obs = np.atleast_2d(obs)
        r = self._residuals(np.asarray(theta, dtype=float), obs)
        g = np.empty(self.dim)
        g[: self.x_dim] = obs[:, : self.x_dim].T @ r / self.noise_var
        g[self.x_dim] = np.sum(r) / self.noise_var
        return g

    def sample_obs(self, theta, n, rng):
        theta = np.asarray(theta, dtype=float)
        x = rng.standard_normal((n, self.x_dim))
        y = x @ theta[: self.x_dim] + theta[self.x_dim]
        y = y + math.sqrt(self.noise_var) * rng.standard_normal(n)
        return np.column_stack([x, y])


class LogRegModel(BayesModel):
    """Softmax multiclass regression.

    Observation rows pack (x_1..x_10, label); label is a class index in
    {0..K-1} stored as a float.  Parameters are the K weight vectors and K
    intercepts, flattened as [W.ravel(), b], all with standard Gaussian
    priors (d = 44 at the defaults).
    """

    def __init__(self, x_dim: int = 10, n_classes: int = 4):
        self.x_dim = x_dim
        self.n_classes = n_classes
        self.dim = n_classes * (x_dim + 1)
        self.obs_arity = x_dim + 1

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        w = theta[: self.n_classes * self.x_dim].reshape(self.n_classes, self.x_dim)
        b = theta[self.n_classes * self.x_dim :]
        return w, b

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        return -0.5 * (self.dim * LOG_2PI + float(theta @ theta))

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float)

    def sample_prior(self, rng):
        return rng.standard_normal(self.dim)

    def _labels(self, obs):
        labels = obs[:, self.x_dim]
        idx = labels.astype(int)
        if np.any(idx != labels) or np.any(idx < 0) or np.any(idx >= self.n_classes):
            raise UsageError("label index outside {0..K-1}")
        return idx

    def log_lik(self, theta, obs):
        return float(self.log_lik_batch(theta, np.atleast_2d(obs))[0])

    def grad_log_lik(self, theta, obs):
        return self.grad_log_lik_total(theta, np.atleast_2d(obs))

    def log_lik_batch(self, theta, obs):
        obs = np.atleast_2d(obs)
        w, b = self._unpack(theta)
        idx = self._labels(obs)
        z = obs[:, : self.x_dim] @ w.T + b
        return z[np.arange(len(obs)), idx] - _lse_rows(z)

    def log_lik_total(self, theta, obs):
        if len(obs) == 0:
            return 0.0
        return float(np.sum(self.log_lik_batch(theta, obs)))

    def grad_log_lik_total(self, theta, obs):
        obs = np.atleast_2d(obs)
        w, b = self._unpack(theta)
        idx = self._labels(obs)
        x = obs[:, : self.x_dim]
        z = x @ w.T + b
        p = _softmax(z)
        p[np.arange(len(obs)), idx] -= 1.0  # now p = softmax - onehot
        g = np.empty(self.dim)
        g[: self.n_classes * self.x_dim] = (-(p.T @ x)).ravel()
        g[self.n_classes * self.x_dim :] = -np.sum(p, axis=0)
        return g

    def class_probs(self, theta, x):
        w, b = self._unpack(theta)
        return _softmax(np.atleast_2d(x) @ w.T + b)

    def sample_obs(self, theta, n, rng):
        x = rng.standard_normal((n, self.x_dim))
        p = self.class_probs(theta, x)
        u = rng.random(n)
        labels = np.sum(np.cumsum(p, axis=1) < u[:, None], axis=1)
        labels = np.minimum(labels, self.n_classes - 1)
        return np.column_stack([x, labels.astype(float)])


class GmmModel(BayesModel):
    """Gaussian mixture with diagonal covariances and marginalised labels.

    Unconstrained parameters pack [logits (K), means (K*d), log-variances
    (K*d)].  Mixture weights are softmax(logits) with a flat Dirichlet
    prior transported through the softmax map (the gauge direction along
    the mean logit gets a proper N(0, anchor_sd^2) prior so the posterior
    is proper); means have N(0, 4*var) priors conditional on the variances;
    the variances have inverse-gamma(1, 1) priors transported through the
    exp map.
    """

    def __init__(self, n_components: int = 5, obs_dim: int = 2, anchor_sd: float = 10.0):
        if n_components < 1:
            raise UsageError("need at least one component")
        self.n_components = n_components
        self.obs_dim = obs_dim
        self.anchor_sd = float(anchor_sd)
        self.dim = n_components * (1 + 2 * obs_dim)
        self.obs_arity = obs_dim

    def unpack(self, theta):
        """Split a flat parameter vector into (logits, means, log_vars)."""
        k, d = self.n_components, self.obs_dim
        theta = np.asarray(theta, dtype=float)
        logits = theta[:k]
        means = theta[k : k + k * d].reshape(k, d)
        log_vars = theta[k + k * d :].reshape(k, d)
        return logits, means, log_vars

    def pack(self, logits, means, log_vars):
        return np.concatenate(
            [np.ravel(logits), np.ravel(means), np.ravel(log_vars)]
        ).astype(float)

    def log_prior(self, theta):
        k = self.n_components
        logits, means, log_vars = self.unpack(theta)
        beta = _softmax(logits)
        lbar = float(np.mean(logits))
        # flat Dirichlet transported through softmax: log (K-1)! + sum log beta,
        # plus the anchor on the mean logit.
        lp = math.lgamma(k) + float(np.sum(np.log(beta)))
        lp += -0.5 * (LOG_2PI + 2 * math.log(self.anchor_sd)) - lbar**2 / (
            2 * self.anchor_sd**2
        )
        # means | variances ~ N(0, 4 var): var = exp(s)
        lp += float(
            np.sum(-0.5 * (LOG_2PI + math.log(4.0) + log_vars) - means**2 / (8 * np.exp(log_vars)))
        )
        # variances ~ InvGamma(1, 1) through the exp map: -2s - e^{-s} + s
        lp += float(np.sum(-log_vars - np.exp(-log_vars)))
        return lp

    def grad_log_prior(self, theta):
        k = self.n_components
        logits, means, log_vars = self.unpack(theta)
        beta = _softmax(logits)
        lbar = float(np.mean(logits))
        g_logits = (1.0 - k * beta) - lbar / (self.anchor_sd**2 * k)
        inv_var = np.exp(-log_vars)
        g_means = -means * inv_var / 4.0
        g_s = (-0.5 + means**2 * inv_var / 8.0) + (-1.0 + inv_var)
        return self.pack(g_logits, g_means, g_s)

    def sample_prior(self, rng):
        k, d = self.n_components, self.obs_dim
        beta = rng.dirichlet(np.ones(k))
        logits = np.log(beta)
        logits = logits - logits.mean() + rng.normal(0.0, self.anchor_sd)
        variances = 1.0 / rng.standard_exponential((k, d))
        means = rng.normal(0.0, 2.0 * np.sqrt(variances))
        return self.pack(logits, means, np.log(variances))

    def _component_logdens(self, theta, obs):
        """(N, K) array of log(beta_k) + log N(y | mu_k, var_k)."""
        logits, means, log_vars = self.unpack(theta)
        log_beta = logits - float(_lse_rows(logits[None, :])[0])
        diff = obs[:, None, :] - means[None, :, :]  # (N, K, d)
        inv_var = np.exp(-log_vars)
        quad = np.sum(diff**2 * inv_var[None, :, :], axis=2)
        norm = np.sum(LOG_2PI + log_vars, axis=1)
        return log_beta[None, :] - 0.5 * (norm[None, :] + quad)

    def log_lik(self, theta, obs):
        return float(self.log_lik_batch(theta, np.atleast_2d(obs))[0])

    def grad_log_lik(self, theta, obs):
        return self.grad_log_lik_total(theta, np.atleast_2d(obs))

    def log_lik_batch(self, theta, obs):
        obs = np.atleast_2d(obs)
        return _lse_rows(self._component_logdens(theta, obs))

    def log_lik_total(self, theta, obs):
        if len(obs) == 0:
            return 0.0
        return float(np.sum(self.log_lik_batch(theta, obs)))

    def grad_log_lik_total(self, theta, obs):
        obs = np.atleast_2d(obs)
        logits, means, log_vars = self.unpack(theta)
        comp = self._component_logdens(theta, obs)
        total = _lse_rows(comp)
        resp = np.exp(comp - total[:, None])  # (N, K) responsibilities
        beta = _softmax(logits)
        diff = obs[:, None, :] - means[None, :, :]
        inv_var = np.exp(-log_vars)
        g_logits = np.sum(resp, axis=0) - len(obs) * beta
        g_means = np.einsum("nk,nkd->kd", resp, diff) * inv_var
        g_s = 0.5 * (np.einsum("nk,nkd->kd", resp, diff**2) * inv_var
                     - np.sum(resp, axis=0)[:, None])
        return self.pack(g_logits, g_means, g_s)

    def mixture_weights(self, theta):
        logits, _, _ = self.unpack(theta)
        return _softmax(logits)

    def sample_obs(self, theta, n, rng):
        logits, means, log_vars = self.unpack(theta)
        beta = _softmax(logits)
        comp = rng.choice(self.n_components, size=n, p=beta)
        sd = np.sqrt(np.exp(log_vars))
        return means[comp] + sd[comp] * rng.standard_normal((n, self.obs_dim))


class GaussianMeanModel(BayesModel):
    """One unknown mean with Gaussian observations and a conjugate prior.

    y ~ N(theta, obs_var), theta ~ N(prior_mean, prior_var).  The evidence
    has a closed form (:func:`gaussian_mean_log_ml_exact`), which makes the
    model a small exact oracle for the Monte Carlo estimators.
    """

    dim = 1
    obs_arity = 1

    def __init__(self, obs_var: float = 1.0, prior_mean: float = 0.0, prior_var: float = 1.0):
        if obs_var <= 0 or prior_var <= 0:
            raise UsageError("variances must be positive")
        self.obs_var = float(obs_var)
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)

    def log_prior(self, theta):
        t = float(np.asarray(theta).reshape(()))
        return -0.5 * (LOG_2PI + math.log(self.prior_var)) - (t - self.prior_mean) ** 2 / (
            2 * self.prior_var
        )

    def grad_log_prior(self, theta):
        t = float(np.asarray(theta).reshape(()))
        return np.array([-(t - self.prior_mean) / self.prior_var])

    def sample_prior(self, rng):
        return np.array([rng.normal(self.prior_mean, math.sqrt(self.prior_var))])

    def log_lik(self, theta, obs):
        return float(self.log_lik_batch(theta, np.atleast_2d(obs))[0])

    def grad_log_lik(self, theta, obs):
        return self.grad_log_lik_total(theta, np.atleast_2d(obs))

    def log_lik_batch(self, theta, obs):
        obs = np.atleast_2d(obs)
        r = obs[:, 0] - float(np.asarray(theta).reshape(()))
        return -0.5 * (LOG_2PI + math.log(self.obs_var)) - r**2 / (2 * self.obs_var)

    def log_lik_total(self, theta, obs):
        if len(obs) == 0:
            return 0.0
        return float(np.sum(self.log_lik_batch(theta, obs)))

    def grad_log_lik_total(self, theta, obs):
        obs = np.atleast_2d(obs)
        r = obs[:, 0] - float(np.asarray(theta).reshape(()))
        return np.array([np.sum(r) / self.obs_var])

    def sample_obs(self, theta, n, rng):
        t = float(np.asarray(theta).reshape(()))
        return (t + math.sqrt(self.obs_var) * rng.standard_normal(n)).reshape(n, 1)


def linreg_log_ml_exact(x: np.ndarray, y: np.ndarray, noise_var: float) -> float:
    """Closed-form evidence of :class:`LinRegModel`.

    With the intercept column appended (Xt, shape N x d) and a standard
    Gaussian prior on (w, b), the marginal of y is N(0, noise_var*I +
    Xt Xt^T); the log-density is evaluated through the d x d Gram matrix so
    the cost stays O(N d^2) for N >> d.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if noise_var <= 0:
        raise UsageError("noise variance must be positive")
    if len(x) != len(y) or len(y) < 1:
        raise UsageError("need N >= 1 rows with matching y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UsageError("non-finite inputs")
    n = len(y)
    xt = np.column_stack([x, np.ones(n)])
    d = xt.shape[1]
    a = noise_var * np.eye(d) + xt.T @ xt
    _, logdet_a = np.linalg.slogdet(a)
    logdet_cap = logdet_a - d * math.log(noise_var)  # log det(I_d + Xt^T Xt / noise_var)
    b = xt.T @ y
    quad = (y @ y - b @ np.linalg.solve(a, b)) / noise_var
    return -0.5 * (n * (LOG_2PI + math.log(noise_var)) + logdet_cap + quad)


def gaussian_mean_log_ml_exact(
    y: np.ndarray, obs_var: float = 1.0, prior_mean: float = 0.0, prior_var: float = 1.0
) -> float:
    """Closed-form evidence of :class:`GaussianMeanModel`.

    y ~ N(prior_mean * 1, obs_var*I + prior_var * 1 1^T); the rank-one
    structure gives the determinant and quadratic form directly.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if n < 1:
        raise UsageError("need at least one observation")
    r = y - prior_mean
    s = obs_var + n * prior_var
    logdet = (n - 1) * math.log(obs_var) + math.log(s)
    quad = (r @ r - prior_var * np.sum(r) ** 2 / s) / obs_var
    return -0.5 * (n * LOG_2PI + logdet + quad)


def generate_observations(
    model: BayesModel, true_params: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n i.i.d. observations from the model's conditional distribution.

    Regression models draw covariates x ~ N(0, I); the mixture model draws
    a component then the component Gaussian.
    """
    if n < 1:
        raise UsageError("n must be >= 1")
    return model.sample_obs(np.asarray(true_params, dtype=float), n, rng)


@dataclass(frozen=True)
class ModelSpec:
    """Constructor entry for the model registry."""

    factory: object
    description: str


MODEL_REGISTRY = {
    "linreg": ModelSpec(lambda **kw: LinRegModel(**kw), "linear regression, d=6"),
    "logreg": ModelSpec(lambda **kw: LogRegModel(**kw), "4-class softmax regression, d=44"),
    "gmm": ModelSpec(lambda **kw: GmmModel(**kw), "2-D Gaussian mixture, K=5, d=25"),
    "gaussmean": ModelSpec(lambda **kw: GaussianMeanModel(**kw), "conjugate Gaussian mean, d=1"),
}


def make_model(model_id: str, **kwargs) -> BayesModel:
    """Instantiate a registered model by id."""
    try:
        spec = MODEL_REGISTRY[model_id]
    except KeyError:
        raise UsageError(f"unknown model id {model_id!r}") from None
    return spec.factory(**kwargs)
