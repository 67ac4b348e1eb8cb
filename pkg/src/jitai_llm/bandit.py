"""Gaussian-linear Thompson Sampling over the four message actions.

Each arm ``a`` keeps an independent Gaussian posterior ``N(mu_a, cov_a)`` over
the weights of a linear reward model ``r ~ N(theta_a . v, noise_var)``.
The functional core (:func:`select_action`, :func:`update_posterior`) is
wrapped by :class:`LinearThompsonSampler`, which follows the scikit-learn
estimator conventions (``get_params``, ``fit``/``partial_fit``/``predict``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .env import EnvState
from .exceptions import ParameterError

N_ACTIONS = 4


@dataclass(frozen=True)
class TSConfig:
    feature_dim: int = 4
    prior_mean_scale: float = 0.0
    prior_cov_scale: float = 100.0
    reward_noise_var: float = 625.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ParameterError("feature_dim must be positive")
        if not self.prior_cov_scale > 0:
            raise ParameterError("prior_cov_scale must be > 0")
        if not self.reward_noise_var > 0:
            raise ParameterError("reward_noise_var must be > 0")


@dataclass(frozen=True)
class ArmPosterior:
    mu: np.ndarray
    cov: np.ndarray

    @classmethod
    def prior(cls, config: TSConfig) -> "ArmPosterior":
        dim = config.feature_dim
        return cls(
            mu=np.full(dim, float(config.prior_mean_scale)),
            cov=config.prior_cov_scale * np.eye(dim),
        )

    def to_dict(self):
        return {"mu": self.mu.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, data):
        mu = np.asarray(data["mu"], dtype=float)
        cov = np.asarray(data["cov"], dtype=float).reshape(mu.size, mu.size)
        return cls(mu=mu, cov=cov)


def featurize(obs: EnvState) -> np.ndarray:
    """Agent-observable features ``[1, p, h, d]``.

    The true context and the walk state are hidden from the agent.
    """
    return np.array([1.0, obs.p, obs.h, obs.d])


class StateFeaturizer(TransformerMixin, BaseEstimator):
    """Turns a sequence of :class:`EnvState` into a feature matrix.

    ``feature_fn`` defaults to :func:`featurize`; swap it to try other
    state vectors.
    """

    def __init__(self, feature_fn=None):
        self.feature_fn = feature_fn

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        fn = self.feature_fn or featurize
        rows = [np.asarray(fn(obs), dtype=float) for obs in X]
        return check_array(np.vstack(rows)) if rows else np.empty((0, 0))


def sample_weights(posteriors, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``theta_a`` per arm, stacked as rows.

    Raises ``numpy.linalg.LinAlgError`` when a covariance is not positive
    definite.
    """
    draws = []
    for post in posteriors:
        chol = np.linalg.cholesky(post.cov)
        z = rng.standard_normal(post.mu.size)
        draws.append(post.mu + chol @ z)
    return np.vstack(draws)


def argmax_action(thetas: np.ndarray, v: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest action index on ties
    return int(np.argmax(thetas @ v))


def select_action(posteriors, v, rng: np.random.Generator) -> int:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ParameterError("feature vector has non-finite entries")
    return argmax_action(sample_weights(posteriors, rng), v)


def update_posterior(post: ArmPosterior, v, r: float, noise_var: float) -> ArmPosterior:
    """Conjugate update of one arm after observing reward ``r`` at features ``v``.

    ``cov' = noise_var * (v v^T + noise_var * cov^-1)^-1`` and
    ``mu' = cov' (r v / noise_var + cov^-1 mu)``, computed with Cholesky
    solves instead of explicit inverses.
    """
    if not noise_var > 0:
        raise ParameterError("noise_var must be > 0")
    v = np.asarray(v, dtype=float)
    dim = v.size
    cov_factor = linalg.cho_factor(post.cov)
    precision = linalg.cho_solve(cov_factor, np.eye(dim))
    precision = 0.5 * (precision + precision.T)
    prec_mu = linalg.cho_solve(cov_factor, post.mu)

    scaled = np.outer(v, v) + noise_var * precision
    scaled_factor = linalg.cho_factor(scaled)
    cov = noise_var * linalg.cho_solve(scaled_factor, np.eye(dim))
    cov = 0.5 * (cov + cov.T)
    mu = cov @ (r * v / noise_var + prec_mu)
    return ArmPosterior(mu=mu, cov=cov)


def posteriors_to_json(posteriors, noise_var: float) -> str:
    """Snapshot: ``{"reward_noise_var": .., "arms": [{"mu": [..], "cov": [[..], ..]}, ..]}``."""
    payload = {
        "reward_noise_var": float(noise_var),
        "arms": [p.to_dict() for p in posteriors],
    }
    return json.dumps(payload)


def posteriors_from_json(text: str):
    payload = json.loads(text)
    arms = [ArmPosterior.from_dict(arm) for arm in payload["arms"]]
    return arms, float(payload["reward_noise_var"])


class LinearThompsonSampler(BaseEstimator):
    """Per-arm Bayesian linear regression with Thompson Sampling action choice.

    Parameters
    ----------
    n_actions : int
        Number of arms.
    prior_mean_scale, prior_cov_scale : float
        Prior ``N(prior_mean_scale * 1, prior_cov_scale * I)`` for every arm.
    reward_noise_var : float
        Reward noise variance shared by all arms.
    random_state : int, numpy Generator or None
        Source of posterior draws in :meth:`predict`.

    Attributes
    ----------
    posteriors_ : list of ArmPosterior
    n_updates_ : ndarray of shape (n_actions,)
        Number of observations credited to each arm.
    """

    def __init__(
        self,
        n_actions=N_ACTIONS,
        prior_mean_scale=0.0,
        prior_cov_scale=100.0,
        reward_noise_var=625.0,
        random_state=None,
    ):
        self.n_actions = n_actions
        self.prior_mean_scale = prior_mean_scale
        self.prior_cov_scale = prior_cov_scale
        self.reward_noise_var = reward_noise_var
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: TSConfig, random_state=None):
        return cls(
            prior_mean_scale=config.prior_mean_scale,
            prior_cov_scale=config.prior_cov_scale,
            reward_noise_var=config.reward_noise_var,
            random_state=random_state,
        )

    def _init_posteriors(self, n_features):
        config = TSConfig(
            feature_dim=n_features,
            prior_mean_scale=self.prior_mean_scale,
            prior_cov_scale=self.prior_cov_scale,
            reward_noise_var=self.reward_noise_var,
        )
        self.posteriors_ = [ArmPosterior.prior(config) for _ in range(self.n_actions)]
        self.n_updates_ = np.zeros(self.n_actions, dtype=int)
        self.n_features_in_ = n_features
        self._rng = np.random.default_rng(self.random_state)

    def fit(self, X, rewards, actions):
        """Reset to the prior and absorb the logged ``(X, action, reward)`` rows."""
        X = check_array(X)
        self._init_posteriors(X.shape[1])
        return self.partial_fit(X, rewards, actions)

    def partial_fit(self, X, rewards, actions):
        X = check_array(X, ensure_min_samples=0)
        rewards = np.asarray(rewards, dtype=float).reshape(-1)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        if not (len(X) == len(rewards) == len(actions)):
            raise ValueError("X, rewards and actions must have the same length")
        if not hasattr(self, "posteriors_"):
            self._init_posteriors(X.shape[1])
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, sampler was fitted with {self.n_features_in_}"
            )
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise ValueError("action index out of range")
        for v, r, a in zip(X, rewards, actions):
            self.posteriors_[a] = update_posterior(self.posteriors_[a], v, r, self.reward_noise_var)
            self.n_updates_[a] += 1
        return self

    def start(self, n_features):
        """Initialise an unfitted sampler at the prior."""
        self._init_posteriors(n_features)
        return self

    def predict(self, X):
        """Thompson-sampled action for every row of ``X`` (fresh draw per row)."""
        check_is_fitted(self, "posteriors_")
        X = check_array(X)
        return np.array([select_action(self.posteriors_, v, self._rng) for v in X])

    def expected_reward(self, X):
        """Posterior-mean reward of every arm, shape ``(n_samples, n_actions)``."""
        check_is_fitted(self, "posteriors_")
        X = check_array(X)
        means = np.vstack([p.mu for p in self.posteriors_])
        return X @ means.T

    def to_json(self):
        check_is_fitted(self, "posteriors_")
        return posteriors_to_json(self.posteriors_, self.reward_noise_var)
