"""Base StepCountJITAI behavioral dynamics.

A participant has a binary context ``c`` that is only observed through a
noisy feature ``x``. Messages raise habituation ``h`` (which attenuates the
step-count reward) and, when tailored to the wrong context, raise the
disengagement risk ``d``. All transitions are pure functions over frozen
dataclasses; randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ParameterError, UsageError


class Action(enum.IntEnum):
    """Message types. ``Action(5)`` raises ``ValueError``."""

    NONE = 0
    GENERIC = 1
    TAILORED_0 = 2
    TAILORED_1 = 3


def _check_unit(name, value):
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must be in [0, 1], got {value!r}")


def _check_sigma(sigma):
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma!r}")


@dataclass(frozen=True)
class EnvParams:
    sigma: float = 0.4
    delta_h: float = 0.1
    epsilon_h: float = 0.05
    delta_d: float = 0.1
    epsilon_d: float = 0.4
    m_s: float = 0.1
    rho1: float = 50.0
    rho2: float = 200.0
    # > 1 disables early termination since d is clamped to [0, 1]
    d_threshold: float = 1.1
    t_max: int = 50

    def __post_init__(self):
        _check_sigma(self.sigma)
        for name in ("delta_h", "epsilon_h", "delta_d", "epsilon_d"):
            _check_unit(name, getattr(self, name))
        for name in ("m_s", "rho1", "rho2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ParameterError(f"t_max must be a positive integer, got {self.t_max!r}")


@dataclass(frozen=True)
class EnvState:
    t: int
    c: int
    x: float
    p: float
    l: int  # noqa: E741
    h: float = 0.0
    d: float = 0.0
    s: float = 0.0
    done: bool = False


def sample_context(rng: np.random.Generator, sigma: float) -> tuple[int, float]:
    """Draw the true context ``c ~ Bernoulli(0.5)`` and its feature ``x ~ N(c, sigma^2)``."""
    _check_sigma(sigma)
    c = int(rng.random() < 0.5)
    x = float(rng.normal(c, sigma))
    return c, x


def infer_context(x: float, sigma: float) -> tuple[float, int]:
    """Posterior probability of context 1 given ``x`` under equal priors.

    The log-likelihood ratio of N(1, sigma^2) vs N(0, sigma^2) is
    ``(2x - 1) / (2 sigma^2)``, so the posterior is its logistic sigmoid.
    The inferred context uses a strict ``p > 0.5``.
    """
    _check_sigma(sigma)
    p = float(expit((2.0 * x - 1.0) / (2.0 * sigma**2)))
    return p, int(p > 0.5)


def update_habituation(h: float, a: int, delta_h: float, epsilon_h: float) -> float:
    if a == Action.NONE:
        return (1.0 - delta_h) * h
    return min(1.0, h + epsilon_h)


def update_disengagement(d: float, a: int, c: int, delta_d: float, epsilon_d: float) -> float:
    if a == Action.NONE:
        return d
    if a == Action.GENERIC or a == c + 2:
        return (1.0 - delta_d) * d
    return min(1.0, d + epsilon_d)


def step_count(h_next: float, a: int, c: int, params: EnvParams) -> float:
    if a == Action.GENERIC:
        return params.m_s + (1.0 - h_next) * params.rho1
    if a == c + 2:
        return params.m_s + (1.0 - h_next) * params.rho2
    return params.m_s


def reset(rng: np.random.Generator, params: EnvParams) -> EnvState:
    """Initial state: sampled context, zero habituation/disengagement/steps."""
    c, x = sample_context(rng, params.sigma)
    p, l = infer_context(x, params.sigma)  # noqa: E741
    return EnvState(t=0, c=c, x=x, p=p, l=l)


def env_step(
    state: EnvState, a: int, rng: np.random.Generator, params: EnvParams
) -> tuple[EnvState, float, bool]:
    """Advance one day with action ``a``; returns ``(next_state, reward, done)``.

    Habituation, disengagement and the step count are driven by ``a`` and the
    current true context; the context for the next day is drawn fresh.
    """
    if state.done:
        raise UsageError("env_step called on a terminated episode")
    a = Action(a)

    c_next, x_next = sample_context(rng, params.sigma)
    p_next, l_next = infer_context(x_next, params.sigma)
    h_next = update_habituation(state.h, a, params.delta_h, params.epsilon_h)
    d_next = update_disengagement(state.d, a, state.c, params.delta_d, params.epsilon_d)
    s_next = step_count(h_next, a, state.c, params)

    t_next = state.t + 1
    done = d_next > params.d_threshold or t_next >= params.t_max
    nxt = EnvState(
        t=t_next, c=c_next, x=x_next, p=p_next, l=l_next,
        h=h_next, d=d_next, s=s_next, done=done,
    )
    return nxt, s_next, done
