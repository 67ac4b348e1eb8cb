"""Hidden "cannot walk" Markov chain and the text preferences it emits.

``w = 1`` means the user can walk. While ``w = 0`` a free-text preference is
active and a constraint inflates habituation and disengagement and zeroes the
reward for that day.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import EnvState
from .exceptions import ConfigurationError, ParameterError

DEFAULT_PREFERENCES = (
    "I am tired",
    "I do not want to walk",
    "I got an injury",
    "my leg is sore",
    "I have a headache",
    "the weather is bad",
    "I have a cold",
    "I feel unwell",
    "I have a prior commitment",
    "I have a blister",
    "I’m feeling dizzy",
    "I twisted my ankle",
    "I am recovering from surgery",
    "I need to rest",
    "I have joint pain",
    "I’m dealing with anxiety",
    "I have a family obligation",
    "I forgot my shoes",
    "I don’t have anyone to walk with",
    "I have to finish my work first",
)

CONSTRAINT_MODES = ("per_step", "on_transition")


@dataclass(frozen=True)
class WalkParams:
    """Transition probabilities and constraint strengths of the walk chain.

    ``constraint_mode`` controls the habituation/disengagement inflation:
    ``"per_step"`` applies it on every day spent in ``w = 0``,
    ``"on_transition"`` only on the first day after a 1 -> 0 switch. The
    reward is zeroed on every ``w = 0`` day in both modes.
    """

    p_w01: float = 0.9
    p_w11: float = 0.7
    eta_d: float = 0.1
    eta_h: float = 0.1
    preference_pool: tuple[str, ...] = field(default=DEFAULT_PREFERENCES)
    constraint_mode: str = "per_step"

    def __post_init__(self):
        for name in ("p_w01", "p_w11", "eta_d", "eta_h"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {value!r}")
        object.__setattr__(self, "preference_pool", tuple(self.preference_pool))
        if not self.preference_pool:
            raise ConfigurationError("preference_pool must not be empty")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ParameterError(f"constraint_mode must be one of {CONSTRAINT_MODES}")

    @classmethod
    def from_stay_probabilities(cls, p_w11, p_w00, **kwargs):
        """Build from the probabilities of staying in each state."""
        return cls(p_w01=1.0 - p_w00, p_w11=p_w11, **kwargs)

    @property
    def p_w00(self):
        return 1.0 - self.p_w01


@dataclass(frozen=True)
class WalkState:
    w: int = 1
    preference: str | None = None
    # True on the first day of a cannot-walk spell
    entered: bool = False

    def __post_init__(self):
        if self.w not in (0, 1):
            raise ParameterError(f"w must be 0 or 1, got {self.w!r}")
        if (self.preference is not None) != (self.w == 0):
            raise ParameterError("a preference is present iff w == 0")


def load_preferences(path) -> tuple[str, ...]:
    """Read a preference pool, one UTF-8 entry per non-blank line."""
    text = Path(path).read_text(encoding="utf-8")
    pool = tuple(line.strip() for line in text.splitlines() if line.strip())
    if not pool:
        raise ConfigurationError(f"no preferences found in {path}")
    return pool


def walk_transition(w: int, rng: np.random.Generator, params: WalkParams) -> int:
    p_one = params.p_w01 if w == 0 else params.p_w11
    return int(rng.random() < p_one)


def draw_preference(rng: np.random.Generator, pool) -> str:
    if len(pool) == 0:
        raise ConfigurationError("cannot draw from an empty preference pool")
    return pool[int(rng.integers(len(pool)))]


def apply_constraint(env_state: EnvState, params: WalkParams, inflate=True):
    """Cannot-walk constraint; returns ``(constrained_state, 0.0)``.

    The returned reward replaces the day's step reward. Inflated values are
    clamped at 1.
    """
    if inflate:
        d = min(1.0, env_state.d + params.eta_d * env_state.d)
        h = min(1.0, env_state.h + params.eta_h * env_state.h)
        env_state = replace(env_state, h=h, d=d)
    return env_state, 0.0


def walk_step(walk: WalkState, rng: np.random.Generator, params: WalkParams) -> WalkState:
    w_next = walk_transition(walk.w, rng, params)
    if w_next == 1:
        return WalkState(w=1)
    if walk.w == 1:
        return WalkState(w=0, preference=draw_preference(rng, params.preference_pool), entered=True)
    return WalkState(w=0, preference=walk.preference)
