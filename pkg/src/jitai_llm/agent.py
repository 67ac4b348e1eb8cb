"""One simulated study: Thompson Sampling candidate, optional LLM veto, dynamics.

With ``filter_mode=NoFilter()`` a trial is plain contextual Thompson
Sampling. With :class:`MockOracle` or :class:`LiveLLM`, every candidate
message proposed while a cannot-walk preference is active is shown to the
filter, which may replace it with "no message".
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bandit import LinearThompsonSampler, TSConfig, featurize
from .env import Action, EnvParams, env_step, reset
from .exceptions import ParameterError, TransportError, UsageError
from .llm import (
    AuditLog,
    ChatClient,
    Decision,
    LLMClientConfig,
    PromptSpec,
    StateRow,
    Verdict,
    build_prompt,
    mock_oracle,
    parse_decision,
)
from .walk import WalkParams, WalkState, apply_constraint, walk_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoFilter:
    """Standard Thompson Sampling; the filter is never consulted."""


@dataclass(frozen=True)
class MockOracle:
    ambiguity_rate: float = 0.06

    def __post_init__(self):
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            raise ParameterError("ambiguity_rate must be in [0, 1]")


@dataclass(frozen=True)
class LiveLLM:
    config: LLMClientConfig = field(default_factory=LLMClientConfig)


@dataclass(frozen=True)
class TrialConfig:
    env: EnvParams = field(default_factory=EnvParams)
    walk: WalkParams = field(default_factory=WalkParams)
    ts: TSConfig = field(default_factory=TSConfig)
    filter_mode: object = field(default_factory=NoFilter)
    seed: int = 0
    history_window: int = 4
    # must return cfg.ts.feature_dim values; defaults to bandit.featurize
    feature_fn: object = None


@dataclass
class TrialStreams:
    """Independent random streams so that enabling the filter leaves the
    environment, walk chain and posterior draws untouched."""

    env: np.random.Generator
    walk: np.random.Generator
    ts: np.random.Generator
    oracle: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        env, walk, ts, oracle = (
            np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
        )
        return cls(env=env, walk=walk, ts=ts, oracle=oracle)


@dataclass(frozen=True)
class StepLog:
    t: int
    candidate_a: int
    executed_a: int
    verdict: str | None
    reason: str | None
    preference: str | None
    w: int
    c: int
    p: float
    h: float
    d: float
    reward: float


class DecisionFilter:
    """Builds the prompt for the active preference and asks the oracle or model."""

    def __init__(self, mode, rng, history_window=4, client=None, audit=None):
        if isinstance(mode, NoFilter):
            raise UsageError("standard Thompson Sampling has no decision filter")
        self.mode = mode
        self.rng = rng
        self.history_window = history_window
        self.client = client
        self.audit = audit
        self.prompts_built = 0
        self.calls = 0

    def decide(self, t, preference, rows) -> Decision:
        prompt = build_prompt(
            PromptSpec(preference=preference, state_rows=tuple(rows), history_window=self.history_window)
        )
        self.prompts_built += 1
        self.calls += 1
        if isinstance(self.mode, MockOracle):
            decision = mock_oracle(preference, self.mode.ambiguity_rate, self.rng)
        else:
            decision = parse_decision(self.client.complete(prompt))
        if self.audit is not None:
            self.audit.record(t, prompt, decision)
        return decision


def hybrid_step(env_state, walk_state, sampler, streams, cfg, rows=(), decision_filter=None):
    """One day of the hybrid loop.

    Returns ``(env_state', walk_state', step_log)``; ``sampler`` is updated in
    place with the executed action and the realised (possibly zeroed) reward,
    at the features observed before the step.
    """
    if env_state.done:
        raise UsageError("hybrid_step called on a terminated episode")
    v = np.asarray((cfg.feature_fn or featurize)(env_state), dtype=float)
    candidate = int(sampler.predict(v[None, :])[0])

    executed = candidate
    verdict = reason = None
    if candidate != Action.NONE and walk_state.preference is not None and decision_filter is not None:
        try:
            decision = decision_filter.decide(env_state.t, walk_state.preference, rows)
        except TransportError as exc:
            logger.warning("LLM unavailable at t=%d, keeping candidate action: %s", env_state.t, exc)
            verdict = "error"
        else:
            verdict, reason = decision.verdict.value, decision.reason
            if decision.verdict is Verdict.NOT_SEND:
                executed = int(Action.NONE)

    nxt, reward, _ = env_step(env_state, executed, streams.env, cfg.env)
    if walk_state.w == 0:
        inflate = cfg.walk.constraint_mode == "per_step" or walk_state.entered
        nxt, reward = apply_constraint(nxt, cfg.walk, inflate=inflate)
        done = nxt.d > cfg.env.d_threshold or nxt.t >= cfg.env.t_max
        nxt = replace(nxt, done=done)
    next_walk = walk_step(walk_state, streams.walk, cfg.walk)

    sampler.partial_fit(v[None, :], [reward], [executed])

    log = StepLog(
        t=env_state.t,
        candidate_a=candidate,
        executed_a=executed,
        verdict=verdict,
        reason=reason,
        preference=walk_state.preference,
        w=walk_state.w,
        c=env_state.c,
        p=nxt.p,
        h=nxt.h,
        d=nxt.d,
        reward=float(reward),
    )
    return nxt, next_walk, log


@dataclass
class TrialRecord:
    steps: list
    total_reward: float
    terminated_early: bool
    seed: int = 0
    mode: str = "standard"
    llm_calls: int = 0
    prompts_built: int = 0
    posterior_updates: int = 0

    @property
    def rewards(self):
        return np.array([s.reward for s in self.steps])

    @property
    def executed_actions(self):
        return np.array([s.executed_a for s in self.steps], dtype=int)

    def summary(self):
        return {
            "seed": self.seed,
            "mode": self.mode,
            "n_steps": len(self.steps),
            "total_reward": self.total_reward,
            "terminated_early": self.terminated_early,
            "llm_calls": self.llm_calls,
            "prompts_built": self.prompts_built,
            "posterior_updates": self.posterior_updates,
            "action_counts": np.bincount(self.executed_actions, minlength=4).tolist(),
        }

    def to_jsonl(self):
        return "".join(json.dumps(asdict(s), ensure_ascii=False) + "\n" for s in self.steps)

    def write(self, path):
        """Write ``<path>`` (one step per line) and ``<path>.summary.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        summary_path = path.with_name(path.name + ".summary.json")
        summary_path.write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")


def read_steps(path):
    """Load the per-step log written by :meth:`TrialRecord.write`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [StepLog(**json.loads(line)) for line in lines if line]


def mode_name(filter_mode):
    return "standard" if isinstance(filter_mode, NoFilter) else "hybrid"


def run_trial(cfg: TrialConfig, client=None, audit_path=None) -> TrialRecord:
    """Run one study until the horizon or disengagement threshold."""
    streams = TrialStreams.from_seed(cfg.seed)
    sampler = LinearThompsonSampler.from_config(cfg.ts, random_state=streams.ts)
    sampler.start(cfg.ts.feature_dim)

    decision_filter = None
    owned_client = None
    audit = AuditLog(Path(audit_path)) if audit_path else None
    if not isinstance(cfg.filter_mode, NoFilter):
        if isinstance(cfg.filter_mode, LiveLLM) and client is None:
            client = owned_client = ChatClient(cfg.filter_mode.config)
        decision_filter = DecisionFilter(
            cfg.filter_mode, streams.oracle, cfg.history_window, client=client, audit=audit
        )

    env_state = reset(streams.env, cfg.env)
    walk_state = WalkState()
    rows = [StateRow(t=0, c=env_state.c, h=env_state.h, d=env_state.d, reward=0.0, action=0)]
    steps = []
    try:
        while not env_state.done:
            env_state, walk_state, log = hybrid_step(
                env_state, walk_state, sampler, streams, cfg, rows, decision_filter
            )
            steps.append(log)
            rows.append(
                StateRow(t=env_state.t, c=env_state.c, h=env_state.h, d=env_state.d,
                         reward=log.reward, action=log.executed_a)
            )
    finally:
        if owned_client is not None:
            owned_client.close()
        if audit is not None:
            audit.close()

    return TrialRecord(
        steps=steps,
        total_reward=float(sum(s.reward for s in steps)),
        terminated_early=env_state.t < cfg.env.t_max,
        seed=cfg.seed,
        mode=mode_name(cfg.filter_mode),
        llm_calls=decision_filter.calls if decision_filter else 0,
        prompts_built=decision_filter.prompts_built if decision_filter else 0,
        posterior_updates=int(sampler.n_updates_.sum()),
    )
