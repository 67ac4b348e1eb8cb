"""StepCountJITAI simulator with a hidden cannot-walk state, and an
LLM-filtered Thompson Sampling agent (LLM+TS)."""

from .agent import (
    LiveLLM,
    MockOracle,
    NoFilter,
    TrialConfig,
    TrialRecord,
    hybrid_step,
    run_trial,
)
from .bandit import (
    ArmPosterior,
    LinearThompsonSampler,
    StateFeaturizer,
    TSConfig,
    featurize,
    select_action,
    update_posterior,
)
from .env import (
    Action,
    EnvParams,
    EnvState,
    env_step,
    infer_context,
    reset,
    sample_context,
    step_count,
    update_disengagement,
    update_habituation,
)
from .exceptions import ConfigurationError, ParameterError, TransportError, UsageError
from .harness import AggregateResult, SweepSpec, emit_plots, run_sweep
from .llm import (
    ChatClient,
    Decision,
    LLMClientConfig,
    PromptSpec,
    StateRow,
    Verdict,
    build_prompt,
    mock_oracle,
    parse_decision,
    query_llm,
)
from .walk import (
    DEFAULT_PREFERENCES,
    WalkParams,
    WalkState,
    apply_constraint,
    draw_preference,
    load_preferences,
    walk_step,
    walk_transition,
)

__version__ = "0.1.0"
