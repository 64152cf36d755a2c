"""Social-network twin simulator and empirical-realism benchmark harness.

The package runs a synchronous agent/message tick loop with pluggable
behavior providers and feed mechanics, scores imitated behavior with a
text-metric suite and a trainable reply-likelihood model, and ships a CLI
that always reports the discourse metric together with its realism context.
"""

from __future__ import annotations

from .behavior import (
    BehaviorProvider,
    Language,
    MarkovProvider,
    Persona,
    Prompt,
    RemoteProvider,
    ReplyHistory,
    StubProvider,
    build_post_prompt,
    build_reply_prompt,
    markov_generate,
    markov_train,
    remote_generate,
)
from .errors import (
    ConfigError,
    GenerationError,
    InputError,
    NumericError,
    StepError,
    TimeConsistencyError,
    TrainingError,
    TransportError,
    TwonError,
    UnknownAgentError,
)
from .mechanics import (
    MechanicsConfig,
    Observation,
    Scoring,
    Variant,
    apply_mechanics,
    fit_mechanics,
    mechanics_loss,
)
from .metrics import (
    LexiconQ,
    MetricReport,
    SamplePair,
    aggregate_report,
    bleu,
    discourse_metric_q,
    embedding_distance,
    label_correlation,
    length_ratio,
    ngram_precision,
    pearson,
)
from .model import (
    BROADCAST,
    AgentState,
    Message,
    MessageKind,
    Transcript,
    World,
    route_inbox,
    run_simulation,
    step,
    update_agent,
)

__version__ = "0.1.0"
