"""TOML experiment configuration: parsing, validation, and defaults.

The config file is the single source of truth for a run; CLI flags may
override individual fields but never introduce new ones. Unknown keys are
rejected so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .behavior import Language
from .errors import ConfigError
from .mechanics import MechanicsConfig
from .model import MessageKind

SIDECAR_URL_ENV = "TWON_SIDECAR_URL"

_DATA_KEYS = (
    "raw_path", "train_path", "test_path", "personas_path", "lexicon_path",
    "observations_path", "likelihood_train_path", "likelihood_test_path",
    "embeddings_path", "labels_path", "behavior_report_path",
    "mechanics_result_path",
)


class _Section:
    """Typed reader over one TOML table that tracks which keys were used."""

    def __init__(self, name: str, raw: Mapping[str, object]) -> None:
        if not isinstance(raw, Mapping):
            raise ConfigError(f"[{name}] must be a table")
        self.name = name
        self.raw = raw
        self.used: set[str] = set()

    def get(self, key: str, kind: type | tuple[type, ...], default=None, required=False):
        self.used.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"[{self.name}] is missing required key {key!r}")
            return default
        value = self.raw[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
            raise ConfigError(
                f"[{self.name}] {key} must be {getattr(kind, '__name__', kind)}, "
                f"got {type(value).__name__}"
            )
        return value

    def get_choice(self, key: str, choices: Sequence[str], default: str | None = None):
        value = self.get(key, str, default=default, required=default is None)
        if value not in choices:
            raise ConfigError(
                f"[{self.name}] {key} must be one of {', '.join(choices)}, got {value!r}"
            )
        return value

    def finish(self) -> None:
        unknown = sorted(set(self.raw) - self.used)
        if unknown:
            raise ConfigError(f"[{self.name}] has unknown keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class DataPaths:
    raw_path: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    personas_path: str | None = None
    lexicon_path: str | None = None
    observations_path: str | None = None
    likelihood_train_path: str | None = None
    likelihood_test_path: str | None = None
    embeddings_path: str | None = None
    labels_path: str | None = None
    behavior_report_path: str | None = None
    mechanics_result_path: str | None = None

    def require(self, *keys: str) -> list[Path]:
        """Resolve the named paths, failing on unset or missing files."""
        out = []
        for key in keys:
            value = getattr(self, key)
            if value is None:
                raise ConfigError(f"[data] {key} is required for this command")
            path = Path(value)
            if not path.exists():
                raise ConfigError(f"[data] {key} points at missing file: {path}")
            out.append(path)
        return out


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "stub"
    stub_text: str | None = None
    endpoint: str | None = None
    timeout: float = 10.0
    retries: int = 2
    backoff: float = 0.25
    max_tokens: int = 64
    temperature: float = 0.7
    markov_order: int = 2
    markov_max_tokens: int = 24


@dataclass(frozen=True)
class MetricsConfig:
    n: int = 100
    k: int = 10
    max_n: int = 4
    smoothing_epsilon: float = 0.1
    distance: str = "euclidean"
    embedder: str = "hash"
    embedder_dim: int = 64
    labels_source: str = "none"
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class LikelihoodConfig:
    lr: float = 0.01
    weight_decay: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    threshold: float = 0.5
    train_fraction: float = 0.8
    per_user_cap: int = 5


@dataclass(frozen=True)
class IngestConfig:
    min_chars: int = 32
    top_k: int = 50


@dataclass(frozen=True)
class SeedMessageSpec:
    sender: str
    text: str
    recipient: str = "*"
    topic: str | None = None


@dataclass(frozen=True)
class SimulateConfig:
    n_ticks: int = 4
    agents: tuple[str, ...] = ()
    seed_messages: tuple[SeedMessageSpec, ...] = ()
    q_plugin: str = "lexicon"


@dataclass(frozen=True)
class FitConfig:
    alpha: float = 0.5
    family: tuple[MechanicsConfig, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path
    seed: int
    output_dir: Path
    task: MessageKind = MessageKind.POST
    language: Language = Language.EN
    condition: str = "in-context"
    data: DataPaths = field(default_factory=DataPaths)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    mechanics: MechanicsConfig = field(default_factory=MechanicsConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    fit: FitConfig = field(default_factory=FitConfig)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML experiment config.

    The TWON_SIDECAR_URL environment variable, when set, overrides the
    remote endpoint from the file.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None

    known_sections = {
        "run", "data", "provider", "metrics", "mechanics", "likelihood",
        "ingest", "simulate", "fit",
    }
    unknown = sorted(set(raw) - known_sections)
    if unknown:
        raise ConfigError(f"{path}: unknown sections: {', '.join(unknown)}")

    run = _Section("run", raw.get("run", {}))
    seed = run.get("seed", int, required=True)
    output_dir = run.get("output_dir", str, required=True)
    task = MessageKind(run.get_choice("task", ("post", "reply"), default="post"))
    language = Language(run.get_choice("language", ("en", "de"), default="en"))
    condition = run.get("condition", str, default="in-context")
    run.finish()

    data_sec = _Section("data", raw.get("data", {}))
    data = DataPaths(**{key: data_sec.get(key, str) for key in _DATA_KEYS})
    data_sec.finish()

    prov = _Section("provider", raw.get("provider", {}))
    provider = ProviderConfig(
        kind=prov.get_choice("kind", ("stub", "markov", "remote"), default="stub"),
        stub_text=prov.get("stub_text", str),
        endpoint=prov.get("endpoint", str),
        timeout=prov.get("timeout", float, default=10.0),
        retries=prov.get("retries", int, default=2),
        backoff=prov.get("backoff", float, default=0.25),
        max_tokens=prov.get("max_tokens", int, default=64),
        temperature=prov.get("temperature", float, default=0.7),
        markov_order=prov.get("markov_order", int, default=2),
        markov_max_tokens=prov.get("markov_max_tokens", int, default=24),
    )
    prov.finish()
    env_endpoint = os.environ.get(SIDECAR_URL_ENV)
    if env_endpoint:
        provider = replace(provider, endpoint=env_endpoint)
    if provider.markov_order not in (1, 2):
        raise ConfigError(f"[provider] markov_order must be 1 or 2, got {provider.markov_order}")

    met = _Section("metrics", raw.get("metrics", {}))
    categories = met.get("categories", list, default=[])
    if not all(isinstance(c, str) for c in categories):
        raise ConfigError("[metrics] categories must be a list of strings")
    metrics = MetricsConfig(
        n=met.get("n", int, default=100),
        k=met.get("k", int, default=10),
        max_n=met.get("max_n", int, default=4),
        smoothing_epsilon=met.get("smoothing_epsilon", float, default=0.1),
        distance=met.get_choice("distance", ("euclidean", "cosine"), default="euclidean"),
        embedder=met.get_choice("embedder", ("hash", "fixture", "remote"), default="hash"),
        embedder_dim=met.get("embedder_dim", int, default=64),
        labels_source=met.get_choice("labels", ("none", "fixture", "remote"), default="none"),
        categories=tuple(categories),
    )
    met.finish()

    mechanics = MechanicsConfig.from_dict(raw.get("mechanics", {}))

    lik = _Section("likelihood", raw.get("likelihood", {}))
    likelihood = LikelihoodConfig(
        lr=lik.get("lr", float, default=0.01),
        weight_decay=lik.get("weight_decay", float, default=0.01),
        epochs=lik.get("epochs", int, default=20),
        batch_size=lik.get("batch_size", int, default=32),
        threshold=lik.get("threshold", float, default=0.5),
        train_fraction=lik.get("train_fraction", float, default=0.8),
        per_user_cap=lik.get("per_user_cap", int, default=5),
    )
    lik.finish()

    ing = _Section("ingest", raw.get("ingest", {}))
    ingest = IngestConfig(
        min_chars=ing.get("min_chars", int, default=32),
        top_k=ing.get("top_k", int, default=50),
    )
    ing.finish()

    sim = _Section("simulate", raw.get("simulate", {}))
    agents = sim.get("agents", list, default=[])
    if not all(isinstance(a, str) for a in agents):
        raise ConfigError("[simulate] agents must be a list of agent ids")
    seeds_raw = sim.get("seed_messages", list, default=[])
    seed_messages = []
    for i, entry in enumerate(seeds_raw):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"[simulate] seed_messages[{i}] must be a table")
        entry_unknown = sorted(set(entry) - {"sender", "text", "recipient", "topic"})
        if entry_unknown:
            raise ConfigError(
                f"[simulate] seed_messages[{i}] has unknown keys: {', '.join(entry_unknown)}"
            )
        if "sender" not in entry or "text" not in entry:
            raise ConfigError(f"[simulate] seed_messages[{i}] needs sender and text")
        seed_messages.append(
            SeedMessageSpec(
                sender=str(entry["sender"]),
                text=str(entry["text"]),
                recipient=str(entry.get("recipient", "*")),
                topic=None if entry.get("topic") is None else str(entry["topic"]),
            )
        )
    simulate = SimulateConfig(
        n_ticks=sim.get("n_ticks", int, default=4),
        agents=tuple(agents),
        seed_messages=tuple(seed_messages),
        q_plugin=sim.get_choice("q_plugin", ("lexicon",), default="lexicon"),
    )
    sim.finish()

    fit_sec = _Section("fit", raw.get("fit", {}))
    family_raw = fit_sec.get("family", list, default=[])
    family = []
    for i, entry in enumerate(family_raw):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"[fit] family[{i}] must be a table")
        family.append(MechanicsConfig.from_dict(entry))
    fit = FitConfig(
        alpha=fit_sec.get("alpha", float, default=0.5),
        family=tuple(family),
    )
    fit_sec.finish()

    return ExperimentConfig(
        path=path,
        seed=seed,
        output_dir=Path(output_dir),
        task=task,
        language=language,
        condition=condition,
        data=data,
        provider=provider,
        metrics=metrics,
        mechanics=mechanics,
        likelihood=likelihood,
        ingest=ingest,
        simulate=simulate,
        fit=fit,
    )
