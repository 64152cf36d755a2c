"""Feed curation: ranking/filtering variants, realism loss, and fitting.

A MechanicsConfig is a value describing how an inbox becomes a feed.
mechanics_loss compares a predicted feed against an observed one on two
axes (membership and order); fit_mechanics grid-searches a family of
configs against observations.
"""

from __future__ import annotations

import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import TYPE_CHECKING

from .errors import ConfigError, InputError

if TYPE_CHECKING:
    from .model import Message

MAX_FEED_K = 1000


class Variant(str, Enum):
    IDENTITY = "identity"
    CHRONOLOGICAL = "chronological"
    REVERSE_CHRONOLOGICAL = "reverse_chronological"
    RANDOM_K = "random_k"
    TOP_K_BY_SCORE = "top_k_by_score"


class Scoring(str, Enum):
    TEXT_LENGTH = "text_length"
    REPLY_COUNT = "reply_count"


@dataclass(frozen=True)
class MechanicsConfig:
    """One curation rule, with optional per-agent overrides (one level deep)."""

    variant: Variant = Variant.IDENTITY
    k: int | None = None
    seed: int | None = None
    scoring: Scoring | None = None
    max_k: int = MAX_FEED_K
    overrides: Mapping[str, MechanicsConfig] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant in (Variant.RANDOM_K, Variant.TOP_K_BY_SCORE):
            if self.k is None:
                raise ConfigError(f"{self.variant.value} requires k")
            if self.k < 1:
                raise ConfigError(f"k must be >= 1, got {self.k}")
            if self.k > self.max_k:
                raise ConfigError(f"k={self.k} exceeds the feed bound {self.max_k}")
        if self.variant is Variant.RANDOM_K and self.seed is None:
            raise ConfigError("random_k requires a seed")
        if self.variant is Variant.TOP_K_BY_SCORE and self.scoring is None:
            raise ConfigError("top_k_by_score requires a scoring rule")
        for aid, sub in self.overrides.items():
            if sub.overrides:
                raise ConfigError(f"override for agent {aid!r} may not nest further overrides")

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"variant": self.variant.value}
        if self.k is not None:
            out["k"] = self.k
        if self.seed is not None:
            out["seed"] = self.seed
        if self.scoring is not None:
            out["scoring"] = self.scoring.value
        if self.max_k != MAX_FEED_K:
            out["max_k"] = self.max_k
        if self.overrides:
            out["overrides"] = {aid: sub.to_dict() for aid, sub in self.overrides.items()}
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> MechanicsConfig:
        known = {"variant", "k", "seed", "scoring", "max_k", "overrides"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown mechanics keys: {', '.join(unknown)}")
        try:
            variant = Variant(raw.get("variant", "identity"))
        except ValueError:
            raise ConfigError(f"unknown mechanics variant {raw.get('variant')!r}") from None
        scoring_raw = raw.get("scoring")
        try:
            scoring = None if scoring_raw is None else Scoring(scoring_raw)
        except ValueError:
            raise ConfigError(f"unknown scoring rule {scoring_raw!r}") from None
        overrides_raw = raw.get("overrides") or {}
        if not isinstance(overrides_raw, Mapping):
            raise ConfigError("mechanics overrides must be a table of agent id -> config")
        for key in ("k", "seed", "max_k"):
            value = raw.get(key)
            if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
                raise ConfigError(f"mechanics {key} must be an integer, got {value!r}")
        return cls(
            variant=variant,
            k=raw.get("k"),
            seed=raw.get("seed"),
            scoring=scoring,
            max_k=raw.get("max_k", MAX_FEED_K),
            overrides={
                str(aid): cls.from_dict(sub) for aid, sub in overrides_raw.items()
            },
        )


def _score(m: Message, inbox: Sequence[Message], scoring: Scoring) -> int:
    if scoring is Scoring.TEXT_LENGTH:
        return len(m.text)
    return sum(1 for other in inbox if other.reply_to == m.id)


def apply_mechanics(
    config: MechanicsConfig,
    agent_id: str | None,
    inbox: Sequence[Message],
) -> list[Message]:
    """Curate an inbox into a feed. Pure: same inputs, same feed.

    agent_id selects a per-agent override when one exists; None (used when
    fitting against recorded observations) applies the base config as-is.
    """
    cfg = config
    if agent_id is not None and agent_id in config.overrides:
        cfg = config.overrides[agent_id]

    messages = list(inbox)
    if cfg.variant is Variant.IDENTITY:
        return messages
    if cfg.variant is Variant.CHRONOLOGICAL:
        return sorted(messages, key=lambda m: m.tick)
    if cfg.variant is Variant.REVERSE_CHRONOLOGICAL:
        return sorted(messages, key=lambda m: -m.tick)
    if cfg.variant is Variant.RANDOM_K:
        if cfg.k >= len(messages):
            return messages
        rng = random.Random(cfg.seed)
        keep = sorted(rng.sample(range(len(messages)), cfg.k))
        return [messages[i] for i in keep]
    # top_k_by_score: stable sort descending, so inbox order breaks ties
    ranked = sorted(
        messages, key=lambda m: -_score(m, messages, cfg.scoring)
    )
    return ranked[: cfg.k]


def _check_unique_ids(messages: Sequence[Message], label: str) -> list[str]:
    ids = [m.id for m in messages]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise InputError(f"duplicate message ids in {label}: {', '.join(dupes)}")
    return ids


def mechanics_loss(
    predicted: Sequence[Message],
    observed: Sequence[Message],
    alpha: float = 0.5,
) -> float:
    """Dissimilarity of two feeds in [0, 1]; 0 only for same set and order.

    alpha weights set membership (1 - Jaccard on id sets) against order
    (fraction of discordant pairs among ids common to both feeds). When
    fewer than two common ids exist the order term is 0 for identical id
    sets and 1 otherwise.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    pred_ids = _check_unique_ids(predicted, "predicted feed")
    obs_ids = _check_unique_ids(observed, "observed feed")
    pred_set, obs_set = set(pred_ids), set(obs_ids)

    union = pred_set | obs_set
    jaccard = 1.0 if not union else len(pred_set & obs_set) / len(union)
    set_term = 1.0 - jaccard

    common = pred_set & obs_set
    if len(common) < 2:
        order_term = 0.0 if pred_set == obs_set else 1.0
    else:
        pred_pos = {mid: i for i, mid in enumerate(pred_ids) if mid in common}
        obs_pos = {mid: i for i, mid in enumerate(obs_ids) if mid in common}
        discordant = 0
        total = 0
        for a, b in combinations(sorted(common), 2):
            total += 1
            if (pred_pos[a] - pred_pos[b]) * (obs_pos[a] - obs_pos[b]) < 0:
                discordant += 1
        order_term = discordant / total

    return alpha * set_term + (1.0 - alpha) * order_term


@dataclass(frozen=True)
class Observation:
    """One recorded curation event: the raw inbox and the feed shown."""

    inbox: tuple[Message, ...]
    observed_feed: tuple[Message, ...]

    def __post_init__(self) -> None:
        inbox_ids = set(_check_unique_ids(self.inbox, "observation inbox"))
        feed_ids = set(_check_unique_ids(self.observed_feed, "observation feed"))
        extra = sorted(feed_ids - inbox_ids)
        if extra:
            raise InputError(f"observed feed contains ids not in the inbox: {', '.join(extra)}")


def fit_mechanics(
    observations: Sequence[Observation],
    family: Sequence[MechanicsConfig],
    alpha: float = 0.5,
) -> tuple[MechanicsConfig, float]:
    """Pick the family member with the lowest mean loss over observations.

    Ties keep the earliest candidate, so family order is the tiebreak.
    """
    if not observations:
        raise InputError("fit_mechanics needs at least one observation")
    if not family:
        raise InputError("fit_mechanics needs a non-empty candidate family")
    best: tuple[MechanicsConfig, float] | None = None
    for candidate in family:
        total = 0.0
        for obs in observations:
            feed = apply_mechanics(candidate, None, obs.inbox)
            total += mechanics_loss(feed, obs.observed_feed, alpha=alpha)
        mean_loss = total / len(observations)
        if best is None or mean_loss < best[1]:
            best = (candidate, mean_loss)
    return best
