"""Dataset loading, preprocessing filters, and training-set construction.

The filter pipeline drops URL-bearing samples, retweet-style reposts, and
short texts, counting every drop by rule so corpus sizes always reconcile.
Downstream builders derive reply histories and the balanced
reply-likelihood dataset.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .behavior import Language, ReplyHistory
from .embeddings import EmbeddingSource
from .errors import InputError
from .likelihood import LikelihoodExample
from .model import MessageKind
from .seeding import derive_seed

log = logging.getLogger(__name__)

# Frozen URL rule: explicit scheme, www.-prefix, or bare domain with a
# common TLD, anywhere in the text.
URL_RE = re.compile(
    r"""(?ix)
    \b(
        https?://\S+
      | www\.\S+
      | [a-z0-9][a-z0-9.-]*\.(?:com|org|net|de|co|io|ly|me|tv|gov|edu)(?:/\S*)?
    )
    """,
)

_SAMPLE_FIELDS = ("user_id", "text", "kind", "reply_to_text", "topic", "language", "timestamp")


@dataclass(frozen=True)
class RawSample:
    user_id: str
    text: str
    kind: MessageKind
    language: Language
    timestamp: int
    reply_to_text: str | None = None
    topic: str | None = None

    def __post_init__(self) -> None:
        if not self.user_id:
            raise InputError("sample user_id must be non-empty")
        if (self.kind is MessageKind.REPLY) and not self.reply_to_text:
            raise InputError(f"reply sample by {self.user_id!r} lacks reply_to_text")

    def to_dict(self) -> dict[str, object]:
        return {
            "user_id": self.user_id,
            "text": self.text,
            "kind": self.kind.value,
            "reply_to_text": self.reply_to_text,
            "topic": self.topic,
            "language": self.language.value,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> RawSample:
        missing = [k for k in _SAMPLE_FIELDS if k not in raw]
        if missing:
            raise InputError(f"sample record missing fields: {', '.join(missing)}")
        try:
            kind = MessageKind(raw["kind"])
            language = Language(raw["language"])
        except ValueError as exc:
            raise InputError(f"sample has invalid enum value: {exc}") from None
        if not isinstance(raw["timestamp"], int) or isinstance(raw["timestamp"], bool):
            raise InputError(f"sample timestamp must be an integer, got {raw['timestamp']!r}")
        return cls(
            user_id=str(raw["user_id"]),
            text=str(raw["text"]),
            kind=kind,
            language=language,
            timestamp=raw["timestamp"],
            reply_to_text=None if raw["reply_to_text"] is None else str(raw["reply_to_text"]),
            topic=None if raw["topic"] is None else str(raw["topic"]),
        )


@dataclass(frozen=True)
class Corpus:
    """Samples plus the running count of drops per filter rule."""

    samples: tuple[RawSample, ...]
    provenance: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: Sequence[RawSample]) -> Corpus:
        return cls(samples=tuple(samples))

    def users(self) -> list[str]:
        return sorted({s.user_id for s in self.samples})

    def dump_jsonl(self, path: str | Path) -> None:
        lines = [json.dumps(s.to_dict(), ensure_ascii=False) for s in self.samples]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> Corpus:
        samples = []
        for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            samples.append(RawSample.from_dict(raw))
        return cls.from_samples(samples)


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


def filter_sample(sample: RawSample, min_chars: int = 32) -> FilterDecision:
    """Apply the drop rules in fixed order: url, retweet, too_short.

    too_short is a strict less-than on the character count, so a text of
    exactly min_chars characters is kept.
    """
    if min_chars < 1:
        raise InputError(f"min_chars must be >= 1, got {min_chars}")
    if URL_RE.search(sample.text):
        return FilterDecision(keep=False, reason="url")
    if sample.text.startswith("RT ") or sample.text.startswith("RT@"):
        return FilterDecision(keep=False, reason="retweet")
    if len(sample.text) < min_chars:
        return FilterDecision(keep=False, reason="too_short")
    return FilterDecision(keep=True)


def filter_corpus(corpus: Corpus, min_chars: int = 32) -> Corpus:
    """Drop samples per filter_sample, accumulating provenance counts."""
    kept = []
    drops = {"url": 0, "retweet": 0, "too_short": 0}
    for sample in corpus.samples:
        decision = filter_sample(sample, min_chars=min_chars)
        if decision.keep:
            kept.append(sample)
        else:
            drops[decision.reason] += 1
    merged = dict(corpus.provenance)
    for reason, count in drops.items():
        merged[reason] = merged.get(reason, 0) + count
    return Corpus(samples=tuple(kept), provenance=merged)


def select_active_users(corpus: Corpus, top_k: int) -> Corpus:
    """Keep the top_k users by sample count, ties to the lexicographically
    smaller user id; sample order is preserved."""
    if top_k < 1:
        raise InputError(f"top_k must be >= 1, got {top_k}")
    if not corpus.samples:
        raise InputError("cannot select active users from an empty corpus")
    counts: dict[str, int] = {}
    for s in corpus.samples:
        counts[s.user_id] = counts.get(s.user_id, 0) + 1
    ranked = sorted(counts, key=lambda uid: (-counts[uid], uid))
    keep = set(ranked[:top_k])
    kept = tuple(s for s in corpus.samples if s.user_id in keep)
    merged = dict(corpus.provenance)
    dropped = len(corpus.samples) - len(kept)
    if dropped:
        merged["inactive_user"] = merged.get("inactive_user", 0) + dropped
    return Corpus(samples=kept, provenance=merged)


def _replies_by_time(corpus: Corpus, user_id: str) -> list[RawSample]:
    replies = [
        s for s in corpus.samples
        if s.user_id == user_id and s.kind is MessageKind.REPLY
    ]
    return sorted(replies, key=lambda s: s.timestamp)


def build_reply_pairs(corpus: Corpus, per_user_cap: int) -> dict[str, ReplyHistory]:
    """Chronological (post, reply) pairs per user, newest per_user_cap kept.

    Users without replies are simply absent from the map.
    """
    if per_user_cap < 1:
        raise InputError(f"per_user_cap must be >= 1, got {per_user_cap}")
    out: dict[str, ReplyHistory] = {}
    for user_id in corpus.users():
        pairs = [
            (s.reply_to_text, s.text) for s in _replies_by_time(corpus, user_id)
        ]
        if pairs:
            out[user_id] = ReplyHistory.from_pairs(pairs, max_pairs=per_user_cap)
    return out


def build_likelihood_dataset(
    corpus: Corpus, embedder: EmbeddingSource, seed: int
) -> list[LikelihoodExample]:
    """Balanced reply-decision examples, per user.

    Positives are the distinct posts the user replied to; the candidate is
    scored against the rest of the user's replied-to history (left out so
    the example never contains its own answer). Negatives are drawn
    uniformly (seeded per user) from posts inside the user's reply time
    window that the user never replied to: treated as seen-and-skipped.
    Classes are balanced per user by downsampling the larger side. Users
    that cannot yield both classes are skipped with a logged reason.
    """
    examples: list[LikelihoodExample] = []
    for user_id in corpus.users():
        replies = _replies_by_time(corpus, user_id)
        if not replies:
            log.info("likelihood dataset: skipping %s (no_replies)", user_id)
            continue
        positives: list[str] = []
        for s in replies:
            if s.reply_to_text not in positives:
                positives.append(s.reply_to_text)
        if len(positives) < 2:
            # One positive leaves no history once the candidate is held out.
            log.info("likelihood dataset: skipping %s (too_few_positives)", user_id)
            continue
        window = (replies[0].timestamp, replies[-1].timestamp)
        positive_set = set(positives)
        pool: list[str] = []
        seen = set()
        for s in sorted(corpus.samples, key=lambda s: (s.timestamp, s.text)):
            if s.kind is not MessageKind.POST or s.user_id == user_id:
                continue
            if not window[0] <= s.timestamp <= window[1]:
                continue
            if s.text in positive_set or s.text in seen:
                continue
            seen.add(s.text)
            pool.append(s.text)
        if not pool:
            log.info("likelihood dataset: skipping %s (no_negatives)", user_id)
            continue

        rng = random.Random(derive_seed(seed, user_id))
        count = min(len(positives), len(pool))
        chosen_pos = positives
        if len(positives) > count:
            idx = sorted(rng.sample(range(len(positives)), count))
            chosen_pos = [positives[i] for i in idx]
        idx = sorted(rng.sample(range(len(pool)), count))
        chosen_neg = [pool[i] for i in idx]

        needed = list(dict.fromkeys([*positives, *chosen_neg]))
        vectors = embedder.embed(needed)
        vec = {text: vectors[i] for i, text in enumerate(needed)}

        full_history = np.stack([vec[t] for t in positives])
        for candidate in chosen_pos:
            rows = [vec[t] for t in positives if t != candidate]
            examples.append(
                LikelihoodExample(
                    history=np.stack(rows), post=vec[candidate], label=1
                )
            )
        for candidate in chosen_neg:
            examples.append(
                LikelihoodExample(history=full_history, post=vec[candidate], label=0)
            )
    return examples


def split(corpus: Corpus, train_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """User-level split: every sample of a user lands on one side.

    The train side gets round(fraction * users), clamped so both sides
    are non-empty; needs at least two distinct users.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InputError(f"train_fraction must be in (0, 1), got {train_fraction}")
    users = corpus.users()
    if len(users) < 2:
        raise InputError("user-level split needs at least 2 distinct users")
    rng = random.Random(seed)
    rng.shuffle(users)
    n_train = min(max(round(train_fraction * len(users)), 1), len(users) - 1)
    train_users = set(users[:n_train])
    train = tuple(s for s in corpus.samples if s.user_id in train_users)
    test = tuple(s for s in corpus.samples if s.user_id not in train_users)
    return Corpus(samples=train), Corpus(samples=test)
