"""Behavior providers: how an agent turns its state and feed into messages.

Three implementations ship: a stub that echoes, a seeded Markov generator
for desk-scale runs, and a remote provider that calls a generation
service. Prompt text lives in versioned template files, not code.
"""

from __future__ import annotations

import hashlib
import random
import time
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Protocol

import requests

from .errors import GenerationError, InputError, TransportError
from .model import AgentState, Message, MessageKind, make_message_id
from .seeding import derive_seed
from .text import tokenize

REPLY_ONLY = "reply_only"


class Language(str, Enum):
    EN = "en"
    DE = "de"


@dataclass(frozen=True)
class Persona:
    name: str
    party: str
    language: Language = Language.EN

    def __post_init__(self) -> None:
        if not self.name:
            raise InputError("persona name must be non-empty")
        if not self.party:
            raise InputError("persona party must be non-empty")


@dataclass(frozen=True)
class ReplyHistory:
    """(post, reply) pairs for one user, most recent last."""

    pairs: tuple[tuple[str, str], ...] = ()
    max_pairs: int = 5

    def __post_init__(self) -> None:
        if self.max_pairs < 1:
            raise InputError(f"max_pairs must be >= 1, got {self.max_pairs}")
        if len(self.pairs) > self.max_pairs:
            raise InputError(f"{len(self.pairs)} pairs exceed max_pairs={self.max_pairs}")
        for post, reply in self.pairs:
            if not post or not reply:
                raise InputError("history pair texts must be non-empty")

    @classmethod
    def from_pairs(
        cls, pairs: Sequence[tuple[str, str]], max_pairs: int = 5
    ) -> ReplyHistory:
        """Build a history, keeping only the max_pairs most recent pairs."""
        kept = tuple(tuple(p) for p in pairs[-max_pairs:])
        return cls(pairs=kept, max_pairs=max_pairs)


@dataclass(frozen=True)
class Prompt:
    task: MessageKind
    rendered_text: str
    constraints: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.task is MessageKind.REPLY and REPLY_ONLY not in self.constraints:
            raise InputError("reply prompts must carry the reply_only constraint")

    @property
    def prompt_id(self) -> str:
        """Short stable id for logs and transport errors."""
        return hashlib.sha256(self.rendered_text.encode("utf-8")).hexdigest()[:12]


def _template(name: str) -> str:
    return (resources.files("twon") / "templates" / name).read_text(encoding="utf-8")


def build_post_prompt(persona: Persona, topic: str) -> Prompt:
    """Render the posting prompt for a persona and topic.

    The language directive comes from the template file picked by the
    persona's language, so wording changes never touch code.
    """
    if not topic:
        raise InputError("topic must be non-empty")
    template = _template(f"post_{persona.language.value}.txt")
    text = template.format(name=persona.name, party=persona.party, topic=topic)
    return Prompt(task=MessageKind.POST, rendered_text=text)


def build_reply_prompt(history: ReplyHistory, post: Message) -> Prompt:
    """Render the reply prompt: few-shot history pairs, then the target post."""
    rendered_pairs = "".join(
        f"Post: {p}\nReply: {r}\n\n" for p, r in history.pairs
    )
    template = _template("reply.txt")
    text = template.format(history_pairs=rendered_pairs, post=post.text)
    return Prompt(task=MessageKind.REPLY, rendered_text=text, constraints=(REPLY_ONLY,))


# Markov chain sentinels; the NUL prefix keeps them out of any vocabulary
# that whitespace tokenization of real text could produce.
_START = "\x00<s>"
_END = "\x00</s>"


@dataclass(frozen=True)
class MarkovModel:
    """Token transition counts with start/end sentinels. Counts are raw;
    add-one smoothing is applied at generation time."""

    order: int
    counts: dict[tuple[str, ...], Counter[str]] = field(repr=False, default_factory=dict)
    vocab: tuple[str, ...] = ()


def markov_train(corpus: Sequence[str], order: int) -> MarkovModel:
    """Count token transitions over the corpus at the given order (1 or 2)."""
    if order not in (1, 2):
        raise InputError(f"order must be 1 or 2, got {order}")
    if not corpus:
        raise InputError("corpus must be non-empty")
    counts: dict[tuple[str, ...], Counter[str]] = {}
    vocab: set[str] = set()
    for text in corpus:
        tokens = tokenize(text)
        vocab.update(tokens)
        state = (_START,) * order
        for tok in (*tokens, _END):
            counts.setdefault(state, Counter())[tok] += 1
            state = (*state[1:], tok)
    if not vocab:
        raise InputError("corpus contains no tokens")
    return MarkovModel(order=order, counts=counts, vocab=tuple(sorted(vocab)))


def markov_generate(model: MarkovModel, seed: int, max_tokens: int) -> str:
    """Walk the chain deterministically; stops at the end sentinel or cap.

    Add-one smoothing means every vocabulary token (and stopping) stays
    reachable from every state, so the output can be empty.
    """
    if max_tokens < 1:
        raise InputError(f"max_tokens must be >= 1, got {max_tokens}")
    rng = random.Random(seed)
    population = (*model.vocab, _END)
    state = (_START,) * model.order
    out: list[str] = []
    while len(out) < max_tokens:
        seen = model.counts.get(state, Counter())
        weights = [seen.get(tok, 0) + 1 for tok in population]
        tok = rng.choices(population, weights=weights, k=1)[0]
        if tok == _END:
            break
        out.append(tok)
        state = (*state[1:], tok)
    return " ".join(out)


class BehaviorProvider(Protocol):
    def act(self, state: AgentState, feed: Sequence[Message]) -> list[Message]:
        """Messages the agent emits after perceiving the curated feed.

        state is the already-updated agent state for the tick being
        produced; emitted messages must carry state.id and state.tick.
        """
        ...


def _reply_to(state: AgentState, parent: Message, index: int, text: str) -> Message:
    return Message(
        id=make_message_id(state.tick, state.id, index),
        sender=state.id,
        recipient=parent.sender,
        tick=state.tick,
        kind=MessageKind.REPLY,
        reply_to=parent.id,
        text=text,
        topic=parent.topic,
    )


@dataclass(frozen=True)
class StubProvider:
    """Replies once to every feed message; echoes unless given fixed text."""

    text: str | None = None

    def act(self, state: AgentState, feed: Sequence[Message]) -> list[Message]:
        return [
            _reply_to(state, parent, i, self.text or parent.text)
            for i, parent in enumerate(feed)
        ]


@dataclass(frozen=True)
class MarkovProvider:
    """Replies with Markov text; the per-message seed is derived from the
    run seed, agent id, tick, and parent id, so runs replay exactly."""

    model: MarkovModel
    seed: int
    max_tokens: int = 24

    def act(self, state: AgentState, feed: Sequence[Message]) -> list[Message]:
        out = []
        for i, parent in enumerate(feed):
            base = derive_seed("markov", self.seed, state.id, state.tick, parent.id)
            text = ""
            for attempt in range(16):
                text = markov_generate(self.model, base + attempt, self.max_tokens)
                if text:
                    break
            if not text:
                raise GenerationError(
                    f"markov chain produced no tokens for agent {state.id!r}"
                )
            out.append(_reply_to(state, parent, i, text))
        return out


def remote_generate(
    endpoint: str,
    prompt: Prompt,
    *,
    timeout: float = 10.0,
    retries: int = 2,
    backoff: float = 0.25,
    max_tokens: int = 64,
    temperature: float = 0.7,
    session: requests.Session | None = None,
) -> str:
    """Generate text via the sidecar's /generate endpoint.

    Retries transport failures and constraint rejections with exponential
    backoff. The service signals a reply-only violation with HTTP 422 and
    an error body (see twon.schemas); that becomes a GenerationError once
    retries run out, while transport trouble stays a TransportError.
    """
    url = endpoint.rstrip("/") + "/generate"
    payload = {
        "prompt": prompt.rendered_text,
        "max_tokens": max_tokens,
        "temperature": temperature,
        "constraint": {REPLY_ONLY: REPLY_ONLY in prompt.constraints},
    }
    post = session.post if session is not None else requests.post
    last_failure = "no attempt made"
    violation = False
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last_failure, violation = f"transport: {exc}", False
            continue
        if resp.status_code == 422:
            last_failure, violation = "constraint rejected", True
            continue
        if resp.status_code != 200:
            last_failure, violation = f"HTTP {resp.status_code}", False
            continue
        try:
            data = resp.json()
        except ValueError:
            last_failure, violation = "body is not JSON", False
            continue
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            last_failure, violation = "malformed response body", False
            continue
        text = data["text"]
        if not text:
            raise GenerationError(
                f"{url} returned empty text", prompt_id=prompt.prompt_id
            )
        return text
    if violation:
        raise GenerationError(
            f"{url} rejected the reply-only constraint after {retries + 1} attempts",
            prompt_id=prompt.prompt_id,
        )
    raise TransportError(
        f"POST {url} failed after {retries + 1} attempts ({last_failure})",
        prompt_id=prompt.prompt_id,
    )


@dataclass(frozen=True)
class RemoteProvider:
    """Replies through a generation service, one call per feed message."""

    endpoint: str
    history: ReplyHistory = ReplyHistory()
    timeout: float = 10.0
    retries: int = 2
    backoff: float = 0.25
    max_tokens: int = 64
    temperature: float = 0.7

    def act(self, state: AgentState, feed: Sequence[Message]) -> list[Message]:
        out = []
        for i, parent in enumerate(feed):
            prompt = build_reply_prompt(self.history, parent)
            text = remote_generate(
                self.endpoint,
                prompt,
                timeout=self.timeout,
                retries=self.retries,
                backoff=self.backoff,
                max_tokens=self.max_tokens,
                temperature=self.temperature,
            )
            out.append(_reply_to(state, parent, i, text))
        return out
