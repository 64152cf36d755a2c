"""Agents, messages, worlds, and the synchronous tick loop.

All domain values are immutable; step() builds a new world and commits
nothing if any part of a tick fails. Agents are always processed in
sorted-id order, which is the only order anything here depends on.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import (
    InputError,
    StepError,
    TimeConsistencyError,
    TwonError,
    UnknownAgentError,
)
from .mechanics import MechanicsConfig, apply_mechanics

if TYPE_CHECKING:
    from .behavior import BehaviorProvider, Persona

BROADCAST = "*"

_TRANSCRIPT_FIELDS = ("id", "sender", "recipient", "tick", "kind", "reply_to", "text", "topic")


class MessageKind(str, Enum):
    POST = "post"
    REPLY = "reply"


@dataclass(frozen=True)
class Message:
    """One utterance. recipient is an agent id or BROADCAST ("*")."""

    id: str
    sender: str
    recipient: str
    tick: int
    kind: MessageKind
    text: str
    reply_to: str | None = None
    topic: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("message id must be non-empty")
        if not self.sender or self.sender == BROADCAST:
            raise InputError(f"message {self.id!r}: sender must be a concrete agent id")
        if not self.recipient:
            raise InputError(f"message {self.id!r}: recipient must be non-empty")
        if self.tick < 0:
            raise InputError(f"message {self.id!r}: tick must be >= 0, got {self.tick}")
        if not self.text:
            raise InputError(f"message {self.id!r}: text must be non-empty")
        if (self.kind is MessageKind.REPLY) != (self.reply_to is not None):
            raise InputError(
                f"message {self.id!r}: reply_to must be set exactly when kind is reply"
            )

    def to_dict(self) -> dict[str, object]:
        return {
            "id": self.id,
            "sender": self.sender,
            "recipient": self.recipient,
            "tick": self.tick,
            "kind": self.kind.value,
            "reply_to": self.reply_to,
            "text": self.text,
            "topic": self.topic,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> Message:
        missing = [k for k in _TRANSCRIPT_FIELDS if k not in raw]
        if missing:
            raise InputError(f"message record missing fields: {', '.join(missing)}")
        try:
            kind = MessageKind(raw["kind"])
        except ValueError:
            raise InputError(f"unknown message kind {raw['kind']!r}") from None
        if not isinstance(raw["tick"], int) or isinstance(raw["tick"], bool):
            raise InputError(f"message tick must be an integer, got {raw['tick']!r}")
        return cls(
            id=str(raw["id"]),
            sender=str(raw["sender"]),
            recipient=str(raw["recipient"]),
            tick=raw["tick"],
            kind=kind,
            reply_to=None if raw["reply_to"] is None else str(raw["reply_to"]),
            text=str(raw["text"]),
            topic=None if raw["topic"] is None else str(raw["topic"]),
        )


def make_message_id(tick: int, sender: str, index: int) -> str:
    """Stable id for the index-th message an agent emits on a tick."""
    return f"m{tick}-{sender}-{index}"


@dataclass(frozen=True)
class TickRecord:
    """What one agent saw and said on one tick."""

    sent: tuple[Message, ...]
    received: tuple[Message, ...]


@dataclass(frozen=True)
class AgentState:
    id: str
    persona: Persona | None = None
    history: tuple[TickRecord, ...] = ()

    def __post_init__(self) -> None:
        if not self.id or self.id == BROADCAST:
            raise InputError("agent id must be non-empty and not the broadcast marker")

    @property
    def tick(self) -> int:
        """The tick this state is synced to: one history entry per tick."""
        return len(self.history)


def update_agent(
    state: AgentState, sent: Sequence[Message], received: Sequence[Message]
) -> AgentState:
    """Append one tick of discourse to the agent's history.

    Every message must carry the state's current tick; sent messages must
    be the agent's own and received ones addressed to it (or broadcast).
    """
    for m in sent:
        if m.sender != state.id:
            raise InputError(f"agent {state.id!r} cannot record {m.id!r} sent by {m.sender!r}")
    for m in received:
        if m.recipient not in (state.id, BROADCAST):
            raise InputError(f"agent {state.id!r} cannot receive {m.id!r} for {m.recipient!r}")
    for m in (*sent, *received):
        if m.tick != state.tick:
            raise TimeConsistencyError(
                f"message {m.id!r} has tick {m.tick}, agent {state.id!r} is at tick {state.tick}"
            )
    record = TickRecord(sent=tuple(sent), received=tuple(received))
    return replace(state, history=state.history + (record,))


@dataclass(frozen=True)
class World:
    """Global state between ticks. Treat the agents mapping as read-only."""

    tick: int
    agents: Mapping[str, AgentState]
    undelivered: tuple[Message, ...] = ()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.tick < 0:
            raise InputError("world tick must be >= 0")
        if not self.agents:
            raise InputError("world must contain at least one agent")
        for aid, state in self.agents.items():
            if aid != state.id:
                raise InputError(f"agent key {aid!r} does not match state id {state.id!r}")
        for m in self.undelivered:
            _check_routable(self.agents, m)
            if m.tick != self.tick:
                raise TimeConsistencyError(
                    f"undelivered message {m.id!r} has tick {m.tick}, world is at {self.tick}"
                )

    @classmethod
    def create(
        cls,
        agent_ids: Iterable[str],
        *,
        seed_messages: Sequence[Message] = (),
        rng_seed: int = 0,
        personas: Mapping[str, Persona] | None = None,
    ) -> World:
        agents = {
            aid: AgentState(id=aid, persona=(personas or {}).get(aid))
            for aid in agent_ids
        }
        return cls(tick=0, agents=agents, undelivered=tuple(seed_messages), rng_seed=rng_seed)


def _check_routable(agents: Mapping[str, AgentState], m: Message) -> None:
    if m.sender not in agents:
        raise UnknownAgentError(f"message {m.id!r} sent by unknown agent {m.sender!r}")
    if m.recipient != BROADCAST and m.recipient not in agents:
        raise UnknownAgentError(f"message {m.id!r} addressed to unknown agent {m.recipient!r}")
    if m.recipient == m.sender:
        raise InputError(f"message {m.id!r} addresses its own sender")


def route_inbox(world: World, agent_id: str) -> list[Message]:
    """Undelivered messages visible to the agent, in production order.

    An agent sees what is addressed to it plus broadcasts, never its
    own output.
    """
    if agent_id not in world.agents:
        raise UnknownAgentError(f"unknown agent {agent_id!r}")
    return [
        m
        for m in world.undelivered
        if m.sender != agent_id and m.recipient in (agent_id, BROADCAST)
    ]


def step(
    world: World,
    mechanics: MechanicsConfig,
    behaviors: Mapping[str, BehaviorProvider],
) -> World:
    """Advance every agent one tick and return the new world.

    Per agent, in sorted-id order: route the inbox, curate it through the
    mechanics, fold the tick into the agent's history, then let the
    behavior act on the updated state. Emissions become the next tick's
    undelivered set. Nothing is committed if any part fails.
    """
    missing = sorted(set(world.agents) - set(behaviors))
    if missing:
        raise InputError(f"no behavior provider for agents: {', '.join(missing)}")

    new_tick = world.tick + 1
    new_agents: dict[str, AgentState] = {}
    emitted: list[Message] = []
    seen_ids = {m.id for m in world.undelivered}

    for aid in sorted(world.agents):
        inbox = route_inbox(world, aid)
        feed = apply_mechanics(mechanics, aid, inbox)
        own = [m for m in world.undelivered if m.sender == aid]
        state = update_agent(world.agents[aid], own, feed)
        try:
            acts = behaviors[aid].act(state, feed)
        except TwonError as exc:
            raise StepError(
                f"behavior for agent {aid!r} failed on tick {new_tick}: {exc}",
                agent_id=aid,
                tick=new_tick,
            ) from exc
        for m in acts:
            if m.sender != aid:
                raise StepError(
                    f"agent {aid!r} emitted message {m.id!r} signed by {m.sender!r}",
                    agent_id=aid,
                    tick=new_tick,
                )
            if m.tick != new_tick:
                raise StepError(
                    f"agent {aid!r} emitted message {m.id!r} with tick {m.tick}, "
                    f"expected {new_tick}",
                    agent_id=aid,
                    tick=new_tick,
                )
            _check_routable(world.agents, m)
            if m.id in seen_ids:
                raise StepError(
                    f"duplicate message id {m.id!r} emitted by agent {aid!r}",
                    agent_id=aid,
                    tick=new_tick,
                )
            seen_ids.add(m.id)
            emitted.append(m)
        new_agents[aid] = state

    return World(
        tick=new_tick,
        agents=new_agents,
        undelivered=tuple(emitted),
        rng_seed=world.rng_seed,
    )


@dataclass(frozen=True)
class Transcript:
    """All messages a run produced, ordered by tick then production order."""

    messages: tuple[Message, ...] = ()

    def dumps_jsonl(self) -> str:
        lines = [
            json.dumps(m.to_dict(), ensure_ascii=False, sort_keys=False)
            for m in self.messages
        ]
        return "".join(line + "\n" for line in lines)

    def dump_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps_jsonl(), encoding="utf-8")

    @classmethod
    def loads_jsonl(cls, text: str) -> Transcript:
        messages = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"transcript line {lineno}: invalid JSON: {exc}") from None
            messages.append(Message.from_dict(raw))
        return cls(messages=tuple(messages))

    @classmethod
    def load_jsonl(cls, path: str | Path) -> Transcript:
        return cls.loads_jsonl(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SimulationResult:
    transcript: Transcript
    final_world: World


def run_simulation(
    world: World,
    mechanics: MechanicsConfig,
    behaviors: Mapping[str, BehaviorProvider],
    n_ticks: int,
) -> SimulationResult:
    """Run n_ticks steps and collect everything the agents produced.

    Seed messages already present in the initial world are inputs, not
    output, so they are not part of the transcript.
    """
    if n_ticks < 1:
        raise InputError(f"n_ticks must be >= 1, got {n_ticks}")
    produced: list[Message] = []
    current = world
    for _ in range(n_ticks):
        current = step(current, mechanics, behaviors)
        produced.extend(current.undelivered)
    return SimulationResult(transcript=Transcript(messages=tuple(produced)), final_world=current)
