"""Exception taxonomy shared across the package.

Library code raises these and never calls sys.exit; the CLI maps them to
exit codes in one place (twon.cli).
"""

from __future__ import annotations


class TwonError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(TwonError):
    """Invalid or incomplete configuration (files, tables, or flags)."""


class InputError(TwonError):
    """Malformed data or arguments outside an operation's domain."""


class TimeConsistencyError(InputError):
    """A message's tick does not match the state it is attached to."""


class UnknownAgentError(InputError):
    """An agent id was referenced that the world does not contain."""


class StepError(TwonError):
    """A simulation step failed; the world it was called on is unchanged."""

    def __init__(self, message: str, *, agent_id: str, tick: int) -> None:
        super().__init__(message)
        self.agent_id = agent_id
        self.tick = tick


class TransportError(TwonError):
    """A remote call failed after retries (network, timeout, bad status)."""

    def __init__(self, message: str, *, prompt_id: str | None = None) -> None:
        super().__init__(message)
        self.prompt_id = prompt_id


class GenerationError(TwonError):
    """A generation backend returned unusable text (empty or off-constraint)."""

    def __init__(self, message: str, *, prompt_id: str | None = None) -> None:
        super().__init__(message)
        self.prompt_id = prompt_id


class TrainingError(TwonError):
    """Optimization diverged; carries the epoch where it happened."""

    def __init__(self, message: str, *, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch


class NumericError(TwonError):
    """A computation produced a non-finite value from finite inputs."""
