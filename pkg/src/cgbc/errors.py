"""Shared exception types.

Exit-code mapping for the CLI lives in cli.py; library code raises these
and never calls sys.exit.
"""


class CgbcError(Exception):
    """Base class for all package errors."""


class ContainerError(CgbcError):
    """Malformed, inconsistent, or unreadable embedding container."""


class ConceptParseError(CgbcError):
    """LLM reply did not contain a readable concept block.

    Carries the raw reply so callers can log or retry.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class TransportError(CgbcError):
    """LLM endpoint unreachable or persistently failing."""


class ReplayMissError(CgbcError):
    """Replay fixture has no (remaining) entry for a request digest."""

    def __init__(self, digest: str):
        super().__init__(f"no recorded response for request digest {digest}")
        self.digest = digest


class SimulationCheckError(CgbcError):
    """A Monte-Carlo check exceeded its stated bound."""
