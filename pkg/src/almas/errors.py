"""Exception hierarchy shared by every agent and adapter."""

from __future__ import annotations


class AlmasError(Exception):
    """Base class for all framework errors."""


class PreconditionError(AlmasError, ValueError):
    """An operation was called with inputs that violate its contract."""


class ConfigError(AlmasError):
    """The run configuration is missing or invalid."""


class ProviderError(AlmasError):
    """A model provider could not produce a completion."""


class UnknownModelError(ProviderError):
    pass


class UnmatchedScriptError(ProviderError):
    """The scripted provider has no entry for a request."""


class TransportError(ProviderError):
    """A network call failed after the retry budget was spent."""


class SchemaError(AlmasError):
    """A model reply could not be parsed into the requested structure."""


class GenerationError(SchemaError):
    """The code agent's reply did not follow the multi-file grammar."""


class RoutingError(AlmasError):
    """No model in the inventory satisfies the routing constraints."""


class NotFoundError(AlmasError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "not found"


class StaleIndexError(AlmasError):
    """The summary index refers to files that no longer match the disk."""


class EmptyLocalizationError(AlmasError):
    """The retriever selected no code unit that exists in the index."""


class SecurityError(AlmasError):
    """A changeset tried to write outside the repository root."""


class ValidationEnvironmentError(AlmasError):
    """A validation command could not be started at all."""


class VcsError(AlmasError):
    pass


class NothingToCommitError(VcsError):
    pass


class DuplicateError(AlmasError):
    pass


class IllegalTransitionError(AlmasError):
    pass


class AlmasWarning(UserWarning):
    """Recoverable anomaly recorded during a run (snapped estimate, dropped id, ...)."""
