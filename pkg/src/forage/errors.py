"""Exception hierarchy for the harness."""

from __future__ import annotations


class ForageError(Exception):
    """Base class for every harness error."""


class ConfigError(ForageError):
    """Bad task file or supply parameters."""


class MalformedTask(ConfigError):
    pass


class IncompleteTask(ConfigError):
    pass


class InvalidSupplies(ConfigError):
    pass


class DuplicateRun(ForageError):
    pass


class SeedUnavailable(ForageError):
    pass


class IsolationDenied(ForageError):
    """A path request fell outside the caller's subtrees. Never fatal to a run."""

    def __init__(self, role: str, requested: str, reason: str = "outside allowed subtrees"):
        super().__init__(f"{role} may not access {requested!r}: {reason}")
        self.role = role
        self.requested = requested
        self.reason = reason


class GuardViolation(ForageError):
    """An access that should have been denied was allowed. Indicates a guard bug."""


class IsolationLeak(ForageError):
    """Content private to one role reached the other role."""


class MalformedEntry(ForageError):
    def __init__(self, message: str, source: str | None = None):
        super().__init__(f"{source}: {message}" if source else message)
        self.source = source


class StoreIO(ForageError):
    pass


class BackendDown(ForageError):
    pass


class BackendError(ForageError):
    """Transport-level failure talking to an agent backend."""


class SessionDead(ForageError):
    pass


class NothingToExecute(ForageError):
    pass


class MetricsUnparseable(ForageError):
    pass


class RunAborted(ForageError):
    def __init__(self, message: str, run_root=None):
        super().__init__(message)
        self.run_root = run_root


class RecorderOrderViolation(ForageError):
    pass


class NoData(ForageError):
    pass
