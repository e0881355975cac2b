"""Exceptions raised when a numerical tolerance is violated.

Messages start with the name of the module that raised them so that the
command-line front end can report where a run went wrong.
"""

from __future__ import annotations


class ToleranceError(RuntimeError):
    """A run was aborted because a numerical safeguard tripped."""

    def __init__(self, module: str, message: str, **diagnostics):
        self.module = module
        self.diagnostics = diagnostics
        extra = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
        super().__init__(f"{module}: {message}" + (f" ({extra})" if extra else ""))


class NormDriftError(ToleranceError):
    pass


class CutoffError(ToleranceError):
    pass


class TraceError(ToleranceError):
    pass


class PositivityError(ToleranceError):
    pass


class JumpProbabilityError(ToleranceError):
    pass


class TimingError(ToleranceError):
    """No protocol duration within the search bound meets the phase tolerance."""
