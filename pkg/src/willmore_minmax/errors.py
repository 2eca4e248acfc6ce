"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line front end can map
failures onto stable process exit statuses.
"""

from __future__ import annotations


class WillmoreError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(WillmoreError, ValueError):
    """Invalid argument value (out-of-range level, sigma, ball parameter...)."""

    exit_code = 5


class GeometryError(WillmoreError):
    """Degenerate or otherwise unusable geometry."""

    exit_code = 5

    def __init__(self, message: str, face: int | None = None, frame: int | None = None):
        super().__init__(message)
        self.face = face
        self.frame = frame


class GaugeError(WillmoreError):
    """Conformal gauge is inconsistent, degenerate or not balanced."""

    exit_code = 5


class ConvergenceError(WillmoreError):
    """Iterative solver did not converge."""

    exit_code = 4

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class MeshIOError(WillmoreError, OSError):
    """Mesh or path files could not be read or parsed."""

    exit_code = 2


class CheckFailed(WillmoreError):
    """A requested invariant check did not hold."""

    exit_code = 3
