"""
Exception hierarchy shared by the CatMiner library and the command line.

Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations

from typing import Optional


class CatMinerError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 2


class UsageError(CatMinerError):
    """Bad arguments or configuration values."""

    exit_code = 1


class DataError(CatMinerError):
    """Input data violates a precondition (empty column, tiny class, ...)."""

    exit_code = 2


class CorpusError(DataError):
    """Corpus file cannot be read or does not match the canonical schema."""


class SchemaError(DataError):
    """A sample, model or assessment file does not match its schema."""


class InfeasibleNuError(DataError):
    """nu is larger than the class-balance bound 2*min(l+, l-)/l."""


class ConvergenceError(CatMinerError):
    """The nu-SVM solver hit its iteration cap before reaching KKT tolerance."""

    exit_code = 3

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual
