# Error types shared by tools, agents and the CLI
"""
core.errors

Exception hierarchy for vipaint_bench.

Numerical code raises DomainError for bad inputs and NumericalAbort when an
iterative procedure produces NaN/Inf. Agents catch everything at the message
bus boundary and the CLI maps recorded failures to a nonzero exit code.
"""

from __future__ import annotations

from typing import Optional


class VipaintError(Exception):
    """Base class for all errors raised by this project."""


class DomainError(VipaintError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvariantViolation(VipaintError, RuntimeError):
    """A computed quantity broke an invariant that valid inputs guarantee."""


class UnsupportedOperator(VipaintError, TypeError):
    """A method was given a measurement operator kind it cannot handle."""


class GraphError(VipaintError, RuntimeError):
    """Misuse of a gradient tape (foreign nodes, cycles, non-scalar output)."""


class NumericalAbort(VipaintError, FloatingPointError):
    """
    An iterative procedure produced a non-finite value.

    Carries the method name, the step index and the offending term so the
    harness can report exactly where a run diverged.
    """

    def __init__(
        self,
        message: str,
        method: Optional[str] = None,
        step: Optional[int] = None,
        term: Optional[str] = None,
    ) -> None:
        self.method = method
        self.step = step
        self.term = term
        details = []
        if method is not None:
            details.append(f"method={method}")
        if step is not None:
            details.append(f"step={step}")
        if term is not None:
            details.append(f"term={term}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(message + suffix)


class ConfigError(VipaintError, ValueError):
    """Invalid experiment configuration, located by field path and line."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None) -> None:
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
