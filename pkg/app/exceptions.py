"""Error hierarchy for the edge-hardening planner.

Every error carries the process exit code the CLI reports for it, so the
command layer only needs one ``except EdgeHardenError`` clause.
"""

from typing import ClassVar


class EdgeHardenError(Exception):
    """Base class for all planner errors."""

    exit_code: ClassVar[int] = 2


class UsageError(EdgeHardenError):
    """Bad command-line usage or a violated call precondition."""

    exit_code: ClassVar[int] = 1


class InstanceValidationError(UsageError):
    """Instance data breaks one or more model invariants."""

    def __init__(self, violations: list[str]) -> None:
        """Store the violations and build a readable message.

        Args:
            violations: Human-readable violation strings.

        """
        self.violations = violations
        super().__init__("invalid instance: " + "; ".join(violations))


class SynthesisError(UsageError):
    """Instance synthesis could not satisfy the eligibility coverage rule."""


class SolverError(EdgeHardenError):
    """An LP or MILP solve failed to produce a trustworthy answer."""

    exit_code: ClassVar[int] = 2


class ContractError(SolverError):
    """An operation was called on data that violates its contract."""


class EnumerationCapError(SolverError):
    """The number of attack plans exceeds the configured enumeration cap."""


class BigMInsufficientError(SolverError):
    """A big-M row stayed binding after every allowed escalation."""

    def __init__(self, row: str, escalations: int) -> None:
        """Record the offending row.

        Args:
            row: Name of the binding big-M row.
            escalations: Number of doublings already attempted.

        """
        self.row = row
        self.escalations = escalations
        super().__init__(
            f"big-M insufficient: row {row} still binding after {escalations} escalations"
        )


class VerificationError(SolverError):
    """A claimed bilevel optimum did not survive inner-LP re-solve."""


class InfeasibilityError(EdgeHardenError):
    """The defender cannot stay feasible under some admissible attack."""

    exit_code: ClassVar[int] = 3
