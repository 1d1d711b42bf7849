"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DispoLabError(Exception):
    """Base class for all errors raised by this package."""

    #: machine-readable error kind, used by the CLI error record
    kind = "error"

    def to_record(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ConfigurationError(DispoLabError, ValueError):
    kind = "configuration_error"


class ContractViolation(DispoLabError, ValueError):
    """A caller broke a documented precondition."""

    kind = "contract_violation"


class NumericalError(DispoLabError, ArithmeticError):
    """Non-finite values appeared in logits, gradients or parameters."""

    kind = "numerical_error"

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}

    def to_record(self) -> dict:
        record = super().to_record()
        record["diagnostic"] = self.diagnostic
        return record


class BatchStarvationError(DispoLabError, RuntimeError):
    """Dynamic sampling ran out of attempts before the batch was filled."""

    kind = "batch_starvation"

    def __init__(self, message: str, partial: list, attempts: int, filtered: int):
        super().__init__(message)
        self.partial = partial
        self.attempts = attempts
        self.filtered = filtered

    def to_record(self) -> dict:
        record = super().to_record()
        record.update(kept=len(self.partial), attempts=self.attempts, filtered=self.filtered)
        if getattr(self, "rollout_round", None) is not None:
            record["rollout_round"] = self.rollout_round
        return record
