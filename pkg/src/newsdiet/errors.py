"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class NewsDietError(Exception):
    """Base class. ``stage`` is filled in by the pipeline when re-raising."""

    exit_code = 1

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigError(NewsDietError, ValueError):
    exit_code = 2


class DataError(NewsDietError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 4


class SchemaError(DataError):
    def __init__(self, message: str, *, line: int | None = None, stage: str | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, stage=stage)
        self.line = line


class GateError(NewsDietError, ArithmeticError):
    """A noisy denominator did not clear the SNR gate."""

    exit_code = 3

    def __init__(self, metric: str, snr: float, gate: float, *, stage: str | None = None):
        super().__init__(f"SNR gate failed for {metric}: snr={snr:.6g} < gate={gate:.6g}", stage=stage)
        self.metric = metric
        self.snr = snr
        self.gate = gate
