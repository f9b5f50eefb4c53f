"""
Error hierarchy for borrowlab.

Every failure carries a stable machine-readable ``code``, a human message and
a ``locus`` naming where it happened (file/row/column, pool index, k, or
replication). The CLI turns any of these into a JSON error record.
"""

from typing import Any, Dict, Optional


class BorrowLabError(Exception):
    """Base class for all errors raised by the library."""

    code = "borrowlab-error"

    def __init__(self, message: str, locus: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.locus = locus

    def to_record(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "locus": self.locus}

    def __str__(self) -> str:
        if self.locus:
            return f"{self.message} (at {self.locus})"
        return self.message


class DataValidationError(BorrowLabError):
    code = "data-invalid"


class SchemaMismatchError(DataValidationError):
    code = "schema-mismatch"


class RankDeficiencyError(BorrowLabError):
    code = "rank-deficient"


class NumericalError(BorrowLabError):
    code = "numerical"


class FitError(BorrowLabError):
    code = "fit-degenerate"


class SelectionError(BorrowLabError):
    code = "selection-failed"


class OracleError(BorrowLabError):
    code = "oracle-imprecise"


class ConfigError(BorrowLabError):
    code = "config-invalid"


class BenchmarkError(BorrowLabError):
    code = "benchmark-aborted"


class OutputError(BorrowLabError):
    code = "io-failed"
