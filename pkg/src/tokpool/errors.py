"""Exception types; the CLI maps them onto exit codes."""


class TokpoolError(Exception):
    """Base class for all package errors."""


class UsageError(TokpoolError):
    """Caller misuse: bad arguments or unsatisfied preconditions (exit code 1)."""


class DataError(TokpoolError):
    """Malformed or out-of-contract data: bad files, NaNs, schema violations (exit code 2)."""
