"""Exception hierarchy shared by the library and the command line front end.

Library code raises these; only ``src.main`` turns them into exit codes.
"""


class BenchError(Exception):
    """Base class for every error the benchmark tooling raises on purpose."""

    exit_code = 1


class ConfigError(BenchError, ValueError):
    """A configuration value is missing, malformed or out of range."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InvalidGeometryError(BenchError, ValueError):
    exit_code = 2


class InvalidCoefficientError(BenchError, ValueError):
    exit_code = 2


class InvalidParameterError(BenchError, ValueError):
    exit_code = 2


class DomainError(BenchError, ValueError):
    """A parameter point lies outside the parameter box."""

    exit_code = 2


class NumericError(BenchError, RuntimeError):
    exit_code = 3


class FactorizationError(NumericError):
    """A KKT matrix could not be factorized.

    Args:
        message: Human readable reason.
        diagnostics: Per-block norms and sizes gathered before the failure.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{key}={value}" for key, value in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class StabilizationSingularityError(NumericError):
    pass


class BasisTruncationError(NumericError):
    def __init__(self, requested: int, achievable: int):
        self.requested = requested
        self.achievable = achievable
        super().__init__(f"Requested N={requested} but only {achievable} eigenpairs are above the threshold")


class SnapshotError(NumericError):
    def __init__(self, mu, cause: Exception):
        self.mu = tuple(float(value) for value in mu)
        super().__init__(f"High-fidelity solve failed at mu={self.mu}: {cause}")


class ModelStorageError(BenchError, OSError):
    exit_code = 4
