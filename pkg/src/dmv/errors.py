"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`DmvError` so callers
can catch pipeline failures with a single except clause while still being
able to discriminate on the specific condition.
"""

from __future__ import annotations


class DmvError(Exception):
    """Base class for all library errors."""


# --- ingest ---------------------------------------------------------------

class InvalidSchema(DmvError):
    """Schema violates a structural invariant (roles, duplicate names...)."""


class MissingColumn(DmvError):
    def __init__(self, name: str):
        super().__init__(f"required column {name!r} not found in header")
        self.name = name


class UnexpectedColumn(DmvError):
    def __init__(self, name: str):
        super().__init__(f"column {name!r} in header is not part of the schema")
        self.name = name


class RowArityMismatch(DmvError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: expected {expected} cells, got {got}")
        self.line = line


class InvalidTarget(DmvError):
    def __init__(self, line: int, cell: str):
        super().__init__(f"line {line}: target cell {cell!r} is not a finite number")
        self.line = line


class IoFailure(DmvError):
    """Filesystem error while reading or writing an artifact."""


class UnparseableGeolocation(DmvError):
    def __init__(self, cell: str):
        super().__init__(f"cannot parse geolocation cell {cell!r}")
        self.cell = cell


class OutOfRange(DmvError):
    def __init__(self, what: str, value: float):
        super().__init__(f"{what} {value} outside valid range")
        self.what = what
        self.value = value


# --- preprocess -----------------------------------------------------------

class AllMissing(DmvError):
    def __init__(self, column: str = ""):
        super().__init__(f"column {column!r} has no observed values to impute from")
        self.column = column


class ZeroVariance(DmvError):
    """Statistic undefined because an input vector is constant."""


class RowCountMismatch(DmvError):
    pass


# --- embed ----------------------------------------------------------------

class AuthMissing(DmvError):
    def __init__(self, env_var: str):
        super().__init__(f"API key environment variable {env_var!r} is not set")
        self.env_var = env_var


class ProviderError(DmvError):
    def __init__(self, status: int, body: str):
        super().__init__(f"embedding provider failed with status {status}: {body[:200]}")
        self.status = status
        self.body = body


# --- forest / model files ---------------------------------------------------

class EmptyMatrix(DmvError):
    pass


class NonFiniteInput(DmvError):
    pass


class DimensionMismatch(DmvError):
    pass


class BadMagic(DmvError):
    """File is not a recognized artifact, or is truncated/corrupt."""


class VersionUnsupported(DmvError):
    def __init__(self, version: int):
        super().__init__(f"artifact format version {version} is not supported")
        self.version = version


# --- eval / ablation --------------------------------------------------------

class LengthMismatch(DmvError):
    pass


class Empty(DmvError):
    pass


class BadK(DmvError):
    pass


class DivisionByZero(DmvError):
    pass


# --- cli --------------------------------------------------------------------

class ConfigError(DmvError):
    """Run configuration is invalid (exit code 1 territory)."""


class MissingArtifact(DmvError):
    def __init__(self, path: str, produced_by: str):
        super().__init__(
            f"required artifact {path!r} is missing; run `dmv {produced_by}` first"
        )
        self.path = path
        self.produced_by = produced_by
