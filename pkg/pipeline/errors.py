# pipeline/errors.py

"""
Exception hierarchy shared by the library and the command line.
Every exception carries the process exit code the CLI reports for it:
0 ok, 1 domain error, 2 usage error, 3 I/O error.
"""


class VentriqError(Exception):
    """Base class for all errors raised on purpose by this project."""
    exit_code = 1


# --- Domain errors (exit 1) ---

class DomainError(VentriqError, ValueError):
    """Invalid values or degenerate data."""
    exit_code = 1


class DimensionMismatchError(DomainError):
    pass


class EmptyMaskError(DomainError):
    pass


class UnderdeterminedFitError(DomainError):
    pass


class DegenerateCycleError(DomainError):
    pass


class GPFitError(DomainError):
    pass


class PhantomBoundsError(DomainError):
    pass


# --- Usage errors (exit 2) ---

class UsageError(VentriqError, ValueError):
    """Malformed user input: bad CSV tables, unknown config keys, invalid flag values."""
    exit_code = 2


# --- I/O errors (exit 3) ---

class StackIOError(VentriqError, OSError):
    """Base for dataset read/write failures. `code` identifies the failure kind."""
    exit_code = 3
    code = "io_error"


class MissingFileError(StackIOError):
    code = "missing_file"


class SizeMismatchError(StackIOError):
    code = "size_mismatch"


class NonBinaryMaskError(StackIOError):
    code = "non_binary_mask"


class SchemaVersionError(StackIOError):
    code = "unknown_schema_version"


class InvalidManifestError(StackIOError):
    code = "invalid_manifest"


STACKIO_ERRORS = {
    cls.code: cls
    for cls in (MissingFileError, SizeMismatchError, NonBinaryMaskError,
                SchemaVersionError, InvalidManifestError)
}
