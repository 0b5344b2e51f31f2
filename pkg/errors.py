"""
Error types for the ADR signal pipeline.

Two branches hang off AdrSignalError so the command line can map them to
exit codes: UsageError (1) for bad invocations, DataError (2) for inputs
that do not parse or cannot support a detection run.
"""

from typing import Optional


class AdrSignalError(Exception):
    """Base class for every error raised on purpose by this package"""
    exit_code = 2


class UsageError(AdrSignalError):
    """Invalid flags, configuration values or synthetic-cohort specs"""
    exit_code = 1


class DataError(AdrSignalError):
    """Input data that cannot be parsed or analysed"""
    exit_code = 2


class SpecInvalid(UsageError):
    pass


class InputFileError(DataError):
    """An input path that does not exist or cannot be read"""

    def __init__(self, path, reason: str = "file not found"):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class MalformedCode(DataError, ValueError):
    """A string that is not a valid 7-character Readcode"""

    def __init__(self, raw: str, reason: str):
        self.raw = raw
        self.reason = reason
        super().__init__(f"malformed readcode {raw!r}: {reason}")


class _LocatedError(DataError):
    """Error tied to a line of an input file"""

    def __init__(self, reason: str, source: Optional[str] = None, line: Optional[int] = None):
        self.reason = reason
        self.source = source or "<stream>"
        self.line = line
        location = self.source if line is None else f"{self.source}:{line}"
        super().__init__(f"{location}: {reason}")


class MalformedRow(_LocatedError):
    pass


class UndecodableInput(MalformedRow):
    """A file whose bytes are not UTF-8; line is the first line that fails to decode"""

    def __init__(self, path, line: Optional[int] = None):
        super().__init__("not valid UTF-8 text", str(path), line)

    @classmethod
    def locate(cls, path) -> "UndecodableInput":
        with open(path, "rb") as f:
            for number, raw in enumerate(f, start=1):
                try:
                    raw.decode("utf-8")
                except UnicodeDecodeError:
                    return cls(path, number)
        return cls(path)


class MalformedDictionaryRow(_LocatedError):
    pass


class DuplicateCode(_LocatedError):
    pass


class EmptyCohort(DataError):
    def __init__(self, drug_code: str):
        self.drug_code = drug_code
        super().__init__(f"no prescription matches drug code {drug_code!r}")


class GroupSizeExceedsCohort(DataError):
    def __init__(self, group_size: int, n_patients: int):
        self.group_size = group_size
        self.n_patients = n_patients
        super().__init__(
            f"group size {group_size} exceeds the cohort size {n_patients}"
        )


class InsufficientGroups(DataError):
    def __init__(self, n_groups: int):
        self.n_groups = n_groups
        super().__init__(f"a t-test needs at least 2 groups, got {n_groups}")


class DimensionMismatch(DataError):
    pass
