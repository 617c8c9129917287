"""
Error types shared by every service.

Services raise these; ``main.py`` turns them into a one-line report and
a process exit code.
"""

from typing import Optional


class PromptAlgebraError(Exception):
    """Base error. ``exit_code`` is what the CLI exits with."""

    exit_code: int = 1

    def __init__(self, message: str, *, key: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.key = key

    def one_line(self) -> str:
        text = self.message.replace("\n", " ").replace('"', "'")
        parts = [f"error={type(self).__name__}", f"code={self.exit_code}"]
        if self.key:
            parts.append(f"key={self.key}")
        parts.append(f'message="{text}"')
        return " ".join(parts)


class NumericError(PromptAlgebraError):
    """Non-finite values or a solver that did not converge"""


class InputError(PromptAlgebraError):
    """Empty or otherwise unusable inputs"""


class DimensionError(PromptAlgebraError):
    """Shape or length mismatch"""


class ContractError(PromptAlgebraError):
    """A documented precondition was violated by the caller"""


class ProtocolError(PromptAlgebraError):
    """An evaluation protocol cannot be run on the given data"""


class CompatibilityError(PromptAlgebraError):
    """Prompts or bases that cannot be combined"""


class ConfigError(PromptAlgebraError):
    exit_code = 2


class ValidationError(ConfigError):
    """Manifest or schema content that does not match the data"""


class StorageError(PromptAlgebraError):
    exit_code = 3


class FormatError(StorageError):
    """Malformed binary file; ``offset`` is the byte where parsing failed"""

    def __init__(self, message: str, *, offset: int, path: Optional[str] = None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.offset = offset
        self.path = path
