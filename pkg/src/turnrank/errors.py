"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: InputError (and subclasses) exit 1,
ContractViolation exits 2.
"""


class InputError(Exception):
    """Malformed or inconsistent external input: files, runs, CLI arguments."""


class ContractViolation(Exception):
    """A component broke one of its interface contracts (e.g. a scorer
    returned an out-of-range value or a misaligned batch)."""


class RemoteScoringError(InputError):
    """The remote scoring endpoint could not be reached after retries."""

    def __init__(self, message: str, chunk_index: int):
        super().__init__(message)
        self.chunk_index = chunk_index
