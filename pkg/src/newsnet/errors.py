"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class to a stable process exit code so that scripted
callers can distinguish configuration mistakes from bad data and from
numerical failures.
"""


class NewsnetError(Exception):
    """Base class for all newsnet errors."""

    exit_code = 1


class ConfigError(NewsnetError):
    """Invalid configuration, option value or option combination."""

    exit_code = 2


class DataError(NewsnetError):
    """Malformed or inconsistent input data (corpus, embeddings, labels)."""

    exit_code = 3


class NumericalError(NewsnetError):
    """Numerical failure during optimization or linear algebra."""

    exit_code = 4


class CorpusWarning(UserWarning):
    """Non-fatal oddity found while reading a corpus file."""
