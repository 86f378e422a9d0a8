"""Exception hierarchy shared by every sengen module."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class SenGenError(Exception):
    """Base class for all sengen errors."""

    exit_code = EXIT_DATA


class UsageError(SenGenError):
    """Malformed command line."""

    exit_code = EXIT_USAGE


class DataError(SenGenError, ValueError):
    """Input data, configuration or arguments are invalid."""

    exit_code = EXIT_DATA


class ConfigError(DataError):
    """Invalid key=value configuration."""

    pass


class CorpusError(DataError):
    """Corpus, vocabulary or raw text problems."""

    pass


class CheckpointError(DataError):
    """Unreadable or inconsistent checkpoint container."""

    pass


class ShapeError(DataError):
    """Tensor shapes do not conform."""

    pass


class TopicError(DataError):
    """Topic id outside 0..K-1."""

    pass


class SupportError(DataError):
    """A target word is missing from the sampled vocabulary support."""

    pass


class NumericalError(SenGenError, ArithmeticError):
    """Non-finite values or a broken computation graph."""

    exit_code = EXIT_NUMERICAL


class GraphError(NumericalError):
    """Misuse of the reverse-mode tape."""

    pass


class DivergenceError(NumericalError):
    """Training objective became non-finite."""

    pass
