"""Exception hierarchy shared across the package."""


class NDCPError(Exception):
    """Base class for every error raised by ndcp."""


# dataset
class EmptyFile(NDCPError, ValueError):
    pass


class MissingColumn(NDCPError, KeyError):
    pass


class NonBinaryLabel(NDCPError, ValueError):
    pass


class MalformedRow(NDCPError, ValueError):
    def __init__(self, row_index: int, reason: str):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index


class DegenerateSplit(NDCPError, ValueError):
    pass


class InfeasiblePartition(NDCPError, ValueError):
    pass


# forest / conformal
class EmptyDataset(NDCPError, ValueError):
    pass


class DimensionMismatch(NDCPError, ValueError):
    pass


class EmptyCategory(NDCPError, ValueError):
    pass


# aggregate / metrics
class EmptyList(NDCPError, ValueError):
    pass


class LengthMismatch(NDCPError, ValueError):
    pass


class EmptyInput(NDCPError, ValueError):
    pass


class TooFewPairs(NDCPError, ValueError):
    pass


class UnpairedResults(NDCPError, ValueError):
    pass


# federation
class InvalidMessage(NDCPError, ValueError):
    pass


class ProtocolError(NDCPError, ValueError):
    pass


class MalformedJson(ProtocolError):
    pass


class BindFailure(NDCPError, OSError):
    pass


class SourceTimeout(NDCPError, TimeoutError):
    def __init__(self, silent: list[str]):
        super().__init__(f"no response from source(s): {', '.join(silent)}")
        self.silent = silent


class SourceError(NDCPError, RuntimeError):
    def __init__(self, source: str, message: str):
        super().__init__(f"source {source}: {message}")
        self.source = source
        self.message = message


class ExperimentError(NDCPError, RuntimeError):
    pass
