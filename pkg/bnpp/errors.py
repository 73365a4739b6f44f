from __future__ import annotations


class BnppError(Exception):
    """Base class for every error the toolkit raises on bad input or state."""

    exit_code = 1


class InputFormatError(BnppError):
    exit_code = 2


class DimensionError(BnppError):
    exit_code = 3


class SizeMismatchError(DimensionError):
    pass


class ArityError(DimensionError):
    pass


class CycleError(BnppError):
    def __init__(self, edge: tuple[int, int]):
        self.edge = edge
        super().__init__(f"adding edge {edge[0]}->{edge[1]} creates a directed cycle")


class MissingEdgeError(BnppError):
    def __init__(self, edge: tuple[int, int]):
        self.edge = edge
        super().__init__(f"edge {edge[0]}->{edge[1]} is not in the graph")


class TooLargeError(BnppError):
    pass


class TooManyVariablesError(BnppError):
    pass


class InvalidProbabilityError(InputFormatError):
    pass


class InvalidConfigurationError(BnppError):
    pass


class SupportMismatchError(BnppError):
    pass


class ZeroSupportError(BnppError):
    exit_code = 4


class FitError(BnppError):
    exit_code = 4

    def __init__(self, part: int, variables: tuple[int, ...], cause: Exception):
        self.part = part
        self.variables = variables
        self.cause = cause
        super().__init__(f"part {part} (variables {list(variables)}): {cause}")


class CoherenceTargetError(BnppError):
    exit_code = 5


class ConvergenceError(BnppError):
    exit_code = 4
