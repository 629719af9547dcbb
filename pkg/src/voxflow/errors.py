"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 for validation/usage problems, 2 for I/O, 3 for numeric failures.
"""


class VoxflowError(Exception):
    exit_code = 1


class InvalidConfig(VoxflowError):
    pass


class InvalidSpec(VoxflowError):
    pass


class UsageError(VoxflowError):
    pass


class MissingGroundTruth(VoxflowError):
    pass


class MissingLabels(VoxflowError):
    pass


class LengthMismatch(VoxflowError):
    pass


class IoError(VoxflowError):
    exit_code = 2


class ParseError(IoError):
    pass


class NumericError(VoxflowError):
    exit_code = 3


class NonFiniteGradient(NumericError):
    pass


class OnCellBoundary(NumericError):
    pass
