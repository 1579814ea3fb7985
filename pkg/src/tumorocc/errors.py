"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for data problems, 4 for numeric failures.
"""


class TumorOccError(Exception):
    exit_code = 3


class ConfigError(TumorOccError, ValueError):
    exit_code = 2


class DataError(TumorOccError, ValueError):
    exit_code = 3


class NumericError(TumorOccError, ArithmeticError):
    exit_code = 4


# geometry
class InvalidMesh(DataError):
    pass


class NonClosedMesh(DataError):
    pass


class EmptySet(DataError):
    pass


class AllComponentsRemoved(DataError):
    pass


class InvalidGeometry(DataError):
    pass


# deform
class EmptyVisibleSet(DataError):
    pass


class ExcessiveCompression(ConfigError):
    pass


# sensor
class NoValidDepth(DataError):
    pass


# ctsim
class EmptyMask(DataError):
    pass


# dataset
class InsufficientCandidates(DataError):
    pass


# occnet
class EmptyCloud(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class Divergence(NumericError):
    pass


class EmptyReconstruction(DataError):
    pass


# evalrec
class LengthMismatch(DataError):
    pass


class MissingStructure(DataError):
    pass


# resect
class TooFewTumorPoints(DataError):
    pass


class DegenerateProjection(DataError):
    pass


class NoIntersection(DataError):
    pass
