"""Exception types shared across the package."""


class LogicCbmError(Exception):
    """Base class for all errors raised by this package."""


# --- gate kernel ---

class InputOutOfRange(LogicCbmError):
    pass


class UnknownGateId(LogicCbmError):
    pass


class DuplicateGateId(LogicCbmError):
    pass


class EmptySubset(LogicCbmError):
    pass


# --- pairing / logic layers ---

class DegenerateConceptSpace(LogicCbmError):
    pass


class InvalidSize(LogicCbmError):
    pass


class EmptyActivations(LogicCbmError):
    pass


class ShapeMismatch(LogicCbmError):
    pass


class StaleCache(LogicCbmError):
    pass


# --- checkpoints ---

class CheckpointIOError(LogicCbmError):
    pass


class SchemaVersionMismatch(LogicCbmError):
    pass


class CorruptChecksum(LogicCbmError):
    pass


# --- training ---

class InvalidLabel(LogicCbmError):
    pass


class NonFiniteLoss(LogicCbmError):
    pass


class EmptyDataset(LogicCbmError):
    pass


# --- formulas / datasets ---

class IndexOutOfRange(LogicCbmError):
    pass


class TooManyConcepts(LogicCbmError):
    pass


class UnsupportedArity(LogicCbmError):
    pass


class UnsatisfiableClass(LogicCbmError):
    pass


class OverlappingClasses(LogicCbmError):
    pass


class ParseError(LogicCbmError):
    pass


class NonBinaryConcept(LogicCbmError):
    pass


class UnknownLabel(LogicCbmError):
    pass


# --- analysis ---

class MissingConceptGroundTruth(LogicCbmError):
    pass


class SameClass(LogicCbmError):
    pass


# --- cli ---

class ConfigError(LogicCbmError):
    pass
