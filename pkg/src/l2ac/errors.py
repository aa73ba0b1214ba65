"""Exception types raised across the package."""


class L2ACError(Exception):
    """Base class for every error raised by l2ac."""


class ShapeError(L2ACError, ValueError):
    pass


class EmptySequence(L2ACError, ValueError):
    pass


class MissingGradient(L2ACError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"no gradient for parameter {self.name!r}"


class NumericError(L2ACError, ArithmeticError):
    pass


class EmptyDocument(L2ACError, ValueError):
    pass


class UnsupportedEncoder(L2ACError, TypeError):
    pass


class ParseError(L2ACError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class FormatError(ParseError):
    pass


class ZeroVector(L2ACError, ValueError):
    pass


class UnknownClass(L2ACError, KeyError):
    def __init__(self, label):
        super().__init__(label)
        self.label = label

    def __str__(self):
        return f"unknown class {self.label!r}"


class DuplicateClass(L2ACError, ValueError):
    pass


class InsufficientClasses(L2ACError, ValueError):
    pass


class ClassTooSmall(L2ACError, ValueError):
    def __init__(self, label, size):
        super().__init__(f"class {label!r} has {size} member(s); at least 2 are needed")
        self.label = label
        self.size = size


class EmptyNeighbors(L2ACError, ValueError):
    pass


class EmptySeenSet(L2ACError, ValueError):
    pass


class TrainingDiverged(L2ACError, ArithmeticError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
