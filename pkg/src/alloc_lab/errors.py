"""Exception types raised across the package."""


class AllocLabError(Exception):
    """Base class for all package errors."""


class InvalidConfig(AllocLabError):
    def __init__(self, field, constraint):
        self.field = field
        self.constraint = constraint
        super().__init__(f"invalid {field}: requires {constraint}")


class InvalidAllocation(AllocLabError):
    pass


class InfeasibleAllocation(AllocLabError):
    pass


class InvalidInstance(AllocLabError):
    pass


class NoSolution(AllocLabError):
    """No student in the realization set reproduces the labels."""


class Singular(NoSolution):
    def __init__(self, rank, size=None, detail=None):
        self.rank = rank
        self.size = size
        if detail is not None:
            msg = f"ill-conditioned system of size {size}: {detail}"
        else:
            msg = f"singular system (numerical rank {rank}"
            msg += f" < {size})" if size is not None else ")"
        super().__init__(msg)


class NotDiagonalizable(AllocLabError):
    pass


class ZeroProjection(AllocLabError):
    pass


class EnumerationTooLarge(AllocLabError):
    pass


class WrongConfig(AllocLabError):
    pass


class MissingColumn(AllocLabError):
    pass


class EmptyTable(AllocLabError):
    pass
