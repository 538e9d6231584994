"""Exception hierarchy shared across the package."""


class SearchError(Exception):
    """Base class for all roisearch errors."""


class InvalidAssignmentError(SearchError, ValueError):
    """A config assigns a value its decision does not allow."""

    def __init__(self, decision: str, value, reason: str = ""):
        self.decision = decision
        self.value = value
        msg = f"invalid value {value!r} for decision {decision!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class SchemaMismatchError(SearchError, ValueError):
    """A config's keys do not match the space's decisions."""

    def __init__(self, missing=(), extra=()):
        self.missing = tuple(missing)
        self.extra = tuple(extra)
        super().__init__(f"schema mismatch: missing={list(self.missing)} extra={list(self.extra)}")


class MalformedEncodingError(SearchError, ValueError):
    pass


class NotEnumerableError(SearchError, ValueError):
    pass


class InsufficientDataError(SearchError, ValueError):
    pass


class SingularFitError(SearchError, ValueError):
    pass


class DegenerateBatchError(SearchError, ValueError):
    pass


class ShapeError(SearchError, ValueError):
    pass


class DivergenceError(SearchError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, member: int | None = None):
        self.epoch = epoch
        self.member = member
        where = f"member {member}, " if member is not None else ""
        super().__init__(f"non-finite loss ({where}epoch {epoch})")


class PoisonedBatchError(SearchError, ArithmeticError):
    pass


class SchemaDriftError(SearchError, ValueError):
    pass


class DuplicateRecordError(SearchError, ValueError):
    pass


class SingularKernelError(SearchError, ArithmeticError):
    pass


class IntegrityError(SearchError, ValueError):
    """A stored value disagrees with the value recomputed from its inputs."""


class CorruptLogError(SearchError, ValueError):
    pass
