"""Exception types shared across the package."""


class TreematchError(Exception):
    """Base class for all package-specific errors."""


class ParseError(TreematchError):
    """Malformed input file or row."""


class DuplicateKeyError(TreematchError):
    """Duplicate identifier where uniqueness is required."""


class SchemaError(TreematchError):
    """Input violates the declared covariate/outcome schema."""


class CapacityError(TreematchError):
    """Problem size exceeds an exhaustive-enumeration bound."""


class DegenerateInputError(TreematchError):
    """Input is structurally unusable (e.g. single-class exposure vector)."""


class InfeasibleMatchError(TreematchError):
    """No full match exists under the requested structure restriction."""


class InfeasibleAllocationError(TreematchError):
    """No significance-level allocation satisfies the constraint system."""


class OrderedTestingError(TreematchError):
    """A p-value callback failed mid-procedure.

    Carries the decisions accumulated before the failure in ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
