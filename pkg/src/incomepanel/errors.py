"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code raises them
rather than generic ``ValueError`` wherever the failure is about the input data.
"""


class DataError(ValueError):
    """Input data or file content violates a documented format or invariant."""


class CodebookError(DataError):
    pass


class LayoutError(ValueError):
    """A feature row or matrix does not match the column layout a model was fitted on."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap or produced a non-finite value."""
