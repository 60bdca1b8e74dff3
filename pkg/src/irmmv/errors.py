"""Exception types shared across the package."""


class IrmmvError(Exception):
    """Base class for package errors."""


class DimensionError(IrmmvError, ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(IrmmvError, ValueError):
    """A matrix contains NaN or Inf where finite values are required."""


class DegenerateColumnError(IrmmvError, ValueError):
    """A column has zero norm and cannot be normalized."""


class SingularSystemError(IrmmvError, ArithmeticError):
    """A least-squares system without regularization is rank deficient."""


class SparsityError(IrmmvError, ValueError):
    """Requested sparsity level is incompatible with the dimensions."""


class UndefinedCoherenceError(IrmmvError, ValueError):
    """Coherence needs at least two columns."""


class UndefinedSNRError(IrmmvError, ValueError):
    """Noise cannot be scaled against a zero signal."""


class UndefinedMetricError(IrmmvError, ValueError):
    """Relative error is undefined for an all-zero reference."""


class DegenerateSolutionError(IrmmvError, ArithmeticError):
    """Reweighting pruned every row before convergence."""


class ConstructionError(IrmmvError, AssertionError):
    """An internal construction invariant was broken."""


class FormatError(IrmmvError, ValueError):
    """Input file does not follow the expected binary layout."""


class DivergenceError(IrmmvError, FloatingPointError):
    """Iteration produced non-finite values.

    Attributes
    ----------
    iteration : int
        Index of the step that produced the first non-finite entry.
    last_finite : object
        The last iterate whose entries were all finite.
    """

    def __init__(self, message, iteration=-1, last_finite=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_finite = last_finite
