"""Exception types shared across the package."""


class CallSurfError(Exception):
    """Base class for all package errors."""


class ParseError(CallSurfError):
    """A quote or curve file could not be parsed (message names the row)."""


class ValidationError(CallSurfError):
    """Input data violates a documented invariant (crossed quotes, bad spot, ...)."""


class GridError(CallSurfError):
    """Fine recovery grid could not be constructed from the request."""


class RankError(CallSurfError):
    """Too few distinct nodes to support the requested polynomial degrees."""


class ConsistencyError(CallSurfError):
    """Two objects that must refer to the same grid/basis do not match."""


class NoSolutionError(CallSurfError):
    """Implied-volatility inversion has no solution; names the violated bound."""


class SolverStateError(CallSurfError):
    """A solution object was used in a state that does not permit it."""


class InfeasibleError(CallSurfError):
    """The recovery LP is infeasible.

    Carries per-constraint-family worst violations measured at the least
    infeasible point the solver found, so callers can see which no-arbitrage
    family (or the fit band) is in conflict.
    """

    def __init__(self, message, family_violations=None, worst_family=None):
        super().__init__(message)
        self.family_violations = dict(family_violations or {})
        self.worst_family = worst_family
