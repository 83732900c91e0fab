"""Exception types shared across the package.

Every error derives from ``ValueError`` so callers that only care about
"bad input" can catch one type; the CLI maps all of them to exit code 2.
"""


class DptuneError(ValueError):
    """Base class for all validation and domain errors raised here."""


class ParameterError(DptuneError):
    """A distribution or optimizer parameter is outside its domain."""


class DomainError(DptuneError):
    """A function was evaluated outside its domain (e.g. a PGF argument)."""


class UnsupportedGuaranteeError(DptuneError):
    """The base guarantee has no Renyi form usable by the requested bound."""


class InapplicableOrderError(DptuneError):
    """The requested Renyi order violates a bound's precondition."""


class PreconditionError(DptuneError):
    """A closed-form bound's stated assumption does not hold."""


class InfeasibleError(DptuneError):
    """No parameter choice satisfies the requested budget or target."""


class NoSolutionError(DptuneError):
    """A root finder found no solution inside its search box."""


class DegenerateSetError(DptuneError):
    """Conditioning on a set of zero probability."""


class ValidationError(DptuneError):
    """Malformed user input (probability vectors, configs, handles)."""
