"""Exception types raised by specstab."""


class SpecstabError(Exception):
    """Base class for all library errors."""


class ParameterError(SpecstabError, ValueError):
    """Invalid family or model parameters."""


class DomainError(SpecstabError, ValueError):
    """Argument outside the domain of a function."""


class ContractError(SpecstabError, ValueError):
    """A precondition on an input object does not hold."""


class InputError(SpecstabError, ValueError):
    """Malformed candidate input."""


class UnsupportedBranchError(SpecstabError):
    """Branch whose endpoint behaviour violates the growth assumption."""


class DegenerateCandidateError(SpecstabError):
    """Candidate measure too degenerate for a Galerkin eigensolve."""
