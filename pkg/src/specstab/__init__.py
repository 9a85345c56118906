"""Spectral stability certificates for one-dimensional diffusion models.

Given a gaussian, gamma or beta model mu and a candidate measure nu, the
package measures how far nu's spectrum and its branch-wise pushforwards
through the eigenfunction f_k are from those of mu.
"""

__version__ = "0.1.0"

from .exceptions import (ContractError, DegenerateCandidateError, DomainError, InputError, ParameterError,
                         SpecstabError, UnsupportedBranchError)
from .models import DiffusionModel, make_model

__all__ = [
    "ContractError", "DegenerateCandidateError", "DiffusionModel", "DomainError", "InputError",
    "ParameterError", "SpecstabError", "UnsupportedBranchError", "make_model", "__version__",
]
