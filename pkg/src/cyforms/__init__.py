"""Numerical toolkit for symplectic-Hodge forms and Monge-Ampere type equations on flat tori."""

__version__ = "0.1.0"

from .errors import CyFormsError
from .exterior_algebra import AlgebraicForm, SymplecticFrame, symplectic_star, wedge
from .kahler import KahlerTorus, normalize_density, standard_background
from .monge_ampere import MASolveConfig, solve_monge_ampere
from .moser import MoserPath, integrate_flow, pullback_form
from .pipeline import NewEqCertificate, NewEqSolveConfig, solve_new_equation, verify_certificate
from .torus_calculus import FormField, TorusGrid, dd_symp, exterior_derivative, solve_ddsymp_potential

__all__ = [
    "AlgebraicForm",
    "CyFormsError",
    "FormField",
    "KahlerTorus",
    "MASolveConfig",
    "MoserPath",
    "NewEqCertificate",
    "NewEqSolveConfig",
    "SymplecticFrame",
    "TorusGrid",
    "dd_symp",
    "exterior_derivative",
    "integrate_flow",
    "normalize_density",
    "pullback_form",
    "solve_ddsymp_potential",
    "solve_monge_ampere",
    "solve_new_equation",
    "standard_background",
    "symplectic_star",
    "verify_certificate",
    "wedge",
]
