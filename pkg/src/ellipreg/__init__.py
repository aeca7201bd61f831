"""Numerical regularity diagnostics for divergence-form elliptic operators.

The toolkit decides, from a coefficient field A(x) normalized to A(0) = I,
whether weak solutions of div(A grad u) = 0 are Lipschitz continuous or
differentiable at the origin.  The decision is made by reducing the question
to the asymptotics of a linear dynamical system in log-time, evaluating a
family of analytic integral criteria on the radial moment matrices of the
field, and (in two dimensions) cross-checking the verdict against a direct
finite-volume solve of the Dirichlet problem.
"""

__version__ = "0.1.0"

from . import coeff, sphmean, dyadic, dynsys, appendix_system, gilbarg_serrin
from . import criteria, pde_verify

__all__ = [
    "coeff",
    "sphmean",
    "dyadic",
    "dynsys",
    "appendix_system",
    "gilbarg_serrin",
    "criteria",
    "pde_verify",
]
