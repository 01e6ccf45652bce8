"""Deformed Hamiltonian vector fields on flat Lagrangian fibrations.

Library layout:

* ``expr``     scalar expression trees (parse, differentiate, compile)
* ``poly``     exact rational polynomials
* ``forms``    bigraded exterior calculus and the deformed derivative d_q
* ``phase``    coordinate conventions, metric family, dual endomorphism
* ``dynamics`` flows of X^q_H, variational equations, pullback checks
* ``bracket``  deformed bracket and Lie-admissibility diagnostics
* ``morse``    Lagrange-multiplier Morse complex and adiabatic limit
* ``cli``      scenario runner (``defham run`` / ``defham validate``)
"""

from .expr import parse, differentiate, evaluate, to_text
from .phase import PhasePoint, TangentVector, MetricFamily
from .dynamics import FlowSpec, Trajectory, integrate, deformed_field
from .forms import BigradedForm, deformed_derivative, classify_hamiltonian

__version__ = "0.1.0"

__all__ = [
    "parse",
    "differentiate",
    "evaluate",
    "to_text",
    "PhasePoint",
    "TangentVector",
    "MetricFamily",
    "FlowSpec",
    "Trajectory",
    "integrate",
    "deformed_field",
    "BigradedForm",
    "deformed_derivative",
    "classify_hamiltonian",
    "__version__",
]
