"""Numerical substrate: autodiff, ODE stepping, ADAM, eigenproblems."""
from .autodiff import Tape, Var, grad, value_and_grad
from .dual import Dual, jvp, seed_basis
from .linalg import sym_eig
from .ode import RK4, DormandPrince, rk_integrate
from .optim import AdamState, adam_init, adam_step
from .params import Layout, ParamVector
from . import ops

__all__ = [
    "Tape", "Var", "grad", "value_and_grad", "Dual", "jvp", "seed_basis",
    "sym_eig", "RK4", "DormandPrince", "rk_integrate",
    "AdamState", "adam_init", "adam_step", "Layout", "ParamVector", "ops",
]
