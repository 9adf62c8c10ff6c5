"""High-order derivatives of MLPs, Taylor expansion, and PDE solving.

The package computes arbitrary-order derivatives of single-output
multilayer perceptrons through a layered chain-matrix rule, checks them
against exact truncated-jet propagation, trains networks against
high-order PDE residual losses, and expands trained networks into
explicit Taylor polynomials.
"""

from .activations import ActivationKind, act_derivs, build_poly_table
from .chainmat import build_table, eval_chain_matrix
from .engines import ExactEngine, ShopEngine, get_engine
from .hod import layer_transfer, mixed_derivs, unmixed_derivs
from .jets import MultiJet, jet_compose_activation, jet_forward, jet_variable
from .network import Architecture, Network, forward_cached, init_uniform, load, save
from .pde import PdeProblem, TrainConfig, builtin_problem, residual_loss, train
from .tape import Tape, Tensor
from .taylor import TaylorPolynomial, convergence_profile, eval_poly, expand, render

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "Architecture",
    "ExactEngine",
    "MultiJet",
    "Network",
    "PdeProblem",
    "ShopEngine",
    "Tape",
    "TaylorPolynomial",
    "Tensor",
    "TrainConfig",
    "act_derivs",
    "build_poly_table",
    "build_table",
    "builtin_problem",
    "convergence_profile",
    "eval_chain_matrix",
    "eval_poly",
    "expand",
    "forward_cached",
    "get_engine",
    "init_uniform",
    "jet_compose_activation",
    "jet_forward",
    "jet_variable",
    "layer_transfer",
    "load",
    "mixed_derivs",
    "render",
    "residual_loss",
    "save",
    "train",
    "unmixed_derivs",
]
