"""Symbolic and numeric verification of the matrix Harnack evolution identity
for Ricci flow: tensor expressions, a rewrite engine, derivation scripts and
closed-form checks on shrinking spheres."""
from .expr import TensorExpr, canonicalize, equal_canonical
from .parser import parse
from .rewrite import apply_rule, get_rule
from .derivation import run_script, verify_step

__version__ = "0.1.0"

__all__ = [
    "TensorExpr",
    "apply_rule",
    "canonicalize",
    "equal_canonical",
    "get_rule",
    "parse",
    "run_script",
    "verify_step",
]
