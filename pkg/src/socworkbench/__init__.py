"""Desk-scale workbench for stochastic optimal control verification.

Two independent characterizations of the same control problem are computed
and cross-checked numerically: backward-induction / dynamic-programming
values (exactly on finite scenario trees, by regression Monte Carlo on
Galerkin truncations) and Pontryagin-type adjoint processes (first- and
second-order), together with the identities and one-sided inclusions that
tie them to the value field.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    backward,
    cli,
    forward_see,
    hilbert,
    presets,
    prob_tree,
    relations,
    second_order,
    streams,
    value_hjb,
)
