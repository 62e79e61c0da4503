import numpy as np
import pytest

from socworkbench import presets
from socworkbench.backward import RegressionBasis, solve_first_adjoint
from socworkbench.forward_see import simulate_forward
from socworkbench.second_order import solve_second_adjoint
from socworkbench.value_hjb import lq_riccati_value

SEED = 20240601


@pytest.fixture(scope="session")
def lq_small():
    """Reduced-scale scalar LQ chain shared by the unit tests.

    Full acceptance budgets (1e5 paths) run in tests/test_acceptance.py; the
    unit tests reuse this cheaper chain to keep the suite quick.
    """
    spec = presets.lq_scalar_spec()
    model = presets.lq_model(spec)
    fld = lq_riccati_value(spec)
    feedback = presets.lq_optimal_feedback(spec, fld)
    bundle = simulate_forward(model, feedback, np.array([1.5]), 0.0, spec.horizon,
                              120, 30_000, SEED, label="lq-test")
    basis = RegressionBasis(degree=2)
    adjoint = solve_first_adjoint(model, bundle, basis)
    lin = presets.lq_closed_loop_linearization(spec, fld, bundle)
    second = solve_second_adjoint(model, bundle, lin, basis)
    return {
        "spec": spec,
        "model": model,
        "field": fld,
        "feedback": feedback,
        "bundle": bundle,
        "basis": basis,
        "adjoint": adjoint,
        "lin": lin,
        "second": second,
    }
