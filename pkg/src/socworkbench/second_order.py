"""Second-order adjoint equation and its duality-identity verifier.

On the truncation the operator-valued backward equation is an ordinary
matrix-valued BSDE and is solved directly by regression Monte Carlo; the
duality identity against pairs of test forward equations (the solution
concept that replaces it beyond truncations) is then checked by Monte Carlo
as a validation.

The solver consumes a :class:`Linearization` - the coefficient derivatives
(J, K), the Hamiltonian Hessian and the terminal Hessian evaluated along a
bundle.  ``linearize_open_loop`` differentiates the model coefficients at
the realized controls; preset code may instead supply a closed-loop
linearization (derivatives through an optimal feedback law), which is the
variant whose -P reproduces the value Hessian on linear-quadratic problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backward import FirstAdjoint, RegressionBasis, lsmc_conditional_expectation
from .forward_see import ControlModel, SamplePathBundle

__all__ = [
    "Linearization",
    "SecondAdjoint",
    "TestProcessTriple",
    "linearize_open_loop",
    "solve_second_adjoint",
    "solve_test_equation",
    "verify_relaxed_transposition",
]


@dataclass
class Linearization:
    """Per-slice coefficient derivatives along a bundle.

    ``j(k) -> (paths, n, n)``: drift state-derivative at slice k;
    ``k_op(k) -> (paths, n, m, n)``: diffusion state-derivative;
    ``hxx(k) -> (paths, n, n)``: Hessian of the adjoint-form Hamiltonian
    (so the equation's driver matrix is F = -hxx);
    ``p_terminal``: (paths, n, n) terminal value -h_xx.
    """

    j: Callable[[int], np.ndarray]
    k_op: Callable[[int], np.ndarray]
    hxx: Callable[[int], np.ndarray]
    p_terminal: np.ndarray
    label: str = "open-loop"


def linearize_open_loop(
    model: ControlModel, bundle: SamplePathBundle, adjoint: FirstAdjoint
) -> Linearization:
    """Derivatives of the model coefficients at the bundle's realized controls.

    hxx = <p, a_xx> + <q, b_xx> - f_xx with the first adjoint pair frozen.
    Missing model second derivatives are treated as zero.
    """
    paths, n_steps, m = bundle.dw.shape
    n = model.state_dim
    if model.h_xx is None:
        raise ValueError("model must provide h_xx")

    def args(k):
        return (float(bundle.times[k]), bundle.x[:, k], bundle.u[:, k], bundle.w_hist(k))

    def j(k):
        if model.a_x is None:
            return np.zeros((paths, n, n))
        return np.asarray(model.a_x(*args(k)), dtype=float)

    def k_op(k):
        if model.b_x is None:
            return np.zeros((paths, n, m, n))
        return np.asarray(model.b_x(*args(k)), dtype=float)

    def hxx(k):
        out = np.zeros((paths, n, n))
        if model.f_xx is not None:
            out = out - np.asarray(model.f_xx(*args(k)), dtype=float)
        if model.a_xx is not None:
            a_xx = np.asarray(model.a_xx(*args(k)), dtype=float)  # (paths, n, n, n)
            out = out + np.einsum("pi,pijk->pjk", adjoint.p[:, k], a_xx)
        if model.b_xx is not None:
            b_xx = np.asarray(model.b_xx(*args(k)), dtype=float)  # (paths, n, m, n, n)
            out = out + np.einsum("pil,piljk->pjk", adjoint.q[:, k], b_xx)
        return out

    p_term = -np.asarray(model.h_xx(bundle.x[:, -1], bundle.w[:, -1]), dtype=float)
    return Linearization(j=j, k_op=k_op, hxx=hxx, p_terminal=p_term)


@dataclass
class SecondAdjoint:
    """Matrix pair (P, Q) along a bundle; P symmetrized every step."""

    p: np.ndarray  # (paths, N_t + 1, n, n)
    q: np.ndarray  # (paths, N_t, n, n, m)
    asymmetry_max: float = 0.0
    r2_per_slice: list = field(default_factory=list)


def solve_second_adjoint(
    model: ControlModel,
    bundle: SamplePathBundle,
    lin: Linearization,
    basis: RegressionBasis | None = None,
    asymmetry_warn: float = 1e-8,
) -> SecondAdjoint:
    """Backward LSMC recursion for the vectorized matrix equation.

    Mild step (diagonal semigroup transported on both sides):

        Q_k = S E[P_{k+1} dW_k | feat_k] S / dt,
        P_k = S (E[P_{k+1}] + dt (J'P + PJ + K*PK + K*Q + QK + hxx)|_k) S,

    terminal P(T) = -h_xx(X(T)) per path, symmetrization after each step.
    """
    basis = basis or RegressionBasis()
    paths, n_steps, m = bundle.dw.shape
    n = model.state_dim
    dt = bundle.dt
    s_diag = model.op.semigroup_diag(dt)
    sps = np.multiply.outer(s_diag, s_diag)  # (n, n) two-sided transport

    p = np.empty((paths, n_steps + 1, n, n))
    q = np.empty((paths, n_steps, n, n, m))
    p[:, -1] = lin.p_terminal
    asym_max = 0.0
    r2s: list[float] = []

    for k in range(n_steps - 1, -1, -1):
        w = bundle.w[:, k] if basis.include_noise else None
        design = basis.design(bundle.x[:, k], w)
        try:
            fit_p = lsmc_conditional_expectation(design, p[:, k + 1],
                                                 basis.ridge_threshold, basis.allow_ridge)
            centered = p[:, k + 1] - fit_p.fitted
            fit_q = lsmc_conditional_expectation(
                design, centered[:, :, :, None] * bundle.dw[:, k, None, None, :] / dt,
                basis.ridge_threshold, basis.allow_ridge)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"second-adjoint regression failed at step {k}: {exc}") from exc
        ep = fit_p.fitted
        qk = fit_q.fitted * sps[None, :, :, None]
        q[:, k] = qk

        jk = lin.j(k)
        kk = lin.k_op(k)
        drift = (
            np.einsum("pji,pjk->pik", jk, ep)
            + np.einsum("pij,pjk->pik", ep, jk)
            + np.einsum("pilj,pir,prlk->pjk", kk, ep, kk)
            + np.einsum("pilj,pikl->pjk", kk, qk)
            + np.einsum("pjil,pilk->pjk", qk, kk)
            + lin.hxx(k)
        )
        raw = (ep + dt * drift) * sps[None, :, :]
        asym = float(np.max(np.abs(raw - raw.transpose(0, 2, 1))))
        asym_max = max(asym_max, asym)
        p[:, k] = 0.5 * (raw + raw.transpose(0, 2, 1))
        r2s.append(fit_p.r2)

    if asym_max > asymmetry_warn:
        import warnings

        warnings.warn(f"second adjoint asymmetry before symmetrization reached {asym_max:.3e}")
    return SecondAdjoint(p=p, q=q, asymmetry_max=asym_max, r2_per_slice=r2s[::-1])


@dataclass
class TestProcessTriple:
    """Test-equation data: initial state, drift and diffusion perturbations.

    ``u_of`` maps a slice index to (paths, n) (or returns a constant array);
    ``v_of`` maps to (paths, n, m).  ``None`` means identically zero.
    """

    xi: np.ndarray
    u_of: Callable[[int], np.ndarray] | None = None
    v_of: Callable[[int], np.ndarray] | None = None
    name: str = "triple"


def _triple_u(triple: TestProcessTriple, k: int, paths: int, n: int) -> np.ndarray:
    if triple.u_of is None:
        return np.zeros((paths, n))
    return np.broadcast_to(np.asarray(triple.u_of(k), dtype=float), (paths, n))


def _triple_v(triple: TestProcessTriple, k: int, paths: int, n: int, m: int) -> np.ndarray:
    if triple.v_of is None:
        return np.zeros((paths, n, m))
    return np.broadcast_to(np.asarray(triple.v_of(k), dtype=float), (paths, n, m))


def solve_test_equation(
    model: ControlModel,
    lin: Linearization,
    triple: TestProcessTriple,
    bundle: SamplePathBundle,
) -> np.ndarray:
    """Exponential-Euler flow of dphi = ((A+J)phi + u) ds + (K phi + v) dW.

    The noise increments are the bundle's own draws, so the test process
    lives on the same probability space as the adjoints it is paired with.
    Returns (paths, N_t + 1, n).
    """
    paths, n_steps, m = bundle.dw.shape
    n = model.state_dim
    dt = bundle.dt
    s_diag = model.op.semigroup_diag(dt)
    phi = np.empty((paths, n_steps + 1, n))
    phi[:, 0] = np.broadcast_to(np.atleast_1d(np.asarray(triple.xi, dtype=float)), (paths, n))
    for k in range(n_steps):
        ph = phi[:, k]
        jk = lin.j(k)
        kk = lin.k_op(k)
        u = _triple_u(triple, k, paths, n)
        v = _triple_v(triple, k, paths, n, m)
        drift = np.einsum("pij,pj->pi", jk, ph) + u
        diff = np.einsum("pilj,pj->pil", kk, ph) + v
        incr = ph + drift * dt + np.einsum("pil,pl->pi", diff, bundle.dw[:, k])
        if not np.all(np.isfinite(incr)):
            raise FloatingPointError(f"non-finite test state at step {k}")
        phi[:, k + 1] = incr * s_diag
    return phi


@dataclass
class TranspositionReport:
    pair_name: str
    residual_mean: float
    stderr: float
    lhs_mean: float
    rhs_mean: float


def verify_relaxed_transposition(
    model: ControlModel,
    lin: Linearization,
    second: SecondAdjoint,
    bundle: SamplePathBundle,
    triple_pairs: list[tuple[TestProcessTriple, TestProcessTriple]],
) -> list[TranspositionReport]:
    """Monte-Carlo residual of the duality identity for each test pair.

    Both sides are accumulated per path with left-point quadrature:

      LHS = <P_T phi1(T), phi2(T)> - int <F phi1, phi2>,   F = -hxx,
      RHS = <P(t)xi1, xi2> + int [ <P u1, phi2> + <P phi1, u2>
            + <P K phi1, v2>_HS + <P v1, K phi2 + v2>_HS
            + <v1, Qhat phi2>_HS + <Q phi1, v2>_HS ],

    with Qhat the pointwise adjoint of Q.  The residual mean should vanish
    within Monte-Carlo error plus an O(dt) discretization allowance.
    """
    paths, n_steps, m = bundle.dw.shape
    n = model.state_dim
    dt = bundle.dt
    reports = []
    for t1, t2 in triple_pairs:
        phi1 = solve_test_equation(model, lin, t1, bundle)
        phi2 = solve_test_equation(model, lin, t2, bundle)
        lhs = np.einsum("pij,pi,pj->p", lin.p_terminal, phi1[:, -1], phi2[:, -1])
        rhs = np.einsum("pij,pi,pj->p", second.p[:, 0],
                        phi1[:, 0], phi2[:, 0])
        for k in range(n_steps):
            pk = second.p[:, k]
            qk = second.q[:, k]
            kk = lin.k_op(k)
            f_mat = -lin.hxx(k)
            u1 = _triple_u(t1, k, paths, n)
            u2 = _triple_u(t2, k, paths, n)
            v1 = _triple_v(t1, k, paths, n, m)
            v2 = _triple_v(t2, k, paths, n, m)
            ph1 = phi1[:, k]
            ph2 = phi2[:, k]

            lhs -= dt * np.einsum("pij,pi,pj->p", f_mat, ph1, ph2)
            k_ph1 = np.einsum("pilj,pj->pil", kk, ph1)
            k_ph2 = np.einsum("pilj,pj->pil", kk, ph2)
            rhs += dt * (
                np.einsum("pij,pi,pj->p", pk, u1, ph2)
                + np.einsum("pij,pi,pj->p", pk, ph1, u2)
                + np.einsum("pij,pjl,pil->p", pk, k_ph1, v2)
                + np.einsum("pij,pjl,pil->p", pk, v1, k_ph2 + v2)
                + np.einsum("pijl,pi,pjl->p", qk, ph2, v1)
                + np.einsum("pijl,pj,pil->p", qk, ph1, v2)
            )
        res = lhs - rhs
        reports.append(
            TranspositionReport(
                pair_name=f"{t1.name}|{t2.name}",
                residual_mean=float(res.mean()),
                stderr=float(res.std(ddof=1) / np.sqrt(paths)) if paths > 1 else 0.0,
                lhs_mean=float(lhs.mean()),
                rhs_mean=float(rhs.mean()),
            )
        )
    return reports
