"""Hamiltonians, the linear-quadratic analytic value field, and HJB residuals.

Sign convention: the value field's drift density Gamma satisfies

    Gamma(t, x) = <A* V_x, x> + inf_u H(t, x, u, V_x, Phi_x, V_xx),

equivalently Gamma = -dV/dt for deterministic fields, where H is the
inf-form Hamiltonian f + <p, a> + <q, b>_HS + (1/2) <B b, b>_HS.  All checks
in this package standardize on this orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import streams
from .backward import RegressionBasis, lsmc_conditional_expectation
from .forward_see import ControlModel
from .hilbert import GalerkinOperator
from .prob_tree import EnumerationTooLarge

__all__ = [
    "ValueField",
    "LQSpec",
    "hamiltonian_hh",
    "hamiltonian_script",
    "lq_riccati_value",
    "hjb_residual",
    "estimate_value_regression",
]


@dataclass
class ValueField:
    """Callable estimate of the value function and its companions.

    All callables are vectorized over a batch of states: V(t, x) -> (k,),
    V_x -> (k, n), V_xx -> (k, n, n), Phi -> (k, m), Phi_x -> (k, n, m),
    Gamma -> (k,).  Regression-estimated fields may leave Phi/Gamma unset and
    report their per-slice in-sample R^2 instead.
    """

    v: Callable
    v_x: Callable
    v_xx: Callable
    phi: Callable | None = None
    phi_x: Callable | None = None
    gamma: Callable | None = None
    provenance: str = "analytic"
    r2_per_slice: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def hamiltonian_hh(model: ControlModel, t, x, u, p, q, big_b) -> np.ndarray:
    """Inf-form Hamiltonian f + <p,a> + <q,b>_HS + 1/2 <B b, b>_HS."""
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    k = x.shape[0]
    p = np.broadcast_to(np.asarray(p, dtype=float), (k, model.state_dim))
    a_val = np.asarray(model.a(t, x, u, None), dtype=float)
    b_val = np.asarray(model.b(t, x, u, None), dtype=float)
    f_val = np.asarray(model.f(t, x, u, None), dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), b_val.shape)
    big_b = np.broadcast_to(np.asarray(big_b, dtype=float),
                            (k, model.state_dim, model.state_dim))
    out = (
        f_val
        + np.einsum("pn,pn->p", p, a_val)
        + np.einsum("pnm,pnm->p", q, b_val)
        + 0.5 * np.einsum("pij,pjl,pil->p", big_b, b_val, b_val)
    )
    return out


def hamiltonian_script(model: ControlModel, t, x, u, p, q) -> np.ndarray:
    """Adjoint-form Hamiltonian <p,a> + <q,b>_HS - f.

    Related to the inf-form by script(t,x,u,p,q) = -hh(t,x,u,-p,-q,0).
    """
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    k = x.shape[0]
    p = np.broadcast_to(np.asarray(p, dtype=float), (k, model.state_dim))
    a_val = np.asarray(model.a(t, x, u, None), dtype=float)
    b_val = np.asarray(model.b(t, x, u, None), dtype=float)
    f_val = np.asarray(model.f(t, x, u, None), dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), b_val.shape)
    return (
        np.einsum("pn,pn->p", p, a_val)
        + np.einsum("pnm,pnm->p", q, b_val)
        - f_val
    )


@dataclass
class LQSpec:
    """Linear-quadratic problem data on a diagonal truncation.

    Dynamics dX = (A X + M X + N u) dt + b dW with constant diffusion ``b``;
    running cost <R_x x, x> + <R_u u, u>, terminal cost <G_T x, x>.
    """

    op: GalerkinOperator
    m_drift: np.ndarray
    n_ctrl: np.ndarray
    r_x: np.ndarray
    r_u: np.ndarray
    g_t: np.ndarray
    b_const: np.ndarray
    horizon: float
    u_bound: float = 3.0

    def __post_init__(self):
        for name in ("m_drift", "n_ctrl", "r_x", "r_u", "g_t", "b_const"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.op.dim
        if self.m_drift.shape != (n, n):
            raise ValueError("M must be state x state")
        eig_ru = np.linalg.eigvalsh(self.r_u)
        if np.min(eig_ru) <= 0:
            raise ValueError("R_u must be positive definite")
        for name in ("r_x", "g_t"):
            if np.min(np.linalg.eigvalsh(getattr(self, name))) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")

    @property
    def state_dim(self) -> int:
        return self.op.dim

    @property
    def control_dim(self) -> int:
        return self.n_ctrl.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.b_const.shape[1]

    def riccati_rhs(self, p: np.ndarray) -> np.ndarray:
        """dP/dt = P N R_u^-1 N' P - A_cl' P - P A_cl - R_x with A_cl = A + M."""
        a_cl = np.diag(self.op.eigenvalues) + self.m_drift
        gain_term = p @ self.n_ctrl @ np.linalg.solve(self.r_u, self.n_ctrl.T @ p)
        return gain_term - a_cl.T @ p - p @ a_cl - self.r_x


@dataclass
class RiccatiTable:
    times: np.ndarray
    p: np.ndarray  # (n_fine + 1, n, n)
    r: np.ndarray  # (n_fine + 1,)

    def p_at(self, t: float) -> np.ndarray:
        return _interp_table(self.times, self.p, t)

    def r_at(self, t: float) -> float:
        return float(_interp_table(self.times, self.r, t))


def _interp_table(times: np.ndarray, values: np.ndarray, t: float):
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"time {t} outside table range [{times[0]}, {times[-1]}]")
    idx = np.searchsorted(times, t)
    idx = min(max(idx, 0), times.size - 1)
    if abs(times[idx] - t) <= 1e-12:
        return values[idx]
    lo = idx - 1
    w = (t - times[lo]) / (times[idx] - times[lo])
    return (1 - w) * values[lo] + w * values[idx]


def solve_riccati(spec: LQSpec, n_fine: int = 2000, blowup_norm: float = 1e6) -> RiccatiTable:
    """Backward RK4 integration of the Riccati pair (P, r).

    r collects the noise-trace offset, r'(t) = -tr(P b b'), r(T) = 0.
    """
    t_grid = np.linspace(0.0, spec.horizon, n_fine + 1)
    dt = t_grid[1] - t_grid[0]
    bbt = spec.b_const @ spec.b_const.T
    n = spec.state_dim
    p_tab = np.empty((n_fine + 1, n, n))
    r_tab = np.empty(n_fine + 1)
    p_tab[-1] = spec.g_t
    r_tab[-1] = 0.0

    def rhs(p, _r):
        return spec.riccati_rhs(p), -float(np.trace(p @ bbt))

    for i in range(n_fine, 0, -1):
        p = p_tab[i]
        r = r_tab[i]
        k1p, k1r = rhs(p, r)
        k2p, k2r = rhs(p - 0.5 * dt * k1p, r - 0.5 * dt * k1r)
        k3p, k3r = rhs(p - 0.5 * dt * k2p, r - 0.5 * dt * k2r)
        k4p, k4r = rhs(p - dt * k3p, r - dt * k3r)
        p_tab[i - 1] = p - dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        r_tab[i - 1] = r - dt / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
        if np.linalg.norm(p_tab[i - 1]) > blowup_norm:
            raise FloatingPointError(
                f"Riccati blow-up: |P({t_grid[i-1]:.4g})| > {blowup_norm:.3g}"
            )
    return RiccatiTable(times=t_grid, p=p_tab, r=r_tab)


def lq_riccati_value(spec: LQSpec, n_fine: int = 2000) -> ValueField:
    """Analytic value field V(t,x) = <P(t)x, x> + r(t) with its companions.

    Gamma is evaluated through the Riccati right-hand side at the tabulated
    P(t), so the defining identity Gamma = <A*V_x, x> + inf_u H holds
    algebraically at every (t, x), independent of the ODE accuracy.
    Phi vanishes: the coefficients are deterministic.
    """
    table = solve_riccati(spec, n_fine=n_fine)
    bbt = spec.b_const @ spec.b_const.T
    m_noise = spec.noise_dim
    n = spec.state_dim

    def v(t, x):
        x = np.atleast_2d(x)
        p = table.p_at(t)
        return np.einsum("ki,ij,kj->k", x, p, x) + table.r_at(t)

    def v_x(t, x):
        x = np.atleast_2d(x)
        return 2.0 * x @ table.p_at(t).T

    def v_xx(t, x):
        x = np.atleast_2d(x)
        return np.broadcast_to(2.0 * table.p_at(t), (x.shape[0], n, n)).copy()

    def phi(t, x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], m_noise))

    def phi_x(t, x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], n, m_noise))

    def gamma(t, x):
        x = np.atleast_2d(x)
        p = table.p_at(t)
        pdot = spec.riccati_rhs(p)
        rdot = -float(np.trace(p @ bbt))
        return -(np.einsum("ki,ij,kj->k", x, pdot, x) + rdot)

    def feedback_gain(t):
        return np.linalg.solve(spec.r_u, spec.n_ctrl.T @ table.p_at(t))

    fld = ValueField(v=v, v_x=v_x, v_xx=v_xx, phi=phi, phi_x=phi_x, gamma=gamma,
                     provenance="analytic")
    fld.meta["riccati_table"] = table
    fld.meta["feedback_gain"] = feedback_gain
    fld.meta["spec"] = spec
    return fld


@dataclass
class HJBResidualReport:
    max_abs_residual: float
    residuals: np.ndarray
    points: list


def hjb_residual(
    fld: ValueField,
    model: ControlModel,
    t_points: np.ndarray,
    x_points: np.ndarray,
    u_grid: np.ndarray | None = None,
) -> HJBResidualReport:
    """Residual Gamma - (<A* V_x, x> + min_u H) over a (t, x) sample.

    The minimum runs over the model's control grid augmented with the
    model's analytic Hamiltonian minimizer when one is defined; a finite
    grid alone cannot realize the continuum infimum to tight tolerances.
    """
    if fld.gamma is None or fld.phi_x is None:
        raise ValueError("field must provide gamma and phi_x callables")
    u_grid = model.default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    lam = model.op.eigenvalues
    residuals = np.empty((len(t_points), x_points.shape[0]))
    pts = []
    for it, t in enumerate(t_points):
        t = float(t)
        vx = fld.v_x(t, x_points)
        vxx = fld.v_xx(t, x_points)
        phix = fld.phi_x(t, x_points)
        gam = fld.gamma(t, x_points)
        a_star_term = np.einsum("kn,n,kn->k", vx, lam, x_points)

        candidates = [np.full((x_points.shape[0], model.control_dim), uv)
                      for uv in np.atleast_1d(u_grid)]
        if model.hamiltonian_argmin is not None:
            candidates.append(model.hamiltonian_argmin(t, x_points, vx, phix, vxx))
        h_min = np.full(x_points.shape[0], np.inf)
        for u in candidates:
            h_val = hamiltonian_hh(model, t, x_points, u, vx, phix, vxx)
            h_min = np.minimum(h_min, h_val)
        residuals[it] = gam - (a_star_term + h_min)
        pts.append((t, x_points))
    return HJBResidualReport(
        max_abs_residual=float(np.max(np.abs(residuals))),
        residuals=residuals,
        points=pts,
    )


def estimate_value_regression(
    model: ControlModel,
    control_family: list,
    t0: float,
    t1: float,
    n_steps: int,
    paths: int,
    seed: int,
    x_span: float = 2.5,
    x_grid: np.ndarray | None = None,
    basis: RegressionBasis | None = None,
    work_cap: float = 5e9,
) -> ValueField:
    """Backward value estimation over a family of feedback controls.

    At each time slice and for every family member the one-step value
    f(t, x, u) dt + E[V_{k+1}(X')] is projected on polynomial features of the
    state over an exploration cloud; the slice value is the pointwise minimum
    over the family, refit to a single polynomial.  Exploration states start
    uniform on [-x_span, x_span]^n and evolve under zero control so the cloud
    keeps covering the query range.

    V_x and V_xx of the returned field are central differences with step
    equal to the x-grid spacing.
    """
    basis = basis or RegressionBasis()
    n = model.state_dim
    m = model.noise_dim
    dt = (t1 - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)
    if len(control_family) * n_steps * paths > work_cap:
        raise EnumerationTooLarge(
            f"family x slices x paths = {len(control_family) * n_steps * paths:.3g} exceeds cap"
        )

    rng = streams.generator(seed, "value_regression")
    cloud = np.empty((paths, n_steps + 1, n))
    cloud[:, 0] = rng.uniform(-x_span, x_span, size=(paths, n))
    dw = rng.normal(scale=np.sqrt(dt), size=(paths, n_steps, m))
    w = np.zeros((paths, n_steps + 1, m))
    np.cumsum(dw, axis=1, out=w[:, 1:])
    s_diag = model.op.semigroup_diag(dt)
    u_zero = np.zeros((paths, model.control_dim))
    for k in range(n_steps):
        t = float(times[k])
        xk = cloud[:, k]
        a_val = np.asarray(model.a(t, xk, u_zero, w[:, :k + 1]), dtype=float)
        b_val = np.asarray(model.b(t, xk, u_zero, w[:, :k + 1]), dtype=float)
        cloud[:, k + 1] = (xk + a_val * dt + np.einsum("pnm,pm->pn", b_val, dw[:, k])) * s_diag

    exps = basis.exponents(n)
    coefs: list[np.ndarray | None] = [None] * (n_steps + 1)
    r2s: list[float] = [1.0] * (n_steps + 1)

    def eval_slice(k: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if k == n_steps:
            return np.asarray(model.h(x, None), dtype=float)
        return basis.design(x) @ coefs[k]

    for k in range(n_steps - 1, -1, -1):
        t = float(times[k])
        xk = cloud[:, k]
        design = basis.design(xk)
        targets = np.empty((paths, len(control_family)))
        for j, fb in enumerate(control_family):
            u = np.asarray(fb(t, xk), dtype=float)
            if u.ndim == 1:
                u = u[:, None]
            a_val = np.asarray(model.a(t, xk, u, None), dtype=float)
            b_val = np.asarray(model.b(t, xk, u, None), dtype=float)
            x_next = (xk + a_val * dt + np.einsum("pnm,pm->pn", b_val, dw[:, k])) * s_diag
            targets[:, j] = (np.asarray(model.f(t, xk, u, None), dtype=float) * dt
                             + eval_slice(k + 1, x_next))
        # one shared design: all family members fitted in a single solve
        fit = lsmc_conditional_expectation(design, targets,
                                           basis.ridge_threshold, basis.allow_ridge)
        best = fit.fitted.min(axis=1)
        refit = lsmc_conditional_expectation(design, best,
                                             basis.ridge_threshold, basis.allow_ridge)
        coefs[k] = refit.coef
        r2s[k] = refit.r2

    if x_grid is None:
        x_grid = np.linspace(-2.0, 2.0, 41)
    x_grid = np.asarray(x_grid, dtype=float)
    h_fd = float(x_grid[1] - x_grid[0]) if x_grid.size > 1 else 1e-3

    def slice_index(t: float) -> int:
        k = int(round((t - t0) / dt))
        if not 0 <= k <= n_steps or abs(times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the estimation grid")
        return k

    def v(t, x):
        return eval_slice(slice_index(t), x)

    def v_x(t, x):
        k = slice_index(t)
        x = np.atleast_2d(x)
        out = np.empty_like(x)
        for i in range(n):
            shift = np.zeros(n)
            shift[i] = h_fd
            out[:, i] = (eval_slice(k, x + shift) - eval_slice(k, x - shift)) / (2 * h_fd)
        return out

    def v_xx(t, x):
        k = slice_index(t)
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], n, n))
        base = eval_slice(k, x)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h_fd
            out[:, i, i] = (eval_slice(k, x + ei) - 2 * base + eval_slice(k, x - ei)) / h_fd**2
            for j in range(i + 1, n):
                ej = np.zeros(n)
                ej[j] = h_fd
                mixed = (
                    eval_slice(k, x + ei + ej) - eval_slice(k, x + ei - ej)
                    - eval_slice(k, x - ei + ej) + eval_slice(k, x - ei - ej)
                ) / (4 * h_fd**2)
                out[:, i, j] = mixed
                out[:, j, i] = mixed
        return out

    fld = ValueField(v=v, v_x=v_x, v_xx=v_xx, provenance="regression", r2_per_slice=r2s)
    fld.meta["times"] = times
    fld.meta["x_grid"] = x_grid
    if n == 1:
        fld.meta["grid_values"] = np.stack(
            [eval_slice(k, x_grid[:, None]) for k in range(n_steps + 1)]
        )
    return fld
