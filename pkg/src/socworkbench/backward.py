"""Regression-based solvers for the backward equations.

Conditional expectations are realized by least-squares Monte Carlo on
polynomial features of the state (optionally extended with sampled Brownian
history for random-coefficient models).  The diffusion coefficients Z and q
are extracted by projecting the one-step-ahead value onto the Brownian
increment, which is unbiased under Ito (left-point) conventions.  Cost pairs
use the accumulated-target form of the recursion, valid because the drivers
here never depend on the backward unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np

from .forward_see import ControlModel, SamplePathBundle

__all__ = [
    "RegressionBasis",
    "FitResult",
    "lsmc_conditional_expectation",
    "CostPair",
    "FirstAdjoint",
    "solve_cost_bsee",
    "g_operator",
    "solve_first_adjoint",
    "martingale_decomposition",
]


@dataclass
class RegressionBasis:
    """Monomial features of the state up to ``degree``, constant included.

    With ``include_noise=True`` the current Brownian values are appended as
    extra linear features (used by random-coefficient presets; the exact
    feature list is then part of the preset's documentation).
    """

    degree: int = 2
    include_noise: bool = False
    ridge_threshold: float = 1e8
    allow_ridge: bool = True

    def exponents(self, n: int) -> list[tuple[int, ...]]:
        exps = [(0,) * n]
        for deg in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(n), deg):
                e = [0] * n
                for i in combo:
                    e[i] += 1
                exps.append(tuple(e))
        return exps

    def design(self, x: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = []
        for e in self.exponents(x.shape[1]):
            col = np.ones(x.shape[0])
            for i, power in enumerate(e):
                if power:
                    col = col * x[:, i] ** power
            cols.append(col)
        if self.include_noise and w is not None:
            w = np.atleast_2d(np.asarray(w, dtype=float))
            cols.extend(w[:, j] for j in range(w.shape[1]))
        return np.column_stack(cols)


@dataclass
class FitResult:
    coef: np.ndarray
    fitted: np.ndarray
    r2: float
    cond: float
    ridge_used: bool


def lsmc_conditional_expectation(
    design: np.ndarray,
    targets: np.ndarray,
    ridge_threshold: float = 1e8,
    allow_ridge: bool = True,
) -> FitResult:
    """Least-squares projection of targets onto the span of the design columns.

    ``targets`` may carry trailing component axes; each component is fitted
    against the same design.  Ridge regularization kicks in when the design
    condition number exceeds ``ridge_threshold``; a rank-deficient design
    with ridge disabled is an explicit error.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n_samples, n_feat = design.shape
    if n_samples <= 10 * n_feat:
        raise ValueError(f"need more than {10 * n_feat} samples for {n_feat} features, got {n_samples}")
    flat = targets.reshape(n_samples, -1)

    gram = design.T @ design
    rhs = design.T @ flat
    gram_cond = np.linalg.cond(gram)
    cond = float(np.sqrt(gram_cond)) if np.isfinite(gram_cond) else np.inf
    ridge_used = False
    if cond > ridge_threshold:
        if not allow_ridge:
            raise np.linalg.LinAlgError(
                f"design condition number {cond:.3g} exceeds {ridge_threshold:.3g} and ridge is disabled"
            )
        gram = gram + np.eye(n_feat) * (np.trace(gram) / n_feat) * 1e-10
        ridge_used = True
    coef = np.linalg.solve(gram, rhs)
    fitted_flat = design @ coef
    ss_res = np.sum((flat - fitted_flat) ** 2)
    ss_tot = np.sum((flat - flat.mean(axis=0)) ** 2)
    r2 = 1.0 if ss_tot == 0 else float(1.0 - ss_res / ss_tot)
    return FitResult(
        coef=coef.reshape((n_feat,) + targets.shape[1:]),
        fitted=fitted_flat.reshape(targets.shape),
        r2=r2,
        cond=cond,
        ridge_used=ridge_used,
    )


def _slice_design(basis: RegressionBasis, bundle: SamplePathBundle, k: int) -> np.ndarray:
    w = bundle.w[:, k] if basis.include_noise else None
    return basis.design(bundle.x[:, k], w)


@dataclass
class CostPair:
    """Backward value Y and its Brownian-increment coefficient Z."""

    y: np.ndarray  # (paths, N_t + 1)
    z: np.ndarray  # (paths, N_t, m)
    r2_per_slice: list[float] = field(default_factory=list)

    def value_at_start(self) -> float:
        return float(np.mean(self.y[:, 0]))


def _backward_scalar_lsmc(
    bundle: SamplePathBundle,
    terminal: np.ndarray,
    drivers: np.ndarray,
    basis: RegressionBasis,
) -> CostPair:
    """Shared recursion: Y_k = E[accumulated future | features_k].

    ``drivers[k]`` holds f(t_k, X_k, u_k) per path; the accumulated target
    sum_{j >= k} drivers[j] dt + terminal is projected slice by slice, and
    Z_k is the dW_k projection of the slice-(k+1) value.
    """
    paths, n_steps, m = bundle.dw.shape
    dt = bundle.dt
    y = np.empty((paths, n_steps + 1))
    z = np.empty((paths, n_steps, m))
    y[:, -1] = terminal
    target = terminal.astype(float).copy()
    r2s: list[float] = []
    y_next = terminal
    for k in range(n_steps - 1, -1, -1):
        design = _slice_design(basis, bundle, k)
        try:
            target = target + drivers[:, k] * dt
            fit_y = lsmc_conditional_expectation(
                design, target, basis.ridge_threshold, basis.allow_ridge)
            # dW projection with the conditional mean removed: identical
            # expectation (E_k[dW] = 0), far smaller variance
            centered = y_next - (fit_y.fitted - drivers[:, k] * dt)
            fit_z = lsmc_conditional_expectation(
                design, centered[:, None] * bundle.dw[:, k] / dt,
                basis.ridge_threshold, basis.allow_ridge)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"regression failed at step {k}: {exc}") from exc
        z[:, k] = fit_z.fitted
        y[:, k] = fit_y.fitted
        y_next = fit_y.fitted
        r2s.append(fit_y.r2)
    return CostPair(y=y, z=z, r2_per_slice=r2s[::-1])


def solve_cost_bsee(
    model: ControlModel,
    bundle: SamplePathBundle,
    basis: RegressionBasis | None = None,
) -> CostPair:
    """Cost pair (Y, Z) of the bundle's control: terminal h(X(T)), driver f."""
    basis = basis or RegressionBasis()
    paths, n_steps, _ = bundle.dw.shape
    terminal = np.asarray(model.h(bundle.x[:, -1], bundle.w[:, -1]), dtype=float)
    drivers = np.empty((paths, n_steps))
    for k in range(n_steps):
        drivers[:, k] = model.f(float(bundle.times[k]), bundle.x[:, k], bundle.u[:, k],
                                bundle.w_hist(k))
    return _backward_scalar_lsmc(bundle, terminal, drivers, basis)


def g_operator(
    model: ControlModel,
    bundle: SamplePathBundle,
    eta: np.ndarray,
    basis: RegressionBasis | None = None,
) -> CostPair:
    """Backward operator on [t, r]: same recursion as the cost pair but with
    terminal payoff ``eta`` (per path, measurable at the bundle's end time)."""
    basis = basis or RegressionBasis()
    paths, n_steps, _ = bundle.dw.shape
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (paths,):
        raise ValueError(f"eta must be one value per path, got shape {eta.shape}")
    drivers = np.empty((paths, n_steps))
    for k in range(n_steps):
        drivers[:, k] = model.f(float(bundle.times[k]), bundle.x[:, k], bundle.u[:, k],
                                bundle.w_hist(k))
    return _backward_scalar_lsmc(bundle, eta, drivers, basis)


@dataclass
class FirstAdjoint:
    """First-order adjoint pair along a bundle."""

    p: np.ndarray  # (paths, N_t + 1, n)
    q: np.ndarray  # (paths, N_t, n, m)
    r2_per_slice: list[float] = field(default_factory=list)


def solve_first_adjoint(
    model: ControlModel,
    bundle: SamplePathBundle,
    basis: RegressionBasis | None = None,
) -> FirstAdjoint:
    """Backward recursion for the adjoint pair (p, q) along the bundle.

    Mild-form step: the one-step semigroup transports both the regressed
    continuation value and the dW-projection,

        q_k = S(dt) E[p_{k+1} dW_k | feat_k] / dt,
        p_k = S(dt) (E[p_{k+1} | feat_k]
                     + dt (a_x^T E[p_{k+1}] + b_x^* q_k - f_x)|_{t_k}),

    with terminal p(T) = -h_x(X(T)) exact per path.
    """
    basis = basis or RegressionBasis()
    if model.h_x is None or model.f_x is None:
        raise ValueError("model must provide h_x and f_x for the first adjoint")
    paths, n_steps, m = bundle.dw.shape
    n = model.state_dim
    dt = bundle.dt
    s_diag = model.op.semigroup_diag(dt)

    p = np.empty((paths, n_steps + 1, n))
    q = np.empty((paths, n_steps, n, m))
    p[:, -1] = -np.asarray(model.h_x(bundle.x[:, -1], bundle.w[:, -1]), dtype=float)
    r2s: list[float] = []

    for k in range(n_steps - 1, -1, -1):
        t = float(bundle.times[k])
        xk = bundle.x[:, k]
        uk = bundle.u[:, k]
        w_hist = bundle.w_hist(k)
        design = _slice_design(basis, bundle, k)
        try:
            fit_p = lsmc_conditional_expectation(design, p[:, k + 1],
                                                 basis.ridge_threshold, basis.allow_ridge)
            centered = p[:, k + 1] - fit_p.fitted
            fit_q = lsmc_conditional_expectation(
                design, centered[:, :, None] * bundle.dw[:, k, None, :] / dt,
                basis.ridge_threshold, basis.allow_ridge)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"adjoint regression failed at step {k}: {exc}") from exc
        ep = fit_p.fitted
        qk = fit_q.fitted * s_diag[None, :, None]
        q[:, k] = qk

        drift = -np.asarray(model.f_x(t, xk, uk, w_hist), dtype=float)
        if model.a_x is not None:
            a_x = np.asarray(model.a_x(t, xk, uk, w_hist), dtype=float)
            drift = drift + np.einsum("pij,pi->pj", a_x, ep)
        if model.b_x is not None:
            b_x = np.asarray(model.b_x(t, xk, uk, w_hist), dtype=float)
            drift = drift + np.einsum("pilj,pil->pj", b_x, qk)
        p[:, k] = (ep + dt * drift) * s_diag
        r2s.append(fit_p.r2)

    return FirstAdjoint(p=p, q=q, r2_per_slice=r2s[::-1])


@dataclass
class MartingaleDecomposition:
    k: np.ndarray  # (paths, N_t, m)
    drift_max: float
    drift_tolerance: float
    drift_warning: bool
    reconstruction_rms: float


def martingale_decomposition(
    m_paths: np.ndarray,
    dw: np.ndarray,
    dt: float,
    feature_fn: Callable[[int], np.ndarray],
    basis: RegressionBasis | None = None,
) -> MartingaleDecomposition:
    """Brownian-increment representation of an empirical martingale.

    ``feature_fn(k)`` supplies the slice-k design matrix.  The integrand is
    K_k = E[m_{k+1} dW_k | feat_k] / dt and the reconstruction
    m(t_0) + sum K dW is compared against the input path.  A drift beyond
    three standard errors of the increment mean triggers a warning flag
    rather than an error.
    """
    basis = basis or RegressionBasis()
    m_paths = np.asarray(m_paths, dtype=float)
    paths, n_plus_1 = m_paths.shape
    n_steps = n_plus_1 - 1
    incr = np.diff(m_paths, axis=1)
    drift = np.abs(incr.mean(axis=0))
    drift_tol = 3.0 * incr.std(axis=0, ddof=1).max() / np.sqrt(paths)
    drift_max = float(drift.max())

    k_arr = np.empty((paths, n_steps, dw.shape[2]))
    for k in range(n_steps):
        design = feature_fn(k)
        fit_mean = lsmc_conditional_expectation(design, m_paths[:, k + 1],
                                                basis.ridge_threshold, basis.allow_ridge)
        centered = m_paths[:, k + 1] - fit_mean.fitted
        fit = lsmc_conditional_expectation(design, centered[:, None] * dw[:, k] / dt,
                                           basis.ridge_threshold, basis.allow_ridge)
        k_arr[:, k] = fit.fitted

    recon = m_paths[:, :1] + np.concatenate(
        [np.zeros((paths, 1)), np.cumsum(np.einsum("pkm,pkm->pk", k_arr, dw), axis=1)], axis=1
    )
    rms = float(np.sqrt(np.mean((recon - m_paths) ** 2)))
    return MartingaleDecomposition(
        k=k_arr,
        drift_max=drift_max,
        drift_tolerance=float(drift_tol),
        drift_warning=drift_max > drift_tol,
        reconstruction_rms=rms,
    )
