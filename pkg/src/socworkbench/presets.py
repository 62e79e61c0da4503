"""Shipped model presets.

``lq_scalar`` and ``lq_matrix`` are the oracle problems: linear dynamics,
quadratic costs, deterministic coefficients, so the value field has the
closed form <P(t)x, x> + r(t) with P from a matrix Riccati equation.
``stochastic_heat`` is the Dirichlet-Laplacian truncation with semilinear
bounded-derivative coefficients (optionally random through the driving
path); ``stochastic_wave`` is a simulation-only first-order system in
(position, velocity) modes realized as a bounded block-rotation drift.
Tree presets pair small scenario trees with exhaustively checkable split
windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward_see import ControlModel
from .hilbert import GalerkinOperator, heat_eigenvalues
from .prob_tree import ScenarioTree, TreeModel, build_binomial_tree
from .second_order import Linearization
from .value_hjb import LQSpec, ValueField, lq_riccati_value

__all__ = [
    "lq_scalar_spec",
    "lq_matrix_spec",
    "lq_model",
    "lq_optimal_feedback",
    "lq_closed_loop_linearization",
    "stochastic_heat",
    "stochastic_wave",
    "tree_preset",
    "TREE_PRESET_NAMES",
]


def lq_scalar_spec() -> LQSpec:
    """Scalar benchmark: dX = u dt + dW, cost int (x^2 + u^2) dt, T = 1.

    Riccati solution P(t) = tanh(T - t), offset r(t) = log cosh(T - t).
    """
    return LQSpec(
        op=GalerkinOperator(np.array([0.0])),
        m_drift=np.array([[0.0]]),
        n_ctrl=np.array([[1.0]]),
        r_x=np.array([[1.0]]),
        r_u=np.array([[1.0]]),
        g_t=np.array([[0.0]]),
        b_const=np.array([[1.0]]),
        horizon=1.0,
        u_bound=3.0,
    )


def lq_matrix_spec() -> LQSpec:
    """Two-mode benchmark with decay, cross coupling and anisotropic costs."""
    return LQSpec(
        op=GalerkinOperator(np.array([-0.5, -1.0])),
        m_drift=np.array([[0.0, 0.2], [-0.1, 0.0]]),
        n_ctrl=np.eye(2),
        r_x=np.diag([1.0, 0.5]),
        r_u=np.eye(2),
        g_t=0.1 * np.eye(2),
        b_const=np.diag([0.4, 0.3]),
        horizon=1.0,
        u_bound=4.0,
    )


def lq_model(spec: LQSpec, name: str = "lq") -> ControlModel:
    """Control model realizing an LQ specification with analytic derivatives."""
    n = spec.state_dim
    m = spec.noise_dim
    d_u = spec.control_dim
    m_drift = spec.m_drift
    n_ctrl = spec.n_ctrl
    r_x = spec.r_x
    r_u = spec.r_u
    g_t = spec.g_t
    b_const = spec.b_const
    ru_inv_nt = np.linalg.solve(r_u, n_ctrl.T)

    def a(t, x, u, w):
        return x @ m_drift.T + u @ n_ctrl.T

    def b(t, x, u, w):
        return np.broadcast_to(b_const, (x.shape[0], n, m))

    def f(t, x, u, w):
        return np.einsum("pi,ij,pj->p", x, r_x, x) + np.einsum("pi,ij,pj->p", u, r_u, u)

    def h(x, w):
        return np.einsum("pi,ij,pj->p", x, g_t, x)

    def a_x(t, x, u, w):
        return np.broadcast_to(m_drift, (x.shape[0], n, n))

    def f_x(t, x, u, w):
        return 2.0 * x @ r_x.T

    def h_x(x, w):
        return 2.0 * x @ g_t.T

    def f_xx(t, x, u, w):
        return np.broadcast_to(2.0 * r_x, (x.shape[0], n, n))

    def h_xx(x, w):
        return np.broadcast_to(2.0 * g_t, (x.shape[0], n, n))

    def hamiltonian_argmin(t, x, p, q, big_b):
        # diffusion is control-free, so the minimizer is the quadratic vertex
        u_star = -0.5 * p @ ru_inv_nt.T
        return np.clip(u_star, -spec.u_bound, spec.u_bound)

    return ControlModel(
        op=spec.op,
        noise_dim=m,
        a=a,
        b=b,
        f=f,
        h=h,
        a_x=a_x,
        b_x=None,
        f_x=f_x,
        h_x=h_x,
        a_xx=None,
        b_xx=None,
        f_xx=f_xx,
        h_xx=h_xx,
        u_bound=spec.u_bound,
        control_dim=d_u,
        name=name,
        hamiltonian_argmin=hamiltonian_argmin,
    )


def lq_optimal_feedback(spec: LQSpec, fld: ValueField):
    """Riccati feedback u(t, x) = -R_u^{-1} N' P(t) x from an analytic field."""
    gain = fld.meta["feedback_gain"]

    def control(t, x, w=None):
        return -(np.atleast_2d(x) @ gain(t).T)

    return control


def lq_suboptimal_feedback(spec: LQSpec, fld: ValueField, factor: float = 0.5):
    """Deliberately detuned feedback (gain scaled by ``factor``)."""
    gain = fld.meta["feedback_gain"]

    def control(t, x, w=None):
        return -factor * (np.atleast_2d(x) @ gain(t).T)

    return control


def lq_closed_loop_linearization(spec: LQSpec, fld: ValueField, bundle) -> Linearization:
    """Linearization along the closed-loop optimal dynamics.

    Differentiating the drift, diffusion and running cost through the
    optimal feedback law u(t,x) = -G(t) x gives

        J(t) = M - N G(t),  K = 0,
        hxx(t) = -2 (R_x + G(t)' R_u G(t)),  P_T = -2 G_T,

    and -P of the resulting matrix backward equation reproduces the value
    Hessian 2 P_ric(t) on LQ problems.
    """
    gain = fld.meta["feedback_gain"]
    paths = bundle.paths
    n = spec.state_dim
    m = spec.noise_dim
    times = bundle.times

    def j(k):
        g = gain(float(times[k]))
        return np.broadcast_to(spec.m_drift - spec.n_ctrl @ g, (paths, n, n))

    def k_op(k):
        return np.zeros((paths, n, m, n))

    def hxx(k):
        g = gain(float(times[k]))
        mat = -2.0 * (spec.r_x + g.T @ spec.r_u @ g)
        return np.broadcast_to(mat, (paths, n, n))

    p_term = np.broadcast_to(-2.0 * spec.g_t, (paths, n, n)).copy()
    return Linearization(j=j, k_op=k_op, hxx=hxx, p_terminal=p_term, label="closed-loop")


def stochastic_heat(
    dim: int = 6,
    noise_scale: float = 0.25,
    drift_scale: float = 0.5,
    random_coefficients: bool = False,
    u_bound: float = 2.0,
) -> ControlModel:
    """Semilinear truncation of the heat equation with Dirichlet spectrum.

    Drift: drift_scale * tanh(x) mode-wise plus the control on the first
    mode; diffusion: diagonal noise_scale * (1 + 0.5 tanh(x_k)) per mode.
    All state derivatives are bounded, matching the standing smoothness
    assumptions.  With ``random_coefficients`` the drift is modulated by
    1 + 0.3 sin(W_1(t)), a function of the driving path up to t only.
    """
    op = GalerkinOperator(heat_eigenvalues(dim))
    n = dim
    m = dim

    def modulation(w):
        if not random_coefficients or w is None:
            return 1.0
        w_now = w[:, -1, 0] if w.ndim == 3 else w[:, 0]
        return (1.0 + 0.3 * np.sin(w_now))[:, None]

    def a(t, x, u, w):
        base = drift_scale * np.tanh(x)
        base = base * modulation(w)
        out = base.copy()
        out[:, 0] += u[:, 0]
        return out

    def b(t, x, u, w):
        diag = noise_scale * (1.0 + 0.5 * np.tanh(x))
        out = np.zeros((x.shape[0], n, m))
        idx = np.arange(n)
        out[:, idx, idx] = diag
        return out

    def f(t, x, u, w):
        return np.einsum("pi,pi->p", x, x) + np.einsum("pi,pi->p", u, u)

    def h(x, w):
        return 0.5 * np.einsum("pi,pi->p", x, x)

    def a_x(t, x, u, w):
        sech2 = 1.0 / np.cosh(x) ** 2
        out = np.zeros((x.shape[0], n, n))
        idx = np.arange(n)
        out[:, idx, idx] = drift_scale * sech2 * modulation(w)
        return out

    def b_x(t, x, u, w):
        sech2 = 1.0 / np.cosh(x) ** 2
        out = np.zeros((x.shape[0], n, m, n))
        idx = np.arange(n)
        out[:, idx, idx, idx] = noise_scale * 0.5 * sech2
        return out

    def f_x(t, x, u, w):
        return 2.0 * x

    def h_x(x, w):
        return x

    def a_xx(t, x, u, w):
        th = np.tanh(x)
        sech2 = 1.0 / np.cosh(x) ** 2
        out = np.zeros((x.shape[0], n, n, n))
        idx = np.arange(n)
        out[:, idx, idx, idx] = -2.0 * drift_scale * sech2 * th * modulation(w)
        return out

    def b_xx(t, x, u, w):
        th = np.tanh(x)
        sech2 = 1.0 / np.cosh(x) ** 2
        out = np.zeros((x.shape[0], n, m, n, n))
        idx = np.arange(n)
        out[:, idx, idx, idx, idx] = -noise_scale * sech2 * th
        return out

    def f_xx(t, x, u, w):
        return np.broadcast_to(2.0 * np.eye(n), (x.shape[0], n, n))

    def h_xx(x, w):
        return np.broadcast_to(np.eye(n), (x.shape[0], n, n))

    return ControlModel(
        op=op,
        noise_dim=m,
        a=a,
        b=b,
        f=f,
        h=h,
        a_x=a_x,
        b_x=b_x,
        f_x=f_x,
        h_x=h_x,
        a_xx=a_xx,
        b_xx=b_xx,
        f_xx=f_xx,
        h_xx=h_xx,
        u_bound=u_bound,
        control_dim=1,
        name="stochastic_heat" + ("_random" if random_coefficients else ""),
    )


def stochastic_wave(mode_pairs: int = 4, noise_scale: float = 0.2, u_bound: float = 2.0) -> ControlModel:
    """Simulation-only first-order wave system in (position, velocity) modes.

    State x = (y_1..y_K, v_1..v_K); the skew block map
    (y, v) -> (v, -mu y + control + forcing) is bounded on the truncation, so
    it is carried in the drift with A = 0 (the diagonal-generator contract is
    kept intact).  Noise and control act on the velocity block.
    """
    k = mode_pairs
    n = 2 * k
    mu = (np.arange(1, k + 1) * np.pi) ** 2
    wave = np.zeros((n, n))
    wave[:k, k:] = np.eye(k)
    wave[k:, :k] = -np.diag(mu)
    op = GalerkinOperator(np.zeros(n))
    m = k

    def a(t, x, u, w):
        out = x @ wave.T
        out = out.copy()
        out[:, k] += u[:, 0]
        return out

    def b(t, x, u, w):
        out = np.zeros((x.shape[0], n, m))
        idx = np.arange(k)
        out[:, k + idx, idx] = noise_scale
        return out

    def f(t, x, u, w):
        return np.einsum("pi,pi->p", x, x) + np.einsum("pi,pi->p", u, u)

    def h(x, w):
        return np.einsum("pi,pi->p", x, x)

    def a_x(t, x, u, w):
        return np.broadcast_to(wave, (x.shape[0], n, n))

    def f_x(t, x, u, w):
        return 2.0 * x

    def h_x(x, w):
        return 2.0 * x

    return ControlModel(
        op=op,
        noise_dim=m,
        a=a,
        b=b,
        f=f,
        h=h,
        a_x=a_x,
        f_x=f_x,
        h_x=h_x,
        u_bound=u_bound,
        control_dim=1,
        name="stochastic_wave",
    )


@dataclass
class TreePreset:
    name: str
    model: TreeModel
    splits: list  # list of (split_level, t_levels or None)


def _lq_tree_model(tree: ScenarioTree, u_grid, x0=0.0) -> TreeModel:
    return TreeModel(
        tree=tree,
        x0=np.array([float(x0)]),
        drift=lambda level, node, x, u: np.array([u]),
        diffusion=lambda level, node, x, u: np.array([1.0]),
        stage_cost=lambda level, node, x, u: float(x[0] ** 2 + u**2),
        terminal_cost=lambda node, x: float(x[0] ** 2),
        u_grid=np.asarray(u_grid, dtype=float),
    )


def _random_coeff_tree_model(tree: ScenarioTree, u_grid) -> TreeModel:
    """Node-dependent (history-dependent) drift and diffusion coefficients."""

    def drift(level, node, x, u):
        hist = tree.path_shocks(level, node)
        bias = 0.3 * float(np.mean(hist)) if hist else 0.0
        return np.array([u + bias])

    def diffusion(level, node, x, u):
        hist = tree.path_shocks(level, node)
        scale = 1.0 + (0.2 if hist and hist[-1] > 0 else 0.0)
        return np.array([scale])

    return TreeModel(
        tree=tree,
        x0=np.array([0.5]),
        drift=drift,
        diffusion=diffusion,
        stage_cost=lambda level, node, x, u: float(x[0] ** 2 + u**2),
        terminal_cost=lambda node, x: float(x[0] ** 2),
        u_grid=np.asarray(u_grid, dtype=float),
    )


TREE_PRESET_NAMES = ("tree_lq_d3", "tree_random_d4", "tree_lq_d6")


def tree_preset(name: str) -> TreePreset:
    """Shipped tree instances with enumeration-feasible split windows."""
    if name == "tree_lq_d3":
        tree = build_binomial_tree(depth=3, dt=1.0 / 3.0, shock_scale=1.0)
        model = _lq_tree_model(tree, u_grid=(-1.0, 0.0, 1.0))
        return TreePreset(name, model, splits=[(1, None), (2, None), (3, None)])
    if name == "tree_random_d4":
        tree = build_binomial_tree(depth=4, dt=0.25, shock_scale=1.0)
        model = _random_coeff_tree_model(tree, u_grid=(-1.0, 1.0))
        return TreePreset(name, model, splits=[(3, None), (4, None)])
    if name == "tree_lq_d6":
        tree = build_binomial_tree(depth=6, dt=1.0 / 6.0, shock_scale=1.0)
        model = _lq_tree_model(tree, u_grid=(-0.5, 0.5), x0=0.25)
        return TreePreset(name, model, splits=[(3, None), (5, [2, 3, 4])])
    raise ValueError(f"unknown tree preset {name!r}")
