"""Config-driven experiment runner.

``workbench <suite> --config file.toml [--seed N] [--paths N] [--out DIR]``
executes one of the named verification suites end to end from a single seed
and emits a JSON report plus a CSV summary.  Every numeric in the report is
a deterministic function of (config, seed); only the timestamp field and the
wall-clock block vary between reruns.  Exit code 0 iff every check passed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, presets, streams
from .backward import RegressionBasis, solve_cost_bsee, solve_first_adjoint
from .forward_see import SamplePathBundle, TestField, ito_kunita_residual, simulate_forward
from .hilbert import GalerkinOperator, heat_eigenvalues, yosida_convergence_study
from .prob_tree import TreeRandomVariable, tree_dpp_value, verify_essinf_interchange
from .relations import (
    ProbeConfig,
    check_first_order_relation,
    check_maximum_principle,
    check_second_order_relation,
    check_time_superdifferential,
    spatial_differential_probe,
)
from .second_order import TestProcessTriple, solve_second_adjoint, verify_relaxed_transposition
from .value_hjb import estimate_value_regression, hjb_residual, lq_riccati_value

SUITES = ("tree-dpp", "lq-verify", "relations", "yosida", "ito-kunita", "simulate", "second-order")


@dataclass
class ExperimentConfig:
    suite: str
    preset: str = "lq_scalar"
    galerkin_dim: int = 4
    n_steps: int = 200
    paths: int = 100_000
    seed: int = 7
    u_grid_points: int = 33
    regression_degree: int = 2
    oracle_tol: float = 0.02
    regression_tol: float = 0.05
    out_dir: str = "reports"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; choose from {SUITES}")
        for name in ("galerkin_dim", "n_steps", "paths", "u_grid_points", "regression_degree"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @classmethod
    def load(cls, suite: str, config_path: str | None, **overrides) -> "ExperimentConfig":
        data: dict = {}
        if config_path:
            try:
                import tomllib  # py311+
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(config_path, "rb") as fh:
                data = tomllib.load(fh)
        data["suite"] = suite
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        extra = {k: v for k, v in data.items() if k not in known}
        kwargs = {k: v for k, v in data.items() if k in known}
        kwargs["extra"] = extra
        return cls(**kwargs)


@dataclass
class ReportDocument:
    suite: str
    config: dict
    records: list
    overall_pass: bool
    wall_clock_s: dict
    version: str = __version__
    timestamp: str = ""


class _SuiteRun:
    """Accumulates timed check records."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.records: list[dict] = []
        self.wall: dict[str, float] = {}

    def add(self, name: str, started: float, passed: bool, **fields) -> None:
        self.wall[name] = round(time.perf_counter() - started, 3)
        rec = {"check": name, "pass": bool(passed)}
        for key, value in fields.items():
            if isinstance(value, (np.floating, np.integer)):
                value = value.item()
            rec[key] = value
        self.records.append(rec)

    def document(self) -> ReportDocument:
        return ReportDocument(
            suite=self.cfg.suite,
            config={k: v for k, v in asdict(self.cfg).items()},
            records=self.records,
            overall_pass=all(r["pass"] for r in self.records),
            wall_clock_s=self.wall,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


# ---------------------------------------------------------------- suites


def _suite_tree_dpp(run: _SuiteRun) -> None:
    cfg = run.cfg
    for name in presets.TREE_PRESET_NAMES:
        preset = presets.tree_preset(name)
        for split, t_levels in preset.splits:
            t0 = time.perf_counter()
            rep = tree_dpp_value(preset.model, split, t_levels=t_levels)
            run.add(
                f"tree_dpp/{name}/split{split}",
                t0,
                rep.dpp_gap <= 1e-12,
                gap=rep.dpp_gap,
                root_value=rep.root_value,
                policies=rep.policies_enumerated,
                checks=rep.checks,
            )
        # randomized min-closed families for the interchange identity
        t0 = time.perf_counter()
        tree = preset.model.tree
        rng = streams.generator(cfg.seed, f"essinf/{name}")
        worst = 0.0
        n_families = 10
        for _ in range(n_families):
            level = int(rng.integers(1, tree.depth + 1))
            size = int(rng.integers(2, 6))
            fam = [
                TreeRandomVariable(level, rng.normal(size=tree.nodes_at(level)))
                for _ in range(size)
            ]
            target = int(rng.integers(0, level))
            rep = verify_essinf_interchange(tree, fam, target)
            worst = max(worst, rep.max_abs_gap)
        run.add(f"essinf_interchange/{name}", t0, worst <= 1e-12,
                gap=worst, families=n_families)


def _lq_context(cfg: ExperimentConfig):
    if cfg.preset == "lq_matrix":
        spec = presets.lq_matrix_spec()
    else:
        spec = presets.lq_scalar_spec()
    model = presets.lq_model(spec, name=cfg.preset)
    fld = lq_riccati_value(spec)
    feedback = presets.lq_optimal_feedback(spec, fld)
    xi = np.full(spec.state_dim, 1.5)
    bundle = simulate_forward(
        model, feedback, xi, 0.0, spec.horizon, cfg.n_steps, cfg.paths, cfg.seed, label="lq"
    )
    basis = RegressionBasis(degree=cfg.regression_degree)
    return spec, model, fld, feedback, xi, bundle, basis


def _suite_lq_verify(run: _SuiteRun) -> None:
    cfg = run.cfg
    spec, model, fld, feedback, xi, bundle, basis = _lq_context(cfg)
    table = fld.meta["riccati_table"]
    scalar = spec.state_dim == 1

    if scalar:
        t0 = time.perf_counter()
        p0 = float(table.p_at(0.0)[0, 0])
        err = abs(p0 - np.tanh(spec.horizon))
        run.add("riccati_p0_vs_tanh", t0, err <= 1e-9, value=p0, error=err)

        t0 = time.perf_counter()
        gains = np.linspace(0.0, 0.96, cfg.u_grid_points)
        family = [
            (lambda k: (lambda t, x: -k * np.atleast_2d(x)))(k) for k in gains
        ]
        est = estimate_value_regression(
            model, family, 0.0, spec.horizon, min(cfg.n_steps, 100),
            cfg.paths, cfg.seed, basis=basis
        )
        xq = np.linspace(-2.0, 2.0, 21)[:, None]
        v_est = est.v(0.0, xq)
        v_ora = fld.v(0.0, xq)
        rel = float(np.max(np.abs(v_est - v_ora) / np.maximum(np.abs(v_ora), 1e-12)))
        run.add("value_regression_vs_riccati", t0, rel <= cfg.oracle_tol,
                max_rel_error=rel, tolerance=cfg.oracle_tol)

    t0 = time.perf_counter()
    pair = solve_cost_bsee(model, bundle, basis)
    y0 = pair.value_at_start()
    v0 = float(np.mean(fld.v(0.0, bundle.x[:, 0])))
    rel = abs(y0 - v0) / max(abs(v0), 1e-12)
    run.add("cost_bsee_vs_value", t0, rel <= cfg.oracle_tol, y0=y0, value=v0, rel_error=rel)

    t0 = time.perf_counter()
    adj = solve_first_adjoint(model, bundle, basis)
    rep = check_first_order_relation(fld, adj, model, bundle, provenance="oracle",
                                     oracle_tol=cfg.oracle_tol)
    run.add("first_order_relation", t0, rep.passed, **rep.as_record())

    t0 = time.perf_counter()
    rep = check_second_order_relation(fld, adj, model, bundle, provenance="oracle",
                                      oracle_tol=cfg.oracle_tol)
    run.add("second_order_relation", t0, rep.passed, **rep.as_record())

    t0 = time.perf_counter()
    lin = presets.lq_closed_loop_linearization(spec, fld, bundle)
    second = solve_second_adjoint(model, bundle, lin, basis)
    num = 0.0
    den = 0.0
    for k in range(bundle.n_steps + 1):
        target = -2.0 * table.p_at(float(bundle.times[k]))
        num += float(np.sum((second.p[:, k] - target) ** 2))
        den += float(np.sum(np.broadcast_to(target, second.p[:, k].shape) ** 2))
    rel = np.sqrt(num / max(den, 1e-300))
    run.add("second_adjoint_vs_value_hessian", t0, rel <= cfg.oracle_tol, rel_rms=float(rel))

    t0 = time.perf_counter()
    t_pts = np.linspace(0.0, spec.horizon, 20)
    if scalar:
        x_pts = np.linspace(-2.0, 2.0, 20)[:, None]
    else:
        rng = streams.generator(cfg.seed, "hjb/points")
        x_pts = rng.uniform(-2.0, 2.0, size=(20, spec.state_dim))
    hjb = hjb_residual(fld, model, t_pts, x_pts, u_grid=model.default_u_grid(cfg.u_grid_points))
    run.add("hjb_residual", t0, hjb.max_abs_residual <= 1e-8,
            max_abs_residual=hjb.max_abs_residual)

    t0 = time.perf_counter()
    rep = check_maximum_principle(model, adj, second, bundle,
                                  u_grid=model.default_u_grid(cfg.u_grid_points))
    run.add("maximum_principle", t0, rep.passed, **rep.as_record())


def _suite_relations(run: _SuiteRun) -> None:
    cfg = run.cfg
    spec, model, fld, feedback, xi, bundle, basis = _lq_context(cfg)
    adj = solve_first_adjoint(model, bundle, basis)
    lin = presets.lq_closed_loop_linearization(spec, fld, bundle)
    second = solve_second_adjoint(model, bundle, lin, basis)

    # probe points along the optimal trajectory with the exact pairs
    rng = streams.generator(cfg.seed, "relations/points")
    ks = sorted(rng.choice(bundle.n_steps, size=6, replace=False))
    path_ids = rng.choice(bundle.paths, size=4, replace=False)
    points = []
    for k in ks:
        t = float(bundle.times[k])
        for pid in path_ids:
            x = bundle.x[pid, k]
            p_vec = -fld.v_x(t, x[None, :])[0]
            p_mat = -fld.v_xx(t, x[None, :])[0]
            points.append((t, x, p_vec, p_mat))

    probe = ProbeConfig()
    t0 = time.perf_counter()
    rep = spatial_differential_probe(fld.v, points, "super", probe)
    run.add("spatial_super_probe", t0, rep.passed, statistic=rep.statistic,
            tolerance=rep.tolerance)
    t0 = time.perf_counter()
    rep = spatial_differential_probe(fld.v, points, "sub", probe)
    run.add("spatial_sub_probe", t0, rep.passed, statistic=rep.statistic,
            tolerance=rep.tolerance)

    # the violating perturbation must be detected
    eps = 0.1
    bad_points = [(t, x, p, pm + eps * np.eye(pm.shape[0])) for t, x, p, pm in points]
    t0 = time.perf_counter()
    rep = spatial_differential_probe(fld.v, bad_points, "super", probe)
    detected = (not rep.passed) and rep.statistic >= 0.04
    run.add("spatial_probe_counterexample_detected", t0, detected,
            ratio=rep.statistic, required=0.04)

    t0 = time.perf_counter()
    rep = check_time_superdifferential(fld, adj, second, model, bundle)
    run.add("time_superdifferential", t0, rep.passed, **rep.as_record())

    t0 = time.perf_counter()
    u_grid = model.default_u_grid(cfg.u_grid_points)
    rep = check_maximum_principle(model, adj, second, bundle, u_grid=u_grid)
    run.add("maximum_principle", t0, rep.passed, **rep.as_record())

    # a detuned control must fail the maximum principle with margin
    t0 = time.perf_counter()
    bad_fb = presets.lq_suboptimal_feedback(spec, fld, factor=0.5)
    bad_bundle = simulate_forward(model, bad_fb, xi, 0.0, spec.horizon,
                                  cfg.n_steps, cfg.paths, cfg.seed, label="lq-bad")
    bad_adj = solve_first_adjoint(model, bad_bundle, basis)
    bad_lin = presets.lq_closed_loop_linearization(spec, fld, bad_bundle)
    bad_second = solve_second_adjoint(model, bad_bundle, bad_lin, basis)
    rep = check_maximum_principle(model, bad_adj, bad_second, bad_bundle, u_grid=u_grid)
    margin = rep.extras["margin_sigma"]
    detected = (not rep.passed) and margin >= 10.0
    run.add("maximum_principle_suboptimal_detected", t0, detected,
            min_mean=rep.statistic, margin_sigma=margin)


def _suite_second_order(run: _SuiteRun) -> None:
    cfg = run.cfg
    spec, model, fld, feedback, xi, bundle, basis = _lq_context(cfg)
    lin = presets.lq_closed_loop_linearization(spec, fld, bundle)
    second = solve_second_adjoint(model, bundle, lin, basis)
    n = spec.state_dim
    m = spec.noise_dim

    xi1 = np.full(n, 0.8)
    xi2 = np.full(n, -0.5)
    v_mat = np.zeros((n, m))
    v_mat[0, 0] = 0.6
    t_zero = TestProcessTriple(xi=xi1, name="state-only")
    t_drift = TestProcessTriple(xi=xi2, u_of=lambda k: np.full(n, 0.4), name="drift")
    t_diff = TestProcessTriple(xi=np.zeros(n), v_of=lambda k: v_mat, name="diffusion")
    pairs = [(t_zero, t_zero), (t_zero, t_drift), (t_diff, t_drift), (t_diff, t_zero)]

    t0 = time.perf_counter()
    reports = verify_relaxed_transposition(model, lin, second, bundle, pairs)
    dt = bundle.dt
    allowance = 2.0 * dt
    all_ok = True
    for rep in reports:
        ok = abs(rep.residual_mean) <= 3.0 * rep.stderr + allowance
        all_ok = all_ok and ok
        run.add(f"relaxed_transposition/{rep.pair_name}", t0, ok,
                residual_mean=rep.residual_mean, stderr=rep.stderr,
                allowance=allowance)
        t0 = time.perf_counter()
    run.add("relaxed_transposition/all", t0, all_ok, pairs=len(reports))


def _suite_yosida(run: _SuiteRun) -> None:
    cfg = run.cfg
    t0 = time.perf_counter()
    op1 = GalerkinOperator(np.array([-1.0]))
    grid = np.linspace(0.0, 1.0, 101)
    study = yosida_convergence_study(op1, [9], np.array([1.0]), grid)
    closed = float(np.max(np.abs(np.exp(-grid) - np.exp(-9.0 * grid / 10.0))))
    err = abs(study.sup_errors_l2[0] - closed)
    run.add("yosida_scalar_closed_form", t0, err <= 1e-12,
            study_error=study.sup_errors_l2[0], closed_form=closed, gap=err)

    t0 = time.perf_counter()
    op = GalerkinOperator(heat_eigenvalues(cfg.galerkin_dim))
    n_list = [4, 16, 64, 256]
    rng = streams.generator(cfg.seed, "yosida/noise")
    study = yosida_convergence_study(
        op, n_list, np.ones(cfg.galerkin_dim) / np.sqrt(cfg.galerkin_dim),
        np.linspace(0.0, 0.25, 101),
        a_const=0.3 * np.ones(cfg.galerkin_dim),
        b_const=0.2 * np.eye(cfg.galerkin_dim),
        paths=2000, rng=rng,
    )
    errs = study.sup_errors_l2
    monotone = all(errs[i] >= errs[i + 1] for i in range(len(errs) - 1))
    run.add("yosida_monotone_convergence", t0, monotone,
            n_values=n_list, errors=[float(e) for e in errs])


def _ito_kunita_fields(op: GalerkinOperator, m: int) -> list[TestField]:
    n = op.dim
    c = np.linspace(1.0, 0.4, n)
    lam = op.eigenvalues

    def zeros_m(x):
        return np.zeros((x.shape[0], m))

    linear = TestField(
        F=lambda t, x, w: x @ c,
        F_x=lambda t, x, w: np.broadcast_to(c, x.shape).copy(),
        F_xx=lambda t, x, w: np.zeros((x.shape[0], n, n)),
        a_star_f_x=lambda t, x, w: np.broadcast_to(lam * c, x.shape).copy(),
        Gamma=lambda t, x, w: np.zeros(x.shape[0]),
        Phi=lambda t, x, w: zeros_m(x),
        Phi_x=lambda t, x, w: np.zeros((x.shape[0], n, m)),
        name="linear",
    )
    quad = TestField(
        F=lambda t, x, w: np.einsum("pi,pi->p", x, x) + t,
        F_x=lambda t, x, w: 2.0 * x,
        F_xx=lambda t, x, w: np.broadcast_to(2.0 * np.eye(n), (x.shape[0], n, n)).copy(),
        a_star_f_x=lambda t, x, w: 2.0 * lam * x,
        Gamma=lambda t, x, w: np.ones(x.shape[0]),
        Phi=lambda t, x, w: zeros_m(x),
        Phi_x=lambda t, x, w: np.zeros((x.shape[0], n, m)),
        name="quadratic",
    )

    def phi_rand(t, x, w):
        out = np.zeros((x.shape[0], m))
        out[:, 0] = x @ c
        return out

    def phi_x_rand(t, x, w):
        out = np.zeros((x.shape[0], n, m))
        out[:, :, 0] = c
        return out

    random_linear = TestField(
        F=lambda t, x, w: (x @ c) * (1.0 + w[:, 0]),
        F_x=lambda t, x, w: c[None, :] * (1.0 + w[:, 0])[:, None],
        F_xx=lambda t, x, w: np.zeros((x.shape[0], n, n)),
        a_star_f_x=lambda t, x, w: (lam * c)[None, :] * (1.0 + w[:, 0])[:, None],
        Gamma=lambda t, x, w: np.zeros(x.shape[0]),
        Phi=phi_rand,
        Phi_x=phi_x_rand,
        name="random-linear",
    )
    return [linear, quad, random_linear]


def _suite_ito_kunita(run: _SuiteRun) -> None:
    cfg = run.cfg
    paths = min(cfg.paths, 40_000)
    n_steps = cfg.n_steps
    setups = [
        ("flat", GalerkinOperator(np.zeros(2))),
        ("heat", GalerkinOperator(heat_eigenvalues(3))),
    ]
    for preset_name, op in setups:
        n = op.dim
        m = n
        # amplitudes decay with the spectrum (trace-class style data), so the
        # O(dt) quadrature constant stays of order one on stiff modes
        decay = 1.0 / (1.0 + np.abs(op.eigenvalues))
        a_const = 0.2 * np.maximum(decay, 0.02 / n)
        b_mat = np.diag(0.3 * np.maximum(decay, 0.02 / n))
        x0 = 0.5 * np.maximum(decay, 0.05)
        fields = _ito_kunita_fields(op, m)
        dt = 1.0 / n_steps
        allowance_scale = 4.0
        for fld in fields:
            t0 = time.perf_counter()
            rep = ito_kunita_residual(
                fld, op,
                a_proc=lambda t, w: a_const,
                b_proc=lambda t, w: b_mat,
                x0=x0, t1=1.0, n_steps=n_steps,
                paths=paths, seed=cfg.seed, noise_dim=m,
            )
            tol = 3.0 * rep.stderr + allowance_scale * dt
            ok = abs(rep.mean_residual) <= tol
            run.add(f"ito_kunita/{preset_name}/{fld.name}", t0, ok,
                    mean_residual=rep.mean_residual, stderr=rep.stderr, tolerance=tol)


def _suite_simulate(run: _SuiteRun) -> None:
    cfg = run.cfg
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    model = presets.stochastic_heat(dim=cfg.galerkin_dim, drift_scale=0.0, noise_scale=0.0)
    xi = np.zeros(cfg.galerkin_dim)
    xi[0] = 1.0
    paths = min(cfg.paths, 64)
    bundle = simulate_forward(model, np.zeros(1), xi, 0.0, 0.5, cfg.n_steps, paths,
                              cfg.seed, label="simulate-heat")
    flow = xi[None, None, :] * np.exp(
        np.outer(bundle.times, model.op.eigenvalues)
    )[None, :, :]
    dev = float(np.max(np.abs(bundle.x - flow)))
    bundle.to_binary(str(out_dir / "heat_noise_free.spb"))
    bundle.to_csv(str(out_dir / "heat_noise_free.csv"))
    rerun = simulate_forward(model, np.zeros(1), xi, 0.0, 0.5, cfg.n_steps, paths,
                             cfg.seed, label="simulate-heat")
    identical = bool(np.array_equal(bundle.x, rerun.x) and np.array_equal(bundle.dw, rerun.dw))
    run.add("simulate/heat_noise_free_flow", t0, dev <= 1e-12 and identical,
            max_flow_deviation=dev, rerun_identical=identical)

    t0 = time.perf_counter()
    wave = presets.stochastic_wave(mode_pairs=max(2, cfg.galerkin_dim // 2))
    xiw = np.zeros(wave.state_dim)
    xiw[0] = 1.0
    wb = simulate_forward(wave, np.zeros(1), xiw, 0.0, 0.5,
                          max(cfg.n_steps, 200), min(cfg.paths, 256),
                          cfg.seed, label="simulate-wave")
    finite = bool(np.all(np.isfinite(wb.x)))
    wb.to_binary(str(out_dir / "wave.spb"))
    run.add("simulate/wave_preset", t0, finite,
            final_state_rms=float(np.sqrt(np.mean(wb.x[:, -1] ** 2))))


_SUITE_IMPL = {
    "tree-dpp": _suite_tree_dpp,
    "lq-verify": _suite_lq_verify,
    "relations": _suite_relations,
    "yosida": _suite_yosida,
    "ito-kunita": _suite_ito_kunita,
    "simulate": _suite_simulate,
    "second-order": _suite_second_order,
}


def run_experiment(cfg: ExperimentConfig) -> ReportDocument:
    run = _SuiteRun(cfg)
    _SUITE_IMPL[cfg.suite](run)
    return run.document()


def emit_report(doc: ReportDocument, out_dir: str | None = None,
                formats: tuple = ("json", "csv")) -> list[str]:
    """Write the JSON report and CSV summary; file names embed suite, seed
    and timestamp.  Returns the written paths."""
    out = Path(out_dir if out_dir is not None else doc.config.get("out_dir", "reports"))
    out.mkdir(parents=True, exist_ok=True)
    stamp = doc.timestamp.replace(":", "").replace("+", "Z")
    seed = doc.config.get("seed", 0)
    base = f"{doc.suite}_seed{seed}_{stamp}"
    written = []
    if "json" in formats:
        path = out / f"{base}.json"
        with open(path, "w") as fh:
            json.dump(asdict(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")
        written.append(str(path))
    if "csv" in formats:
        path = out / f"{base}.csv"
        keys = ["check", "pass"]
        extra_keys = sorted({k for r in doc.records for k in r} - set(keys))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys + extra_keys)
            for rec in doc.records:
                writer.writerow([rec.get(k, "") for k in keys + extra_keys])
        written.append(str(path))
    return written


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="workbench", description=__doc__)
    parser.add_argument("suite", choices=SUITES)
    parser.add_argument("--config", help="TOML experiment config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--steps", type=int, dest="n_steps")
    parser.add_argument("--preset")
    parser.add_argument("--out", dest="out_dir")
    args = parser.parse_args(argv)

    cfg = ExperimentConfig.load(
        args.suite,
        args.config,
        seed=args.seed,
        paths=args.paths,
        n_steps=args.n_steps,
        preset=args.preset,
        out_dir=args.out_dir,
    )
    doc = run_experiment(cfg)
    files = emit_report(doc)
    for rec in doc.records:
        status = "PASS" if rec["pass"] else "FAIL"
        print(f"[{status}] {rec['check']}")
    print(f"overall: {'PASS' if doc.overall_pass else 'FAIL'}  ({', '.join(files)})")
    return 0 if doc.overall_pass else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
