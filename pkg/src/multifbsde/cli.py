"""Configuration-driven experiment runners.

``multifbsde <train|landscape|converge|beta-sweep|reference|plot>
--config file [--desk] [--threads n] [--check] [--output-dir dir]``

Configs are strict JSON: unknown keys are rejected with the offending key
named.  Every run writes a ``summary.json`` (config echo, build id, seed,
results, wall-clock) next to its CSV/SVG outputs; CSV files contain no
timestamps, so a rerun with the same config is byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 check-threshold failure (with ``--check``).
"""

from __future__ import annotations

import os

os.environ.setdefault("OMP_NUM_THREADS", os.environ.get("MULTIFBSDE_THREADS", "1"))
os.environ.setdefault("OPENBLAS_NUM_THREADS", os.environ.get("MULTIFBSDE_THREADS", "1"))
os.environ.setdefault("MKL_NUM_THREADS", os.environ.get("MULTIFBSDE_THREADS", "1"))

import argparse
import csv
import json
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .autodiff import EAGER
from .errors import ConfigError, DivergenceError, MultiFbsdeError
from .metrics import error_report, fit_loglog_slope
from .model import (LqParams, adr_problem, controlled_bm_problem, lq_default_params,
                    lq_problem, shift_preset)
from .network import save_checkpoint
from .reference import (cole_hopf_adr_value, cole_hopf_control_value, fd_solve_adr,
                        lq_control_cost, lq_reference_paths, lq_value, solve_riccati)
from .rollout import TimeGrid, detached_rollout
from .stochastics import sample_brownian_batch
from .svgplot import Series, save_plot
from .train import TrainConfig, evaluate_mse, held_out_batch, mse_landscape, train

EXPERIMENTS = ("train", "landscape", "converge", "beta-sweep", "reference", "plot")

_TRAIN_KEYS = {
    "m_train": int, "batch_size": int, "epochs": int, "n_steps": int, "lr0": float,
    "lr_decay_rate": float, "lr_hold_epochs": int, "y0_init": float,
    "y0_lr_scale": float, "y0_readout": str, "mode": str, "hidden": list,
    "init_scheme": str, "shared_net": bool, "eval_samples": int,
    "y0_fixed": float, "phase2_fresh_init": bool,
}

_SCHEMA = {
    "experiment": str,
    "seed": int,
    "output_dir": str,
    "problem": {
        "id": str, "horizon": float, "x0": list, "d": int, "r": float,
        "sigma": (float, list), "alpha": float, "beta": float, "gamma": float,
        "A": list, "B": list, "C": list, "R_x": list, "R_u": list, "G": list,
    },
    "shift_preset": str,
    "train": _TRAIN_KEYS,
    "landscape": {"y0_values": list, "y0_start": float, "y0_stop": float,
                  "y0_count": int, "objective": str},
    "converge": {"n_values": list},
    "beta_sweep": {"betas": list, "gamma": float, "accuracy_threshold": float},
    "reference": {"mc_samples": int, "riccati_steps": int, "fd_n_x": int,
                  "fd_cell_average": int, "fd_halfwidth": float,
                  "cost_samples": int, "cost_steps": int},
    "plot": {"series": list, "logx": bool, "logy": bool, "title": str,
             "xlabel": str, "ylabel": str, "output": str},
    "check": {"y0_rel_tol": float, "y0_abs_tol": float, "y0_rel_min": float,
              "loss_max": float, "argmin_target": float, "argmin_tol": float,
              "y0_slope_min": float, "x_slope_range": list, "y_slope_range": list,
              "oracle_rel_tol": float, "expect_deep_fail": list},
}


def _validate_keys(cfg: dict, schema: dict, path: str = "") -> None:
    for key, value in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown configuration key {path + key!r}")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"key {path + key!r} must be an object")
            _validate_keys(value, spec, path + key + ".")


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top-level config must be a JSON object")
    _validate_keys(cfg, _SCHEMA)
    if cfg.get("experiment") not in EXPERIMENTS:
        raise ConfigError(
            f"experiment must be one of {EXPERIMENTS}, got {cfg.get('experiment')!r}"
        )
    return cfg


def resolve_problem(cfg: dict):
    """Build the coefficient set; returns (problem, info dict for presets/oracles)."""
    pc = dict(cfg.get("problem", {}))
    pid = pc.pop("id", None)
    if pid == "lq":
        defaults = lq_default_params()
        params = LqParams(
            A=np.asarray(pc.pop("A", defaults.A), dtype=float),
            B=np.asarray(pc.pop("B", defaults.B), dtype=float),
            C=np.asarray(pc.pop("C", defaults.C), dtype=float),
            sigma=np.asarray(pc.pop("sigma", defaults.sigma), dtype=float),
            R_x=np.asarray(pc.pop("R_x", defaults.R_x), dtype=float),
            R_u=np.asarray(pc.pop("R_u", defaults.R_u), dtype=float),
            G=np.asarray(pc.pop("G", defaults.G), dtype=float),
            x0=np.asarray(pc.pop("x0", defaults.x0), dtype=float),
            horizon=float(pc.pop("horizon", defaults.horizon)),
        )
        _reject_leftover(pc, "lq")
        return lq_problem(params), {"id": "lq", "lq": params}
    if pid == "controlled-bm":
        d = int(pc.pop("d", 2))
        r = float(pc.pop("r", 1.0))
        sigma = float(pc.pop("sigma", 0.25))
        x0 = np.asarray(pc.pop("x0", (-0.1, 0.1)), dtype=float)
        horizon = float(pc.pop("horizon", 0.5))
        _reject_leftover(pc, "controlled-bm")
        prob = controlled_bm_problem(d=d, r=r, sigma=sigma, x0=x0, horizon=horizon)
        return prob, {"id": "controlled-bm", "r": r, "sigma": sigma}
    if pid == "adr":
        if "alpha" not in pc or "beta" not in pc:
            raise ConfigError("adr problems need problem.alpha and problem.beta")
        alpha = float(pc.pop("alpha"))
        beta = float(pc.pop("beta"))
        gamma = float(pc.pop("gamma", 0.0))
        x0 = np.asarray(pc.pop("x0", (-0.1, 0.1)), dtype=float)
        horizon = float(pc.pop("horizon", 0.5))
        _reject_leftover(pc, "adr")
        prob = adr_problem(alpha=alpha, beta=beta, gamma=gamma, x0=x0, horizon=horizon)
        return prob, {"id": "adr", "alpha": alpha, "beta": beta, "gamma": gamma}
    raise ConfigError(f"problem.id must be 'lq', 'controlled-bm' or 'adr', got {pid!r}")


def _reject_leftover(pc: dict, pid: str) -> None:
    if pc:
        raise ConfigError(f"keys {sorted(pc)} do not apply to problem.id={pid!r}")


def resolve_shifts(info: dict, preset_id: str):
    if not preset_id:
        return None
    pid = info["id"]
    if pid == "lq":
        return shift_preset("lq", preset_id, lq=info["lq"])
    if pid == "controlled-bm":
        return shift_preset("controlled-bm", preset_id, r=info["r"])
    return shift_preset("adr", preset_id, beta=info["beta"])


def build_train_config(cfg: dict, desk: bool) -> tuple[TrainConfig, dict]:
    """TrainConfig from the config's train section; desk overrides the budget."""
    tc = dict(cfg.get("train", {}))
    extras = {"y0_fixed": tc.pop("y0_fixed", None),
              "phase2_fresh_init": tc.pop("phase2_fresh_init", False),
              "pipeline": False}
    mode = tc.get("mode", "deep-fbsde")
    if mode == "phase1+phase2":
        extras["pipeline"] = True
        tc["mode"] = "phase1"
    if "hidden" in tc:
        tc["hidden"] = tuple(int(w) for w in tc["hidden"])
    train_cfg = TrainConfig(seed=int(cfg.get("seed", 0)), **tc)
    if desk:
        train_cfg = train_cfg.desk()
    return train_cfg, extras


def _git_build_id() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def write_summary(outdir: str, cfg: dict, results: dict, wall: float) -> dict:
    summary = {
        "build": {"package": "multifbsde", "version": __version__,
                  "git": _git_build_id(), "python": sys.version.split()[0]},
        "config": cfg,
        "seed": cfg.get("seed", 0),
        "results": results,
        "wall_seconds": wall,
    }
    with open(os.path.join(outdir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _r(x) -> str:
    return repr(float(x))


def _reference_value(problem, info: dict, cfg: dict):
    """The scalar oracle value at (0, x0) for the configured problem, or None."""
    rc = cfg.get("reference", {})
    seed = int(cfg.get("seed", 0))
    if info["id"] == "lq":
        sol = solve_riccati(info["lq"], int(rc.get("riccati_steps", 160 * 2**7)))
        return lq_value(0.0, info["lq"].x0, sol), "riccati"
    g_np = lambda pts: problem.g(EAGER, pts)
    if info["id"] == "controlled-bm":
        val, se = cole_hopf_control_value(0.0, problem.x0, g_np, info["r"],
                                          info["sigma"], problem.horizon,
                                          int(rc.get("mc_samples", 2**20)),
                                          seed + 424242)
        return val, f"cole-hopf-mc (se {se:.2e})"
    sol = fd_solve_adr(info["alpha"], info["beta"], info["gamma"], g_np,
                       n_x=int(rc.get("fd_n_x", 401)),
                       cell_average=int(rc.get("fd_cell_average", 4)),
                       halfwidth=float(rc.get("fd_halfwidth", 2.0)),
                       horizon=problem.horizon)
    return sol.value_at(problem.x0), "finite-difference"


def cmd_train(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    problem, info = resolve_problem(cfg)
    train_cfg, extras = build_train_config(cfg, desk)
    shifts = resolve_shifts(info, cfg.get("shift_preset", ""))
    results = {}

    if train_cfg.mode == "phase1" and shifts is None:
        raise ConfigError("phase1 requires a shift_preset")

    if extras["pipeline"]:
        nets1, y0_star, hist1 = train(problem, train_cfg, shifts=shifts)
        hist1.to_csv(os.path.join(outdir, "history_phase1.csv"), include_seconds=False)
        save_checkpoint(nets1, os.path.join(outdir, "checkpoint_phase1"))
        cfg2 = replace(train_cfg, mode="phase2")
        warm = None if extras["phase2_fresh_init"] else nets1
        nets, y0, hist = train(problem, cfg2, y0_fixed=y0_star, init_nets=warm)
        results["phase1_y0"] = y0_star
        results["phase1_final_loss"] = hist1.losses[-1]
    elif train_cfg.mode == "phase2":
        if extras["y0_fixed"] is None:
            raise ConfigError("phase2 requires train.y0_fixed")
        nets, y0, hist = train(problem, train_cfg, y0_fixed=extras["y0_fixed"])
    else:
        nets, y0, hist = train(problem, train_cfg, shifts=shifts)

    hist.to_csv(os.path.join(outdir, "history.csv"), include_seconds=False)
    save_checkpoint(nets, os.path.join(outdir, "checkpoint"))

    eval_batch = held_out_batch(problem, train_cfg)
    heldout = evaluate_mse(problem, nets, y0, eval_batch)
    results.update({"y0": y0, "final_train_loss": hist.losses[-1],
                    "heldout_mse": heldout, "iterations": len(hist)})

    ref, ref_kind = _reference_value(problem, info, cfg)
    results["reference_value"] = ref
    results["reference_kind"] = ref_kind
    results["y0_abs_error"] = abs(y0 - ref)
    results["y0_rel_error"] = abs(y0 - ref) / abs(ref) if ref != 0 else float("nan")

    if info["id"] == "lq":
        sol = solve_riccati(info["lq"], 160 * 2**7)
        grid = TimeGrid(train_cfg.n_steps, problem.horizon)
        ref_paths = lq_reference_paths(info["lq"], sol, eval_batch, grid)
        approx = detached_rollout(problem, nets, y0, eval_batch, grid)
        rep = error_report(approx, ref_paths, y0, ref)
        rep.to_csv(os.path.join(outdir, "error_report.csv"))
        results["error_report"] = {
            "x_error_s2": rep.x_error_s2, "y_error_s2": rep.y_error_s2,
            "z_error_h2": rep.z_error_h2,
        }

    write_summary(outdir, cfg, results, time.perf_counter() - t0)
    if check:
        rules = cfg.get("check", {})
        ok = True
        if "y0_rel_tol" in rules:
            ok &= results["y0_rel_error"] < rules["y0_rel_tol"]
        if "y0_abs_tol" in rules:
            ok &= results["y0_abs_error"] < rules["y0_abs_tol"]
        if "y0_rel_min" in rules:
            ok &= results["y0_rel_error"] > rules["y0_rel_min"]
        if "loss_max" in rules:
            ok &= results["heldout_mse"] < rules["loss_max"]
        if not ok:
            print("check failed:", json.dumps(results, default=float), file=sys.stderr)
            return 4
    return 0


def cmd_landscape(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    problem, info = resolve_problem(cfg)
    train_cfg, _ = build_train_config(cfg, desk)
    lc = cfg.get("landscape", {})
    if "y0_values" in lc:
        y0_grid = [float(v) for v in lc["y0_values"]]
    else:
        try:
            y0_grid = list(np.linspace(float(lc["y0_start"]), float(lc["y0_stop"]),
                                       int(lc["y0_count"])))
        except KeyError as missing:
            raise ConfigError(f"landscape needs y0_values or y0_start/y0_stop/y0_count "
                              f"(missing {missing})") from None
    objective = lc.get("objective", "deep-fbsde")
    shifts = resolve_shifts(info, cfg.get("shift_preset", "")) \
        if objective == "phase1" else None
    if objective == "phase1" and shifts is None:
        raise ConfigError("landscape objective 'phase1' requires a shift_preset")

    curve = mse_landscape(problem, y0_grid, train_cfg, shifts=shifts)
    _write_csv(os.path.join(outdir, "landscape.csv"), ["y0", "mse"],
               [[_r(a), _r(b)] for a, b in curve])
    save_plot(os.path.join(outdir, "landscape.svg"),
              [Series("trained MSE", [a for a, _ in curve], [b for _, b in curve],
                      marker=True)],
              title="terminal MSE with pinned initial value",
              xlabel="y0", ylabel="MSE", logy=True)
    argmin = min(curve, key=lambda ab: ab[1])[0]
    results = {"argmin_y0": argmin, "points": len(curve)}
    write_summary(outdir, cfg, results, time.perf_counter() - t0)
    if check:
        rules = cfg.get("check", {})
        if "argmin_target" in rules:
            if abs(argmin - rules["argmin_target"]) > rules.get("argmin_tol", 1.0):
                print(f"check failed: argmin {argmin} vs target "
                      f"{rules['argmin_target']}", file=sys.stderr)
                return 4
    return 0


def cmd_converge(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    problem, info = resolve_problem(cfg)
    if info["id"] != "lq":
        raise ConfigError("the convergence experiment needs problem.id='lq' "
                          "(it compares against the Riccati reference)")
    train_cfg, extras = build_train_config(cfg, desk)
    shifts = resolve_shifts(info, cfg.get("shift_preset", "K3"))
    n_values = [int(n) for n in cfg.get("converge", {}).get("n_values", [20, 40, 80])]
    if not n_values:
        raise ConfigError("converge.n_values must be nonempty")

    sol = solve_riccati(info["lq"], 160 * 2**7)
    y0_ref = lq_value(0.0, info["lq"].x0, sol)
    rows, table = [], []
    for n in n_values:
        cfg_n = replace(train_cfg, n_steps=n, mode="phase1")
        nets1, y0_star, _ = train(problem, cfg_n, shifts=shifts)
        cfg2 = replace(cfg_n, mode="phase2")
        warm = None if extras["phase2_fresh_init"] else nets1
        nets2, _, _ = train(problem, cfg2, y0_fixed=y0_star, init_nets=warm)
        grid = TimeGrid(n, problem.horizon)
        eval_batch = held_out_batch(problem, replace(cfg_n, n_steps=n))
        ref_paths = lq_reference_paths(info["lq"], sol, eval_batch, grid)
        approx = detached_rollout(problem, nets2, y0_star, eval_batch, grid)
        rep = error_report(approx, ref_paths, y0_star, y0_ref)
        rows.append((grid.h, rep))
        table.append([n, _r(grid.h), _r(y0_star), _r(rep.y0_abs_error),
                      _r(rep.x_error_s2), _r(rep.y_error_s2), _r(rep.z_error_h2)])
    _write_csv(os.path.join(outdir, "convergence.csv"),
               ["n_steps", "h", "y0_star", "y0_abs_error", "x_error_s2",
                "y_error_s2", "z_error_h2"], table)

    slopes = {}
    for name, pick in (("y0", lambda r: r.y0_abs_error), ("x", lambda r: r.x_error_s2),
                       ("y", lambda r: r.y_error_s2), ("z", lambda r: r.z_error_h2)):
        try:
            slope, _ = fit_loglog_slope([(h, pick(rep)) for h, rep in rows])
        except MultiFbsdeError:
            slope = float("nan")
        slopes[name] = slope
    _write_csv(os.path.join(outdir, "slopes.csv"), ["quantity", "slope"],
               [[k, _r(v)] for k, v in slopes.items()])
    hs = [h for h, _ in rows]
    save_plot(os.path.join(outdir, "convergence.svg"),
              [Series("|y0 - ref|", hs, [r.y0_abs_error for _, r in rows], marker=True),
               Series("X error (sup norm)", hs, [r.x_error_s2 for _, r in rows], marker=True),
               Series("Y error (sup norm)", hs, [r.y_error_s2 for _, r in rows], marker=True),
               Series("Z error (avg norm)", hs, [r.z_error_h2 for _, r in rows], marker=True)],
              title="empirical convergence", xlabel="h", ylabel="error",
              logx=True, logy=True)
    results = {"slopes": slopes, "y0_reference": y0_ref,
               "y0_errors": [r.y0_abs_error for _, r in rows]}
    write_summary(outdir, cfg, results, time.perf_counter() - t0)
    if check:
        rules = cfg.get("check", {})
        ok = True
        if "y0_slope_min" in rules:
            errs = [r.y0_abs_error for _, r in rows]
            ok &= all(errs[i] > errs[i + 1] for i in range(len(errs) - 1))
            ok &= slopes["y0"] >= rules["y0_slope_min"]
        if "x_slope_range" in rules:
            lo, hi = rules["x_slope_range"]
            ok &= lo <= slopes["x"] <= hi
        if "y_slope_range" in rules:
            lo, hi = rules["y_slope_range"]
            ok &= lo <= slopes["y"] <= hi
        if not ok:
            print("check failed:", json.dumps(results, default=float), file=sys.stderr)
            return 4
    return 0


def cmd_beta_sweep(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    sc = cfg.get("beta_sweep", {})
    betas = [float(b) for b in sc.get("betas", [0.00125, 0.25, 1.0, 5.0])]
    gamma = float(sc.get("gamma", 1.0))
    threshold = float(sc.get("accuracy_threshold", 0.1))
    base_pc = dict(cfg.get("problem", {"id": "adr", "alpha": 0.0315, "beta": 1.0}))
    if base_pc.get("id") != "adr":
        raise ConfigError("the beta sweep needs problem.id='adr'")
    train_cfg, _ = build_train_config(cfg, desk)
    rc = cfg.get("reference", {})

    table, results = [], []
    for beta in betas:
        pc = dict(base_pc, beta=beta, gamma=gamma)
        problem, info = resolve_problem({"problem": pc})
        g_np = lambda pts: problem.g(EAGER, pts)
        sol = fd_solve_adr(info["alpha"], beta, gamma, g_np,
                           n_x=int(rc.get("fd_n_x", 401)),
                           cell_average=int(rc.get("fd_cell_average", 4)),
                           horizon=problem.horizon)
        ref = sol.value_at(problem.x0)
        shifts = shift_preset("adr", "K2", beta=beta)
        _, y0_deep, _ = train(problem, replace(train_cfg, mode="deep-fbsde"))
        _, y0_multi, _ = train(problem, replace(train_cfg, mode="phase1"), shifts=shifts)
        rel_deep = abs(y0_deep - ref) / abs(ref)
        rel_multi = abs(y0_multi - ref) / abs(ref)
        results.append({"beta": beta, "reference": ref, "y0_deep": y0_deep,
                        "rel_deep": rel_deep, "deep_accurate": rel_deep <= threshold,
                        "y0_multi": y0_multi, "rel_multi": rel_multi,
                        "multi_accurate": rel_multi <= threshold})
        table.append([_r(beta), _r(ref), _r(y0_deep), _r(rel_deep),
                      int(rel_deep <= threshold), _r(y0_multi), _r(rel_multi),
                      int(rel_multi <= threshold)])
    _write_csv(os.path.join(outdir, "beta_sweep.csv"),
               ["beta", "reference", "y0_deep", "rel_err_deep", "deep_accurate",
                "y0_multi", "rel_err_multi", "multi_accurate"], table)
    save_plot(os.path.join(outdir, "beta_sweep.svg"),
              [Series("reference", betas, [r["reference"] for r in results], marker=True),
               Series("joint training", betas, [max(r["y0_deep"], -1.0) for r in results],
                      marker=True),
               Series("two-phase", betas, [max(r["y0_multi"], -1.0) for r in results],
                      marker=True)],
              title="initial values across the gradient-coupling sweep",
              xlabel="beta", ylabel="y0", logx=True)
    write_summary(outdir, cfg, {"rows": results, "threshold": threshold},
                  time.perf_counter() - t0)
    if check:
        rules = cfg.get("check", {})
        ok = all(r["multi_accurate"] for r in results)
        for beta in rules.get("expect_deep_fail", []):
            row = next((r for r in results if r["beta"] == beta), None)
            ok &= row is not None and not row["deep_accurate"]
        if not ok:
            print("check failed:", json.dumps(results, default=float), file=sys.stderr)
            return 4
    return 0


def cmd_reference(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    problem, info = resolve_problem(cfg)
    rc = cfg.get("reference", {})
    seed = int(cfg.get("seed", 0))
    rows, results = [], {}

    if info["id"] == "lq":
        p = info["lq"]
        sol = solve_riccati(p, int(rc.get("riccati_steps", 160 * 2**7)))
        value = lq_value(0.0, p.x0, sol)
        sol.to_csv(os.path.join(outdir, "riccati.csv"))
        grid = TimeGrid(int(rc.get("cost_steps", 160)), p.horizon)
        batch = sample_brownian_batch(seed + 99, int(rc.get("cost_samples", 2**14)),
                                      grid.n_steps, p.d, grid.h)
        cost, se = lq_control_cost(p, sol, batch, grid)
        rows.append(["riccati-value", _r(value), ""])
        rows.append(["controlled-cost-mc", _r(cost), _r(se)])
        results = {"riccati_value": value, "mc_cost": cost, "mc_cost_se": se,
                   "consistency_sigmas": abs(cost - value) / se}
    elif info["id"] == "controlled-bm":
        g_np = lambda pts: problem.g(EAGER, pts)
        val, se = cole_hopf_control_value(0.0, problem.x0, g_np, info["r"],
                                          info["sigma"], problem.horizon,
                                          int(rc.get("mc_samples", 2**20)), seed + 424242)
        rows.append(["cole-hopf-mc", _r(val), _r(se)])
        results = {"mc_value": val, "mc_se": se}
    else:
        g_np = lambda pts: problem.g(EAGER, pts)
        sol = fd_solve_adr(info["alpha"], info["beta"], info["gamma"], g_np,
                           n_x=int(rc.get("fd_n_x", 401)),
                           cell_average=int(rc.get("fd_cell_average", 4)),
                           halfwidth=float(rc.get("fd_halfwidth", 2.0)),
                           horizon=problem.horizon)
        fd_val = sol.value_at(problem.x0)
        rows.append(["finite-difference", _r(fd_val), ""])
        results = {"fd_value": fd_val}
        if info["gamma"] == 0.0:
            mc_val, se = cole_hopf_adr_value(0.0, problem.x0, g_np, info["alpha"],
                                             info["beta"], problem.horizon,
                                             int(rc.get("mc_samples", 2**20)),
                                             seed + 424242)
            rows.append(["cole-hopf-mc", _r(mc_val), _r(se)])
            results.update({"mc_value": mc_val, "mc_se": se,
                            "agreement_rel": abs(fd_val - mc_val) / abs(mc_val)})

    _write_csv(os.path.join(outdir, "reference.csv"),
               ["method", "value", "stderr"], rows)
    write_summary(outdir, cfg, results, time.perf_counter() - t0)
    if check:
        rules = cfg.get("check", {})
        tol = rules.get("oracle_rel_tol")
        if tol is not None and "agreement_rel" in results:
            combined = max(tol, 3.0 * results["mc_se"] / abs(results["mc_value"]))
            if results["agreement_rel"] > combined:
                print("check failed: oracle disagreement", file=sys.stderr)
                return 4
        if tol is not None and "consistency_sigmas" in results:
            if results["consistency_sigmas"] > 3.0:
                print("check failed: cost vs value beyond 3 standard errors",
                      file=sys.stderr)
                return 4
    return 0


def cmd_plot(cfg: dict, outdir: str, desk: bool, check: bool) -> int:
    t0 = time.perf_counter()
    pc = cfg.get("plot", {})
    specs = pc.get("series")
    if not specs:
        raise ConfigError("plot.series must be a nonempty list")
    series = []
    for spec in specs:
        path = spec.get("csv")
        xcol, ycol = spec.get("x"), spec.get("y")
        if not (path and xcol and ycol):
            raise ConfigError("each plot series needs csv, x and y")
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                cols = reader.fieldnames or []
                for col in (xcol, ycol):
                    if col not in cols:
                        raise ConfigError(
                            f"column {col!r} not in {path} (has {cols})"
                        )
                xs, ys = [], []
                for row in reader:
                    if row[xcol] == "" or row[ycol] == "":
                        continue
                    xs.append(float(row[xcol]))
                    ys.append(float(row[ycol]))
        except FileNotFoundError:
            raise ConfigError(f"csv file not found: {path}") from None
        series.append(Series(spec.get("label", ycol), xs, ys,
                             marker=bool(spec.get("marker", False))))
    out = os.path.join(outdir, pc.get("output", "plot.svg"))
    save_plot(out, series, title=pc.get("title", ""), xlabel=pc.get("xlabel", ""),
              ylabel=pc.get("ylabel", ""), logx=bool(pc.get("logx", False)),
              logy=bool(pc.get("logy", False)))
    write_summary(outdir, cfg, {"output": os.path.basename(out),
                                "series": len(series)}, time.perf_counter() - t0)
    return 0


_RUNNERS = {
    "train": cmd_train,
    "landscape": cmd_landscape,
    "converge": cmd_converge,
    "beta-sweep": cmd_beta_sweep,
    "reference": cmd_reference,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="multifbsde",
        description="Deep multi-FBSDE experiments with reference oracles.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--desk", action="store_true",
                        help="desk-scale budget (2^16 samples, batch 2^10, 4 epochs)")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("MULTIFBSDE_THREADS", "1")),
                        help="worker threads; 1 guarantees bit-exact reruns")
    parser.add_argument("--check", action="store_true",
                        help="apply the config's check thresholds; exit 4 on failure")
    parser.add_argument("--output-dir", default=None,
                        help="override the config's output_dir")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if cfg["experiment"] != args.experiment:
            raise ConfigError(
                f"config is for experiment {cfg['experiment']!r}, not {args.experiment!r}"
            )
        outdir = (args.output_dir or os.environ.get("MULTIFBSDE_OUTPUT_DIR")
                  or cfg.get("output_dir") or ".")
        os.makedirs(outdir, exist_ok=True)
        return _RUNNERS[args.experiment](cfg, outdir, args.desk, args.check)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
