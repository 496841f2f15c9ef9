"""Command-line harness: ``dpsaddle {solve,calibrate,sweep,diagnose}``.

Configuration is a flat ``key = value`` file (``#`` starts a comment) plus
``--set key=value`` overrides, which win.  Instance parameters use the
``problem.`` prefix, e.g. ``problem.d_w = 5``.  Every output file starts with
the resolved configuration as ``# key=value`` lines; the only
non-deterministic line is the ``#@ generated=...`` timestamp.
"""

from __future__ import annotations

import argparse
import ast
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .geometry import DomainError, LpGeometry, ProductGeometry
from .privacy import PrivacyBudget, calibrate
from .problems import INSTANCE_KINDS, make_instance, sample_dataset
from .solvers import ConfigError, ConvergenceError, ExactSubroutine, DPSubroutine, build_schedule, \
    lambda_default, recursive_regularization
from .evaluation import (
    SweepConfig,
    rate_sweep,
    run_pipeline,
    sp_gap,
    stability_generalization_probe,
    uas_probe,
    vi_gap,
)

REQUIRED = object()

# key -> (parser, default, description); defaults of None mean "derived"
COMMON = {
    "seed": (int, 0, "64-bit seed; data uses spawn key (0,), round t of the solver (1, t)"),
    "timing": (str, "off", "on: record wall-clock milliseconds (breaks byte-identical output)"),
}
SCHEMA = {
    "solve": {
        "problem": (str, REQUIRED, "instance kind"),
        "n": (int, REQUIRED, "dataset size"),
        "epsilon": (float, REQUIRED, "privacy epsilon"),
        "delta": (float, 1e-5, "privacy delta"),
        "solver": (str, None, "rr_ssp | rr_svi | mirror_prox_only (default by problem kind)"),
        "subroutine": (str, "dp", "dp | exact (exact: noiseless exact inner solves)"),
        "noiseless": (bool, False, "zero the privacy noise (testing only)"),
        "lambda": (float, None, "regularization strength (default: lambda_default)"),
        "lambda_constant": (float, 48.0, "leading constant of lambda_default"),
        "rounds": (int, None, "override the number of recursion rounds"),
        "accountant_constant": (float, 1.0, "constant c of the noise calibration"),
        "bound_factor": (float, 5.0, "step size uses bound_factor * L"),
    },
    "calibrate": {
        "epsilon": (float, REQUIRED, "privacy epsilon"),
        "n": (int, REQUIRED, "samples seen by the private solver"),
        "delta": (float, 1e-5, "privacy delta"),
        "d": (int, None, "total dimension, split evenly when d_w / d_theta are absent"),
        "d_w": (int, None, "primal dimension"),
        "d_theta": (int, None, "dual dimension"),
        "p": (float, 2.0, "primal norm exponent"),
        "q": (float, 2.0, "dual norm exponent"),
        "lipschitz_w": (float, 1.0, "L_w"),
        "lipschitz_theta": (float, 1.0, "L_theta"),
        "radius_w": (float, 1.0, "D_w"),
        "radius_theta": (float, 1.0, "D_theta"),
        "accountant_constant": (float, 1.0, "constant c"),
    },
    "sweep": {
        "problem": (str, "bilinear_ssp", "instance kind"),
        "ns": (list, [256, 512, 1024, 2048, 4096, 8192], "comma-separated dataset sizes"),
        "dims": (list, [5], "comma-separated block dimensions"),
        "epsilons": (list, [1.0], "comma-separated epsilons"),
        "delta": (float, 1e-5, "privacy delta"),
        "seeds": (int, 20, "seeds per cell"),
        "solver": (str, "rr_ssp", "rr_ssp | rr_svi | mirror_prox_only"),
        "lambda_constant": (float, 1.0, "leading constant of lambda_default"),
        "accountant_constant": (float, 1.0, "constant c"),
        "bound_factor": (float, 3.0, "step size uses bound_factor * L"),
        "noise_share_threshold": (float, 0.1, "cells below this privacy share enter the slope fit"),
        "parallel": (int, 1, "worker processes"),
    },
    "diagnose": {
        "problem": (str, REQUIRED, "instance kind"),
        "suite": (str, "all", "gaps | uas | stability | all"),
        "n": (int, 50, "dataset size for the probes"),
        "trials": (int, 200, "adjacent pairs / Monte Carlo datasets"),
        "lambda": (float, 1.0, "regularization strength"),
        "mu": (float, 1.0, "strong-monotonicity weight of the stability probe"),
    },
}
BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
              "false": False, "no": False, "off": False, "0": False}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _parse_value(kind, text: str):
    if kind is bool:
        if text.lower() not in BOOL_WORDS:
            raise ValueError(f"expected a boolean, got {text!r}")
        return BOOL_WORDS[text.lower()]
    if kind is list:
        return [ast.literal_eval(tok.strip()) for tok in text.split(",") if tok.strip()]
    return kind(text)


def _parse_param(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def resolve(command: str, raw: dict) -> dict:
    """Fill defaults and validate; raises ConfigError listing every violation."""
    schema = {**COMMON, **SCHEMA[command]}
    resolved, violations = {}, []
    for key, value in raw.items():
        if key.startswith("problem."):
            resolved[key] = _parse_param(value) if isinstance(value, str) else value
        elif key not in schema:
            violations.append(f"unknown key {key!r} for {command}")
    for key, (kind, default, _) in schema.items():
        if key in raw:
            try:
                resolved[key] = _parse_value(kind, raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError as exc:
                violations.append(f"{key}: {exc}")
        elif default is REQUIRED:
            violations.append(f"missing required key {key!r}")
        else:
            resolved[key] = default
    if violations:
        raise ConfigError(violations)
    violations += _semantic_checks(command, resolved)
    if violations:
        raise ConfigError(violations)
    return resolved


def _semantic_checks(command, cfg) -> list:
    out = []
    if "epsilon" in cfg and not cfg["epsilon"] > 0:
        out.append("epsilon must be positive (privacy budget)")
    if "delta" in cfg and not 0 < cfg["delta"] <= 1:
        out.append("delta must lie in (0, 1] (privacy budget)")
    if "n" in cfg and cfg["n"] < 1:
        out.append("n must be at least 1")
    if cfg.get("problem") is not None and cfg["problem"] not in INSTANCE_KINDS:
        out.append(f"problem must be one of {', '.join(INSTANCE_KINDS)}")
    if cfg.get("timing") not in ("on", "off"):
        out.append("timing must be on or off")
    if command == "solve":
        if cfg["solver"] not in (None, "rr_ssp", "rr_svi", "mirror_prox_only"):
            out.append("solver must be rr_ssp, rr_svi or mirror_prox_only")
        if cfg["subroutine"] not in ("dp", "exact"):
            out.append("subroutine must be dp or exact")
    if command == "diagnose" and cfg["suite"] not in ("gaps", "uas", "stability", "all"):
        out.append("suite must be gaps, uas, stability or all")
    return out


def _instance(cfg):
    params = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("problem.")}
    return make_instance(cfg["problem"], **params)


def _meta_lines(cfg: dict, command: str) -> list[str]:
    lines = [f"# command={command}"]
    lines += [f"# {k}={_fmt(v)}" for k, v in sorted(cfg.items())]
    return lines


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, np.ndarray):
        return _fmt(v.tolist())
    return str(v)


class Outputs:
    def __init__(self, out_dir: Path, cfg: dict, command: str):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = _meta_lines(cfg, command)
        self.stamp = f"#@ generated={datetime.now(timezone.utc).isoformat(timespec='seconds')}"

    def write_csv(self, name: str, header: list, rows: list) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        self._write(name, buf.getvalue())

    def write_text(self, name: str, body: str) -> None:
        self._write(name, body)

    def _write(self, name, body):
        head = "\n".join([self.stamp] + self.meta) + "\n"
        (self.dir / name).write_text(head + body)


def _wall(cfg, ms):
    return round(ms, 3) if cfg["timing"] == "on" else 0


# ---------------------------------------------------------------------------


def cmd_calibrate(cfg, out: Outputs) -> dict:
    d_w, d_t = cfg["d_w"], cfg["d_theta"]
    if d_w is None and d_t is None:
        if cfg["d"] is None:
            raise ConfigError("calibrate needs d or d_w / d_theta")
        d_w = cfg["d"] - cfg["d"] // 2
        d_t = cfg["d"] // 2
    d_w = d_w if d_w is not None else cfg["d"] - d_t
    d_t = d_t if d_t is not None else cfg["d"] - d_w
    gw = LpGeometry(cfg["p"], d_w, cfg["radius_w"])
    gt = LpGeometry(cfg["q"], d_t, cfg["radius_theta"]) if d_t else None
    cal = calibrate(PrivacyBudget(cfg["epsilon"], cfg["delta"]), ProductGeometry(gw, gt),
                    cfg["lipschitz_w"], cfg["lipschitz_theta"], cfg["n"], d_w, d_t, cfg["accountant_constant"])
    fields = cal.as_dict()
    out.write_csv("summary.csv", list(fields), [list(fields.values())])
    out.write_text("meta.txt", "".join(f"{k}={_fmt(v)}\n" for k, v in fields.items()))
    print(f"T={cal.iterations} m={cal.batch_size} sigma_w={cal.sigma_w:.5f} sigma_theta={cal.sigma_theta:.5f} "
          f"kappa_tilde={cal.kappa_tilde:g} preconditions_met={cal.accountant_preconditions_met}")
    return fields


def cmd_solve(cfg, out: Outputs) -> dict:
    inst = _instance(cfg)
    solver = cfg["solver"] or ("rr_ssp" if inst.is_ssp else "rr_svi")
    data = sample_dataset(inst, cfg["n"], cfg["seed"])
    budget = PrivacyBudget(cfg["epsilon"], cfg["delta"])
    mode = "ssp" if solver == "rr_ssp" else "svi"
    if cfg["subroutine"] == "exact":
        if solver == "mirror_prox_only":
            raise ConfigError("the exact subroutine needs a recursive solver (rr_ssp or rr_svi)")
        n_prime = build_schedule(cfg["n"], 1, 1, 1, 1, mode, rounds=1, enforce_floor=False).chunk_size
        lam = cfg["lambda"] or lambda_default(mode, 0.0, inst.geometry.kappa, inst.operator_bound, n_prime,
                                              inst.diameter, inst.operator_lipschitz if mode == "svi" else 0.0,
                                              cfg["lambda_constant"], cfg["n"], capped=True)
        sub = ExactSubroutine()
        result = recursive_regularization(data, inst, sub, lam, mode, rounds=cfg["rounds"])
        point, evals, rounds, anchors = result.point, 0, result.schedule.rounds, result.anchors
        gap = (sp_gap(inst, *inst.split(point)) if mode == "ssp" and inst.has_loss else vi_gap(inst, point))
        wall = sum(r.wall_ms for r in result.runs)
    else:
        import time

        t0 = time.perf_counter()
        gap, evals, point, detail = run_pipeline(
            inst, data, budget, cfg["seed"], solver=solver, lambda_constant=cfg["lambda_constant"],
            accountant_constant=cfg["accountant_constant"], bound_factor=cfg["bound_factor"],
            noiseless=cfg["noiseless"], lam=cfg["lambda"], rounds=cfg["rounds"])
        wall = 1e3 * (time.perf_counter() - t0)
        rounds = detail.get("rounds", 1)
        lam = detail.get("lambda")
        anchors = None
    dist = inst.geometry.norm(point - inst.population_truth().point)
    coords = [f"z{i}" for i in range(inst.dim)]
    trace_rows = []
    if anchors is not None:
        for t, a in enumerate(anchors):
            g = sp_gap(inst, *inst.split(a)) if mode == "ssp" and inst.has_loss else vi_gap(inst, a)
            trace_rows.append([t, 0, *a.tolist(), g.gap_value])
    else:
        trace_rows.append([rounds, 0, *point.tolist(), gap.gap_value])
    out.write_csv("run.csv", ["round", "iteration", *coords, "gap"], trace_rows)
    summary = {"kind": inst.kind, "n": cfg["n"], "d": inst.dim, "epsilon": cfg["epsilon"], "delta": cfg["delta"],
               "seed": cfg["seed"], "gap": gap.gap_value, "grad_evals": evals, "wall_ms": _wall(cfg, wall),
               "gap_method": gap.method, "rounds": rounds, "lambda": lam, "distance_to_truth": dist,
               "distance_bound": inst.diameter / 2.0**rounds}
    out.write_csv("summary.csv", list(summary), [list(summary.values())])
    out.write_text("plotdata.txt", "".join(f"{r[0]} {r[-1]!r} 0\n" for r in trace_rows))
    out.write_text("meta.txt", f"solver={solver}\nsubroutine={cfg['subroutine']}\n")
    print(f"{inst.kind}: gap={gap.gap_value:.6g} ({gap.method}) rounds={rounds} distance={dist:.6g} "
          f"bound={inst.diameter / 2.0**rounds:.6g} grad_evals={evals}")
    return summary


def cmd_sweep(cfg, out: Outputs) -> dict:
    params = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("problem.")}
    scfg = SweepConfig(kind=cfg["problem"], instance_params=params, ns=tuple(int(v) for v in cfg["ns"]),
                       dims=tuple(int(v) for v in cfg["dims"]), epsilons=tuple(float(v) for v in cfg["epsilons"]),
                       delta=cfg["delta"], seeds=cfg["seeds"], base_seed=cfg["seed"], solver=cfg["solver"],
                       lambda_constant=cfg["lambda_constant"], accountant_constant=cfg["accountant_constant"],
                       bound_factor=cfg["bound_factor"], noise_share_threshold=cfg["noise_share_threshold"],
                       parallel=cfg["parallel"])
    res = rate_sweep(scfg)
    cols = ["kind", "n", "d", "epsilon", "delta", "seed", "gap", "grad_evals", "wall_ms"]
    out.write_csv("run.csv", cols, [[r[c] if c != "wall_ms" else _wall(cfg, r[c]) for c in cols] for r in res.rows])
    cell_cols = ["n", "d", "epsilon", "seeds", "mean_gap", "stderr", "noiseless_mean_gap", "noise_share",
                 "sampling_dominated", "grad_evals", "max_grad_evals"]
    rows = [[c[k] for k in cell_cols] + ["", "", ""] for c in res.cells]
    for (d, eps), fit in res.fits.items():
        rows.append(["fit", d, eps, "", "", "", "", "", "", "", "", fit["slope"], fit["halfwidth"], fit["cells_used"]])
    out.write_csv("summary.csv", cell_cols + ["slope", "slope_halfwidth", "cells_used"], rows)
    out.write_text("plotdata.txt", "".join(f"{c['n']} {c['mean_gap']!r} {c['stderr']!r}\n" for c in res.cells))
    out.write_text("meta.txt", "".join(f"failure={json.dumps(f)}\n" for f in res.failures))
    for (d, eps), fit in res.fits.items():
        print(f"d={d} epsilon={eps}: slope={fit['slope']} halfwidth={fit['halfwidth']} cells={fit['cells_used']}")
    return {"fits": res.fits, "failures": len(res.failures)}


def cmd_diagnose(cfg, out: Outputs) -> dict:
    inst = _instance(cfg)
    rows = []
    suite = cfg["suite"]
    if suite in ("gaps", "all"):
        truth = inst.population_truth().point
        rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(3,)))
        worst_truth = 0.0
        for _ in range(50):
            z = inst.constraint.random_point(rng)
            worst_truth = max(worst_truth, float(inst.population_operator(truth) @ (truth - z)))
        rows.append(["equilibrium_residual", worst_truth, 1e-9, worst_truth <= 1e-9])
        g = vi_gap(inst, truth).gap_value
        rows.append(["vi_gap_at_truth", g, 1e-8, abs(g) <= 1e-8])
    if suite in ("uas", "all"):
        r = uas_probe(inst, cfg["lambda"], cfg["mu"], cfg["n"], min(cfg["trials"], 50), cfg["seed"])
        rows.append(["uas_max_distance", r["max_distance"], r["bound"], r["passed"]])
    if suite in ("stability", "all"):
        r = stability_generalization_probe(inst, cfg["lambda"], cfg["n"], cfg["trials"], cfg["seed"])
        rows.append(["generalization_mean", r["mean"], r["bound"] + 3 * r["stderr"], r["passed"]])
    out.write_csv("summary.csv", ["check", "value", "bound", "passed"], rows)
    out.write_text("meta.txt", "")
    for row in rows:
        print(f"{row[0]}: {row[1]:.6g} (bound {row[2]:.6g}) {'pass' if row[3] else 'FAIL'}")
    return {"all_passed": all(r[3] for r in rows)}


COMMANDS = {"solve": cmd_solve, "calibrate": cmd_calibrate, "sweep": cmd_sweep, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpsaddle", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (keys: {', '.join(SCHEMA[name])})")
        p.add_argument("--config", type=Path, help="flat key = value file")
        p.add_argument("--seed", type=int, help="overrides the seed key")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def _error(kind: str, message: str, violations=None) -> None:
    record = {"error": kind, "message": message}
    if violations:
        record["violations"] = violations
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = parse_config_text(args.config.read_text()) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = resolve(args.command, raw)
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out = Outputs(args.out, cfg, args.command)
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        _error("config", str(exc), exc.violations)
        return 2
    except OSError as exc:
        _error("io", str(exc))
        return 3
    except (DomainError, ConvergenceError, ArithmeticError, ValueError, TypeError) as exc:
        _error(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
