"""Command-line entry point ``hmmfdr``.

Observation and l-value files hold one float per line. Model files use the
``HmmParams`` JSON schema; campaign files use the ``ExperimentConfig`` schema.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import HmmFdrError
from .harness import ExperimentConfig, estimation_risk_curve, run_experiment
from .hmm_core import HmmParams, simulate
from .recovery import ByStationaryMass, ByTailRatio, fit_params
from .report import fdr_trend_svg, read_rows, report_from_rows, svg_lines, write_report
from .smoothing import l_values
from .spectral import estimate_emissions, estimate_emissions_discrete
from .testing import PLUS_INF, procedure_hat


def _read_floats(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float))


def _write_floats(path: Path, values) -> Path:
    path.write_text("".join(f"{float(v)!r}\n" for v in values))
    return path


def _write_table(path: Path, fmt: str, columns: dict) -> Path:
    """Columns of equal length as CSV or as a JSON object of lists."""
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        path.write_text(json.dumps({k: [v.item() if hasattr(v, "item") else v for v in col]
                                    for k, col in columns.items()}))
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in zip(*columns.values()):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        path.write_text(buf.getvalue())
    return path


def _load_params(path) -> HmmParams:
    return HmmParams.from_json(Path(path).read_text())


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> dict:
    H = _load_params(args.config)
    path = simulate(H, args.N, args.seed)
    out = _out(args)
    files = [_write_floats(out / "observations.txt", path.observations),
             _write_table(out / "path", args.format,
                          {"state": path.states.tolist(), "observation": path.observations.tolist()})]
    return {"N": args.N, "seed": args.seed, "files": [str(f) for f in files]}


def _rule(args):
    if args.alignment == "tail_ratio":
        return ByTailRatio(math.inf if args.x_star is None else args.x_star)
    return ByStationaryMass()


def cmd_estimate(args) -> dict:
    X = _read_floats(args.data)
    out = _out(args)
    if args.discrete:
        dens = estimate_emissions_discrete(X, args.states)
        grid = np.unique(X)
    else:
        fit = estimate_emissions(X, args.s, alpha=args.alpha, J=args.states)
        dens, grid = fit.densities, fit.grid
        (out / "spectral_fit.json").write_text(json.dumps(fit.to_dict()))
    H_hat = fit_params(X, dens, _rule(args))
    (out / "fitted_params.json").write_text(H_hat.to_json(indent=2))
    cols = {"x": grid.tolist()}
    cols.update({f"f{j}": np.asarray(f.pdf(grid)).tolist() for j, f in enumerate(H_hat.emissions)})
    table = _write_table(out / "densities", args.format, cols)
    return {"Q_hat": H_hat.Q.entries.tolist(), "pi_hat": H_hat.pi.probs.tolist(),
            "files": [str(out / "fitted_params.json"), str(table)]}


def cmd_lvalues(args) -> dict:
    H = _load_params(args.config)
    lv = l_values(_read_floats(args.data), H)
    out = _out(args)
    files = [_write_floats(out / "lvalues.txt", lv.values)]
    if args.format == "json":
        files.append(_write_table(out / "lvalues", "json", {"l": lv.values.tolist()}))
    return {"N": len(lv), "params_tag": lv.params_tag, "mean": float(lv.values.mean()),
            "files": [str(f) for f in files]}


def cmd_test(args) -> dict:
    lv = _read_floats(args.lvalues)
    res = procedure_hat(lv, args.t)
    out = _out(args)
    rej = out / "rejections.txt"
    rej.write_text("".join(f"{int(v)}\n" for v in res.rejections))
    return {"K_hat": res.K_hat,
            "lambda_hat": "inf" if res.lambda_hat is PLUS_INF else res.lambda_hat,
            "post_fdr": res.post_fdr, "t": args.t, "files": [str(rej)]}


def cmd_experiment(args) -> dict:
    d = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        d["master_seed"] = args.seed
    cfg = ExperimentConfig.from_dict(d)
    report = run_experiment(cfg, threads=args.threads)
    paths = write_report(report, _out(args), Path(cfg.csv_path).name, Path(cfg.json_path).name,
                         cfg.svg)
    if cfg.svg and "FullEmpirical" in cfg.pipelines and len(cfg.N_grid) >= 3:
        curve = estimation_risk_curve(cfg, report)
        risk = Path(args.out_dir) / "risk_curve.svg"
        risk.write_text(svg_lines({"median rho": ([c["N"] for c in curve], [c["median_rho"] for c in curve]),
                                   "r_N": ([c["N"] for c in curve], [c["r_N"] for c in curve])},
                                  "Estimation risk", "N", "loss", logx=True))
        paths["risk_svg"] = risk
    return {"aggregates": list(report.aggregates), "files": {k: str(v) for k, v in paths.items()}}


def cmd_report(args) -> dict:
    rep = report_from_rows(read_rows(args.csv))
    out = _out(args)
    path = out / "fdr_trend.svg"
    path.write_text(fdr_trend_svg(rep.aggregates, args.t))
    return {"aggregates": list(rep.aggregates), "files": [str(path)]}


def _emit(result: dict, fmt: str) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None if math.isnan(v) else "inf"
        if v is PLUS_INF:
            return "inf"
        return v

    if fmt == "json":
        print(json.dumps(result, default=clean, indent=2))
        return
    aggs = result.get("aggregates")
    if aggs:
        keys = list(dict.fromkeys(k for a in aggs for k in a))
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(keys)
        for a in aggs:
            w.writerow([clean(a.get(k, "")) for k in keys])
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        for k, v in result.items():
            w.writerow([k, json.dumps(v, default=clean) if isinstance(v, (list, dict)) else clean(v)])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model (HmmParams) or campaign JSON file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="hmmfdr", description="FDR control for hidden Markov models "
                                "with nonparametric emissions.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a path from a model file")
    s.add_argument("--N", type=int, required=True)

    e = sub.add_parser("estimate", parents=[common], help="fit emissions and transitions to data")
    e.add_argument("--data", required=True)
    e.add_argument("--s", type=float, default=2.0, help="assumed smoothness")
    e.add_argument("--alpha", type=float, default=0.5)
    e.add_argument("--states", type=int, default=2)
    e.add_argument("--discrete", action="store_true")
    e.add_argument("--alignment", choices=("stationary_mass", "tail_ratio"), default="stationary_mass")
    e.add_argument("--x-star", type=float, default=None)

    lv = sub.add_parser("lvalues", parents=[common], help="posterior null probabilities")
    lv.add_argument("--data", required=True)

    t = sub.add_parser("test", parents=[common], help="threshold an l-value file at level t")
    t.add_argument("--lvalues", required=True)
    t.add_argument("--t", type=float, required=True)

    sub.add_parser("experiment", parents=[common], help="run a Monte Carlo campaign")

    r = sub.add_parser("report", parents=[common], help="render SVG charts from a results CSV")
    r.add_argument("--csv", required=True)
    r.add_argument("--t", type=float, default=None)
    return p


_COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "lvalues": cmd_lvalues,
             "test": cmd_test, "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    needs_config = {"simulate", "lvalues", "experiment"}
    if args.command in needs_config and not args.config:
        print(f"hmmfdr {args.command}: --config is required", file=sys.stderr)
        return 2
    if args.command == "simulate" and args.seed is None:
        args.seed = 0
    try:
        result = _COMMANDS[args.command](args)
    except (HmmFdrError, OSError, ValueError) as exc:
        print(f"hmmfdr {args.command}: {exc}", file=sys.stderr)
        return 1
    _emit(result, args.format)
    return 0


if __name__ == "__main__":
    sys.exit(main())
