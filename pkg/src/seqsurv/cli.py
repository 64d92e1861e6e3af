"""Command-line front end.

Every artifact embeds the resolved configuration and seed, and any artifact
JSON can be passed back through ``--config`` to reproduce it.

Exit status: 0 on success, 1 for user errors (bad flags, malformed config,
missing seed), 2 when the engine reports an infeasible design.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import boundary_engine as be
from . import resample as rs
from . import trial_sim as ts
from .survival_core import read_subjects_csv

STOCHASTIC = {"design", "simulate", "analyze", "reproduce"}


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    config: Path | None
    seed: int | None
    out: Path
    threads: int


def _common(p):
    p.add_argument("--config", type=Path, help="JSON configuration (or a previous artifact)")
    p.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqsurv", description="Time-sequential survival trial design and analysis.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("boundary", help="solve a group-sequential monitoring grid")
    _common(p)
    p.add_argument("--k", type=int, help="number of equally spaced analyses")
    p.add_argument("--info", type=float, nargs="+", help="information levels (overrides --k)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--sided", choices=be.SIDES)
    p.add_argument("--method", choices=be.SPENDING_KINDS[:3] + ("haybittle-peto",))
    p.add_argument("--epsilon", type=float, help="Haybittle-Peto interim share of alpha")

    for name, text in (("design", "operating characteristics and sample-size search"),
                       ("simulate", "per-replicate simulation of a scenario")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--n-sims", type=int)

    p = sub.add_parser("analyze", help="hybrid resampling confidence interval for an observed trial")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="subject CSV")
    p.add_argument("--B", type=int)
    p.add_argument("--mode", choices=("importance", "direct"))

    p = sub.add_parser("reproduce", help="reproduction studies")
    _common(p)
    p.add_argument("study", choices=("table1", "example2"))
    p.add_argument("--macro", type=int, help="table1 macro-replications")
    p.add_argument("--outer", type=int, help="example2 outer replications per beta")
    p.add_argument("--B", type=int, help="inner resamples")
    return parser


# -- config handling -------------------------------------------------------------


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise UserError(f"{path}: top level must be a JSON object")
    return d.get("config", d)  # accept a previous artifact


def artifact_seed(path: Path | None) -> int | None:
    """The seed embedded in a previous artifact, if ``path`` is one."""
    if path is None:
        return None
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if isinstance(d, dict) and "config" in d and isinstance(d.get("seed"), int):
        return d["seed"]
    return None


def _field(d: dict, key: str, default=None, required=False):
    if key not in d:
        if required:
            raise UserError(f"config: missing field {key!r}")
        return default
    return d[key]


def _wrap(what, fn, *args):
    try:
        return fn(*args)
    except be.InfeasibleDesign:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise UserError(f"config field {what!r}: {exc}") from None


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# -- subcommands ----------------------------------------------------------------


def cmd_boundary(rc: RunConfig, args, cfg: dict) -> dict:
    alpha = float(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    sided = args.sided or cfg.get("sided", "two-sided")
    method = args.method or cfg.get("method", "obrien-fleming")
    info = args.info or cfg.get("info")
    if info is None:
        k = args.k if args.k is not None else cfg.get("k")
        if k is None:
            raise UserError("boundary needs --k, --info or an 'info' field")
        info = list(range(1, int(k) + 1))
    info = [float(a) for a in info]
    resolved = {"info": info, "alpha": alpha, "sided": sided, "method": method}
    if method == "haybittle-peto":
        eps = float(args.epsilon if args.epsilon is not None else cfg.get("epsilon", 0.1))
        resolved["epsilon"] = eps
        if sided != "two-sided":
            raise UserError("haybittle-peto grids are two-sided")
        b, c = be.haybittle_peto_thresholds(len(info), info, alpha, eps)
        grid = be.MonitoringGrid(tuple(info), tuple([b] * (len(info) - 1) + [c]), sided, alpha,
                                 {"kind": "haybittle-peto", "epsilon": eps})
    else:
        spend = dict(cfg.get("spending", {}))
        spend.setdefault("kind", method)
        sf = _wrap("spending", be.SpendingFunction.from_dict, spend, alpha, sided)
        resolved["spending"] = sf.to_dict()
        grid = be.spend_and_solve(sf, info)
    out = grid.to_dict()
    out["config"] = resolved
    out["seed"] = None
    write_json(rc.out / "boundary.json", out)
    return out


def _scenario_and_spec(cfg: dict):
    sc = _wrap("scenario", ts.Scenario.from_dict, _field(cfg, "scenario", required=True))
    spec = _wrap("test", ts.TestSpec.from_dict, _field(cfg, "test", {}))
    return sc, spec


def cmd_simulate(rc: RunConfig, args, cfg: dict, design: bool = False) -> dict:
    sc, spec = _scenario_and_spec(cfg)
    n_sims = int(args.n_sims if args.n_sims is not None else cfg.get("n_sims", 1000))
    resolved = {"scenario": sc.to_dict(), "test": spec.to_dict(), "n_sims": n_sims}
    rep = ts.operating_characteristics(sc, spec, n_sims, rc.seed, workers=rc.threads)
    out = rep.to_dict()
    write_csv(rc.out / "replicates.csv", ts.replicate_rows(rep.outcomes))
    if design and "sample_size" in cfg:
        ss = dict(cfg["sample_size"])
        resolved["sample_size"] = ss
        try:
            res = ts.sample_size_search(sc, spec, float(ss["target_power"]), float(ss["log_hr"]),
                                        n_sims=int(ss.get("n_sims", 2000)), seed=rc.seed,
                                        n_min=int(ss.get("n_min", 20)), n_cap=int(ss.get("n_cap", 20000)),
                                        confirm_sims=ss.get("confirm_sims", 10000), workers=rc.threads)
        except ts.SampleSizeError as exc:
            raise be.InfeasibleDesign(str(exc)) from None
        except KeyError as exc:
            raise UserError(f"config field 'sample_size': missing {exc}") from None
        out["sample_size"] = {"n": res.n, "power": res.power, "se": res.se}
        write_csv(rc.out / "sample_size_trace.csv", res.trace)
    out["config"] = resolved
    out["seed"] = rc.seed
    write_json(rc.out / ("design.json" if design else "simulate.json"), out)
    return out


def cmd_analyze(rc: RunConfig, args, cfg: dict) -> dict:
    try:
        data = read_subjects_csv(args.data)
    except (OSError, ValueError) as exc:
        raise UserError(str(exc)) from None
    times = [float(t) for t in _field(cfg, "analysis_times", required=True)]
    alpha = float(cfg.get("alpha", 0.05))
    bd = cfg.get("boundary", ts.EXAMPLE_18.to_dict())
    boundary = _wrap("boundary", ts.boundary_from_dict, bd, alpha)
    if not isinstance(boundary, ts.Example18Boundary):
        raise UserError("analyze supports the example-18 information boundary")
    B = int(args.B if args.B is not None else cfg.get("B", 2000))
    mode = args.mode or cfg.get("mode", "importance")
    psi = cfg.get("psi", "estimate")
    accrual = cfg.get("accrual")
    resolved = {"analysis_times": times, "alpha": alpha, "boundary": boundary.to_dict(), "B": B,
                "mode": mode, "psi": psi, "accrual": accrual, "data": str(args.data)}
    outcome = ts.run_test(data, ts.TestSpec("cox", boundary=boundary, alpha=alpha), times)
    acc = None if accrual is None else _wrap("accrual", ts.accrual_from_dict, accrual)
    model = rs.fit_hybrid_model(data, outcome, times, boundary, accrual=acc)
    hcfg = _wrap("B/mode/psi", rs.HybridConfig, B, rc.seed, (), mode, rs.OrderingScheme("psi-path", psi))
    interval = rs.hybrid_confidence_set(model, alpha, hcfg)
    out = interval.to_dict()
    out["diagnostics"].update({"stop_index": outcome.stop_index, "stop_time": outcome.stop_time,
                               "decision": outcome.decision, "se": model.fit.se})
    out["config"] = resolved
    out["seed"] = rc.seed
    write_json(rc.out / "analyze.json", out)
    return out


EXAMPLE2_BETAS = (0.0, math.log(2 / 3), math.log(1 / 2))


def cmd_reproduce(rc: RunConfig, args, cfg: dict) -> dict:
    if args.study == "table1":
        tc = rs.Table1Config(
            B=int(args.B if args.B is not None else cfg.get("B", 500)),
            macro=int(args.macro if args.macro is not None else cfg.get("macro", 500)),
        )
        rows = rs.table1_study(tc, rc.seed)
        write_csv(rc.out / "table1.csv", rows)
        out = {"rows": rows, "config": {"study": "table1", "B": tc.B, "macro": tc.macro, "m": tc.m, "n": tc.n,
                                        "median": tc.median}, "seed": rc.seed}
        write_json(rc.out / "table1.json", out)
        return out
    ec = rs.Example2Config(
        B=int(args.B if args.B is not None else cfg.get("B", 2000)),
        outer=int(args.outer if args.outer is not None else cfg.get("outer", 2000)),
        baseline_rate=float(cfg.get("baseline_rate", 0.3)),
    )
    rows, reps = [], []
    for i, beta in enumerate(EXAMPLE2_BETAS):
        res = rs.example2_study(ec, beta, rc.seed, i)
        for method in ("brownian", "hybrid"):
            rows.append({"beta": beta, "method": method, "lower_error_pct": 100 * res[f"{method}_lower"],
                         "upper_error_pct": 100 * res[f"{method}_upper"]})
        reps += [{"beta": beta, "replicate": r, **row} for r, row in enumerate(res["replicates"])]
    write_csv(rc.out / "example2.csv", rows)
    write_csv(rc.out / "example2_replicates.csv", reps)
    out = {"rows": rows, "config": {"study": "example2", "B": ec.B, "outer": ec.outer,
                                    "baseline_rate": ec.baseline_rate}, "seed": rc.seed}
    write_json(rc.out / "example2.json", out)
    return out


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    seed = args.seed if args.seed is not None else artifact_seed(args.config)
    rc = RunConfig(args.subcommand, args.config, seed, args.out, max(1, args.threads))
    if rc.subcommand in STOCHASTIC and rc.seed is None:
        parser.print_usage(sys.stderr)
        print(f"seqsurv: error: {rc.subcommand} is stochastic and needs --seed", file=sys.stderr)
        return 1
    try:
        cfg = load_config(rc.config)
        rc.out.mkdir(parents=True, exist_ok=True)
        if rc.subcommand == "boundary":
            out = cmd_boundary(rc, args, cfg)
        elif rc.subcommand in ("design", "simulate"):
            out = cmd_simulate(rc, args, cfg, design=rc.subcommand == "design")
        elif rc.subcommand == "analyze":
            out = cmd_analyze(rc, args, cfg)
        else:
            out = cmd_reproduce(rc, args, cfg)
    except UserError as exc:
        print(f"seqsurv: error: {exc}", file=sys.stderr)
        return 1
    except be.InfeasibleDesign as exc:
        print(f"seqsurv: infeasible design: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"seqsurv: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({k: v for k, v in out.items() if k not in ("rows", "replicates")}, default=_json_default))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
