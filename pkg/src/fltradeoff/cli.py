"""``fltradeoff`` command-line entry point.

Every subcommand reads one config, writes a deterministic JSON report into
the output directory and prints it to stdout. Errors go to stderr as a JSON
object. Exit codes: 0 ok, 2 config error, 3 runtime error, 4 infeasible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .attack import RecoveryCounts, run_attack_rounds, select_private_batch
from .config import RunConfig, load_config, load_data
from .errors import ConfigError, InfeasibleBudget, TradeoffError
from .estimation import (
    TradeoffConstants,
    conditional_from_counts,
    drop_leftover,
    estimate_c1k,
    estimate_constants,
    estimate_f_o,
    prepare_models,
)
from .flsim import measure_efficiency_reduction, measure_utility_loss, train_federated
from .mechanisms import distortion_tv, efficiency_reduction_bound, utility_loss_bound
from .tuner import Feasibility, MechanismShape, TuneRequest, solve_generic
from .worlds import CHECK_ATOL, check_world, random_worlds
from ._seeding import seed_sequence

logger = logging.getLogger("fltradeoff")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Output helpers


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars become floats, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _rows_to_csv(rows: Sequence[dict[str, Any]]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _clean(r.get(k)) for k in cols})
    return buf.getvalue()


class Run:
    """One command invocation: config, output directory and report metadata."""

    def __init__(self, cfg: RunConfig, command: str, config_path: Path, args: argparse.Namespace):
        self.cfg = cfg
        self.command = command
        self.base = config_path.parent
        self.jobs = max(1, args.jobs)
        self.fmt = args.format
        self.out = Path(cfg.output.dir)
        if not self.out.is_absolute():
            self.out = Path.cwd() / self.out
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {self.out}: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory not writable: {self.out}")

    def meta(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "experiment": self.cfg.experiment,
            "config_digest": self.cfg.digest(),
            "version": __version__,
            "seed": self.cfg.seed,
        }

    def write(self, name: str, report: dict[str, Any], rows: Sequence[dict[str, Any]] | None = None) -> str:
        report = {"meta": self.meta(), **report}
        text = dumps(report)
        (self.out / f"{name}.json").write_text(text)
        if rows is not None and self.fmt == "csv":
            table = _rows_to_csv(rows)
            (self.out / f"{name}.csv").write_text(table)
            return table
        return text


# ---------------------------------------------------------------------------
# Commands


def cmd_estimate(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    clients, test = load_data(cfg, run.base)
    w_star = train_federated(cfg.fl_config(None), clients, test).global_model
    est = cfg.estimation
    report = estimate_constants(
        clients, w_star, cfg.estimation_config(), cfg.seed, est.c4, est.c5, est.error_eps, run.jobs
    )
    body = report.to_dict()
    rows = [
        {"client": k, "c1": c.c1, "xi": c.xi, "chernoff": c.chernoff} for k, c in enumerate(report.clients)
    ]
    sys.stdout.write(run.write("constants", body, rows))
    return EXIT_OK


def _constants_path(run: Run, args: argparse.Namespace) -> Path:
    if args.constants:
        return Path(args.constants)
    if run.cfg.constants:
        p = Path(run.cfg.constants)
        return p if p.is_absolute() else run.base / p
    return run.out / "constants.json"


def load_constants(path: Path) -> TradeoffConstants:
    if not path.is_file():
        raise ConfigError(f"constants file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        if not isinstance(raw, dict):
            raise ValueError("constants must be a JSON object")
        return TradeoffConstants.from_dict(raw)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed constants file {path}: {exc}") from exc


def cmd_tune(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    spec = cfg.mechanism_spec()
    if spec is None:
        raise ConfigError("tune needs a [mechanism] section")
    constants = load_constants(_constants_path(run, args))
    t = cfg.tune
    try:
        shape = MechanismShape(spec.kind, spec.dim_m, spec.delta, spec.sigma0, cfg.data.num_clients)
        req = TuneRequest(shape, constants, t.budget, t.eta_u, t.eta_e, t.phi, t.curve_points)
    except (TradeoffError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        report = solve_generic(req)
    except InfeasibleBudget as exc:
        report = exc.report
        logger.warning("infeasible: %s", exc)
    body = {"constants": constants.to_dict(), **report.to_dict()}
    (run.out / "tune_curves.csv").write_text(_rows_to_csv(report.bound_curves))
    sys.stdout.write(run.write("tune_report", body, report.bound_curves))
    return EXIT_OK if report.feasibility is Feasibility.FEASIBLE else EXIT_INFEASIBLE


def cmd_simulate(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    spec = cfg.mechanism_spec()
    clients, test = load_data(cfg, run.base)
    if args.gamma is not None:
        gammas: list[float | None] = [args.gamma]
    elif cfg.simulate.gamma is not None:
        gammas = list(cfg.simulate.gamma)
    else:
        gammas = [None if spec is None else spec.gamma]
    if spec is None and gammas != [None]:
        raise ConfigError("a gamma sweep needs a [mechanism] section")
    est = cfg.estimation
    rows = []
    for g in gammas:
        try:
            mech = None if spec is None else spec.with_gamma(g)
        except TradeoffError as exc:
            raise ConfigError(f"gamma {g}: {exc}") from exc
        fl = cfg.fl_config(mech)
        util = measure_utility_loss(fl, clients, mech, cfg.simulate.num_seeds, test, run.jobs)
        eff = measure_efficiency_reduction(fl, clients, mech, test)
        rows.append({
            "gamma": g,
            "utility_loss": util.mean,
            "utility_loss_stderr": util.stderr,
            "utility_protected_mean": float(np.mean(util.protected)),
            "utility_unprotected_mean": float(np.mean(util.unprotected)),
            "efficiency_reduction_bytes": eff.bytes,
            "bytes_protected": eff.bytes_protected,
            "bytes_unprotected": eff.bytes_unprotected,
            "distortion_tv": 0.0 if mech is None else distortion_tv(mech),
            "utility_bound": 0.0 if mech is None else utility_loss_bound(mech, est.c4),
            "efficiency_bound": 0.0 if mech is None else efficiency_reduction_bound(mech, est.c5, cfg.data.num_clients),
        })
    body = {
        "mechanism": None if spec is None else spec.to_dict(),
        "num_seeds": cfg.simulate.num_seeds,
        "seeds": [cfg.seed + s for s in range(cfg.simulate.num_seeds)],
        "rows": rows,
    }
    sys.stdout.write(run.write("metrics", body, rows))
    return EXIT_OK


def attack_client(cfg: RunConfig, data, mechanism, seed: int) -> tuple[RecoveryCounts, float]:
    """Recovery counts and the implied C1 for one client, seeded like the estimator."""
    est = cfg.estimation_config()
    prep_ss, attack_ss, batch_ss = seed_sequence(seed).spawn(3)
    batch = select_private_batch(data, est.attack.batch_size, batch_ss)
    models = prepare_models(data, est.num_models, est.sgd_steps, est.learning_rate, prep_ss, est.batch_size, est.init_scale)
    counts = run_attack_rounds(models, data, mechanism, est.attack, attack_ss, batch)
    conds = conditional_from_counts(counts)
    if not est.include_leftover:
        conds = {m: drop_leftover(p) for m, p in conds.items()}
    c1 = estimate_c1k(estimate_f_o(conds), est.prior_for(data))
    return counts, c1


def cmd_attack(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    spec = cfg.mechanism_spec()
    if args.gamma is not None and spec is not None:
        spec = spec.with_gamma(args.gamma)
    clients, _ = load_data(cfg, run.base)

    def one(k: int):
        return attack_client(cfg, clients[k], spec, cfg.seed + k)

    if run.jobs > 1:
        with ThreadPoolExecutor(max_workers=run.jobs) as pool:
            results = list(pool.map(one, range(len(clients))))
    else:
        results = [one(k) for k in range(len(clients))]
    per_client, rows = [], []
    for k, (counts, c1) in enumerate(results):
        leftover = counts.leftover_fraction()
        per_client.append({
            "client": k, "c1_hat": c1, "leftover_fraction": leftover,
            "recovery_rate": 1.0 - leftover, "counts": counts.to_dict(),
        })
        rows.append({"client": k, "c1_hat": c1, "recovery_rate": 1.0 - leftover, "leftover_fraction": leftover})
    body = {
        "mechanism": None if spec is None else spec.to_dict(),
        "attack": cfg.estimation.attack.model_dump(mode="json"),
        "c1_hat": float(np.mean([r[1] for r in results])),
        "recovery_rate": float(np.mean([r["recovery_rate"] for r in rows])),
        "clients": per_client,
    }
    sys.stdout.write(run.write("recovery", body, rows))
    return EXIT_OK


def cmd_check_bounds(run: Run, args: argparse.Namespace) -> int:
    cb = run.cfg.check_bounds
    worlds, rows = [], []
    for i, w in enumerate(random_worlds(cb.num_worlds, run.cfg.seed, cb.max_pool, cb.max_params)):
        checks = check_world(w)
        worlds.append({"world": i, "c1": w.c1, "xi": w.xi, "tv": w.tv, "checks": [c.to_dict() for c in checks]})
        rows.extend({"world": i, **c.to_dict()} for c in checks)
    summary = {}
    for name in sorted({r["name"] for r in rows}):
        sel = [r for r in rows if r["name"] == name]
        summary[name] = {
            "holds": all(r["holds"] for r in sel),
            "violations": sum(not r["holds"] for r in sel),
            "min_slack": min(r["slack"] for r in sel),
        }
    body = {"atol": CHECK_ATOL, "num_worlds": cb.num_worlds, "summary": summary, "worlds": worlds}
    sys.stdout.write(run.write("diagnostics", body, rows))
    return EXIT_OK


COMMANDS: dict[str, Callable[[Run, argparse.Namespace], int]] = {
    "estimate": cmd_estimate,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "check-bounds": cmd_check_bounds,
}


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="TOML or JSON run config")
    shared.add_argument("--seed", type=int, default=None, help="override the config seed")
    shared.add_argument("--out", default=None, help="override the output directory")
    shared.add_argument("--jobs", type=int, default=1, help="worker threads for Monte-Carlo loops")
    shared.add_argument("--format", choices=("json", "csv"), default="json",
                        help="stdout format; csv also writes the report table next to the JSON")
    parser = argparse.ArgumentParser(prog="fltradeoff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[shared], help="estimate C1, C2 and xi")
    p = sub.add_parser("tune", parents=[shared], help="solve for the optimal protection parameter")
    p.add_argument("--constants", default=None, help="constants JSON (defaults to OUT/constants.json)")
    p = sub.add_parser("simulate", parents=[shared], help="measure utility loss and efficiency reduction")
    p.add_argument("--gamma", type=float, default=None, help="override the mechanism parameter")
    p = sub.add_parser("attack", parents=[shared], help="run the reconstruction attack")
    p.add_argument("--gamma", type=float, default=None, help="override the mechanism parameter")
    sub.add_parser("check-bounds", parents=[shared], help="brute-force the leakage inequalities")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("TFL_LOG", "WARNING").upper()
    numeric = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=numeric, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config_path = Path(args.config)
        cfg = load_config(config_path).with_overrides(seed=args.seed, out=args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = Run(cfg, args.command, config_path, args)
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except InfeasibleBudget as exc:
        return _fail(EXIT_INFEASIBLE, exc)
    except (TradeoffError, ValueError, ArithmeticError, OSError) as exc:
        logger.debug("runtime failure", exc_info=True)
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
