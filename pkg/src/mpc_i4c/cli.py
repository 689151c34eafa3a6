"""Command line entry point: tune, evaluate, simulate and replay campaigns."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bayesopt import BoRecord, DesignPoint, run_bo
from .experiment import ClosedLoopTrace, LoopConfig, Objective, run_closed_loop
from .gp import GpHyperparams
from .plant import NoiseConfig

log = logging.getLogger("mpc_i4c")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4
SEED_ENV = "MPC_I4C_SEED"
REPLAY_TOL = 1e-9


class ReplayMismatch(Exception):
    pass


def atomic_write(path, text: str):
    """Write ``text`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_to_dict(rec: BoRecord) -> dict:
    return {
        "index": rec.index,
        "point": rec.point.to_dict(),
        "cost": rec.cost,
        "status": rec.status,
        "seed": rec.seed,
        "hyper": None if rec.hyper is None else {"sigma0": rec.hyper.sigma0, "lam": rec.hyper.lam, "sigma_e": rec.hyper.sigma_e},
        "best_cost": rec.best_cost,
    }


def record_from_dict(d: dict) -> BoRecord:
    h = d.get("hyper")
    return BoRecord(
        index=int(d["index"]),
        point=DesignPoint.from_dict(d["point"]),
        cost=float(d["cost"]),
        status=str(d["status"]),
        seed=int(d["seed"]),
        hyper=None if h is None else GpHyperparams(h["sigma0"], h["lam"], h["sigma_e"]),
        best_cost=float(d["best_cost"]),
    )


def dump_line(d: dict) -> str:
    # repr-exact floats and fixed key order keep logs byte-reproducible
    return json.dumps(d, sort_keys=True, allow_nan=False)


def read_log(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise cfgmod.ConfigError(f"{path}:{n}: malformed record: {exc.msg}") from None
    return rows


def trace_csv(trace: ClosedLoopTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ClosedLoopTrace.COLUMNS)
    for row in trace.as_array():
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _load_config(path) -> cfgmod.CampaignConfig:
    cfg = cfgmod.load(path)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise cfgmod.ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
        cfg.bo = replace(cfg.bo, seed=seed)
    return cfg


def _summary(res, label: str = "") -> str:
    out = f"{label}cost={res.cost:.6f} status={res.status}"
    if res.trace is not None and len(res.trace):
        out += f" max|p|={np.max(np.abs(res.trace.p)):.4f} samples={len(res.trace)}"
    return out


def cmd_tune(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.output) if args.output else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "iterations.jsonl"
    meta = {"label": cfg.label, "seed": cfg.bo.seed, "config_digest": cfg.digest}

    lines: list[str] = []
    history: list[BoRecord] = []
    if args.resume and log_path.exists():
        old_meta = json.loads((out / "campaign.json").read_text()) if (out / "campaign.json").exists() else None
        if old_meta is not None and (old_meta["config_digest"], old_meta["seed"]) != (cfg.digest, cfg.bo.seed):
            raise cfgmod.ConfigError(f"{out}: existing campaign was run with a different config or seed; refusing to resume")
        rows = read_log(log_path)
        history = [record_from_dict(r) for r in rows]
        lines = [dump_line(r) for r in rows]
        print(f"resuming {cfg.label} at iteration {len(history)}")
    elif log_path.exists() and not args.resume:
        raise cfgmod.ConfigError(f"{log_path} exists; pass --resume to continue it or choose another output directory")

    atomic_write(out / "campaign.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "config.yaml", cfg.source)
    timings_path = out / "timings.csv"
    timings = timings_path.read_text().splitlines()[1:] if args.resume and timings_path.exists() else []

    objective = Objective(cfg.loop)
    tick = [time.perf_counter()]

    def on_record(rec: BoRecord):
        now = time.perf_counter()
        lines.append(dump_line(record_to_dict(rec)))
        atomic_write(log_path, "\n".join(lines) + "\n")
        timings.append(f"{rec.index},{1000.0 * (now - tick[0]):.1f}")
        atomic_write(timings_path, "index,wall_ms\n" + "\n".join(timings) + "\n")
        tick[0] = now
        if not args.quiet:
            print(f"[{rec.index + 1:4d}/{cfg.bo.i_max}] J={rec.cost:8.4f} best={rec.best_cost:8.4f} {rec.status}", flush=True)

    best, data = run_bo(objective, cfg.space, cfg.bo, history=history, callback=on_record)
    rec = data.best()
    atomic_write(out / "best.json", json.dumps({"point": best.to_dict(), "cost": rec.cost, "index": rec.index,
                                                "seed": rec.seed, "status": rec.status}, indent=2) + "\n")
    conv = ["iteration,cost,best_cost"] + [f"{r.index},{r.cost!r},{r.best_cost!r}" for r in data.records]
    atomic_write(out / "convergence.csv", "\n".join(conv) + "\n")
    print(f"best cost {rec.cost:.6f} at iteration {rec.index}: {json.dumps(best.to_dict())}")
    print(f"wrote {out}")
    return EXIT_OK


def _loop_for_run(cfg: cfgmod.CampaignConfig, seed, no_noise: bool, duration) -> tuple[LoopConfig, float]:
    loop = cfg.loop
    if no_noise:
        loop = replace(loop, noise=NoiseConfig.silent())
    if seed is not None:
        loop = replace(loop, noise=replace(loop.noise, seed=int(seed)))
    return loop, loop.scenario.experiment_duration if duration is None else float(duration)


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    best = json.loads(Path(args.best).read_text())
    dp = DesignPoint.from_dict(best["point"] if "point" in best else best)
    loop, duration = _loop_for_run(cfg, args.seed, args.no_noise, args.duration)
    res = run_closed_loop(dp, loop, duration=duration)
    out = Path(args.out) if args.out else Path(args.best).with_name("trajectory.csv")
    if res.trace is not None:
        atomic_write(out, trace_csv(res.trace))
    print(_summary(res))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    theta = tuple(args.theta) if args.theta else (0.0,) * cfg.space.n_theta
    mu = tuple(args.mu) if args.mu else (0.0,) * len(cfg.space.mu_lo)
    Np = args.np if args.np is not None else cfg.space.Np_range[0]
    dp = DesignPoint(theta, mu, Np)
    if len(theta) != cfg.space.n_theta or len(mu) != len(cfg.space.mu_lo):
        raise cfgmod.ConfigError(f"--theta needs {cfg.space.n_theta} values and --mu needs {len(cfg.space.mu_lo)}")
    if not cfg.space.contains(dp):
        log.warning("design point lies outside the search box")
    loop, duration = _loop_for_run(cfg, args.seed, args.no_noise, args.duration)
    res = run_closed_loop(dp, loop, duration=duration)
    print(_summary(res))
    if args.export:
        if res.trace is None:
            print("no trajectory to export (model could not be built)")
        else:
            atomic_write(args.export, trace_csv(res.trace))
            print(f"wrote {args.export}")
    return EXIT_OK


def cmd_replay(args) -> int:
    log_path = Path(args.log)
    cfg_path = Path(args.config) if args.config else log_path.with_name("config.yaml")
    cfg = cfgmod.load(cfg_path)
    rows = read_log(log_path)
    matches = [r for r in rows if int(r["index"]) == args.index]
    if not matches:
        raise cfgmod.ConfigError(f"{log_path}: no record with index {args.index}")
    rec = record_from_dict(matches[0])
    J, status = Objective(cfg.loop)(rec.point, rec.seed)
    diff = abs(J - rec.cost) if math.isfinite(J) else math.inf
    print(f"index {rec.index}: recorded {rec.cost!r} ({rec.status}), replayed {J!r} ({status}), |diff|={diff:.3e}")
    if not diff < REPLAY_TOL:
        raise ReplayMismatch(f"replay differs from record by {diff:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpc-i4c", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="run a Bayesian-optimization campaign")
    t.add_argument("config")
    t.add_argument("--resume", action="store_true", help="continue from an existing iterations.jsonl")
    t.add_argument("--output", help="output directory (default: campaign.output_dir)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_tune)

    e = sub.add_parser("evaluate", help="re-run a tuned design and export its trajectory")
    e.add_argument("best", help="best.json written by tune")
    e.add_argument("config")
    e.add_argument("--duration", type=float, default=20.0, help="seconds (default 20)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--no-noise", action="store_true")
    e.add_argument("--out", help="CSV path (default: trajectory.csv next to best.json)")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="run one closed-loop experiment for explicit parameters")
    s.add_argument("config")
    s.add_argument("--theta", type=float, nargs="+", metavar="GAIN")
    s.add_argument("--mu", type=float, nargs="+", metavar="VALUE")
    s.add_argument("--np", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--no-noise", action="store_true")
    s.add_argument("--export", help="write the trajectory CSV here")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replay", help="re-run one logged iteration and compare its cost")
    r.add_argument("log", help="iterations.jsonl")
    r.add_argument("index", type=int)
    r.add_argument("--config", help="config file (default: config.yaml next to the log)")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
