"""Command-line entry point.

Exit codes: 0 success, 2 usage error (unknown flag or bad value), 3 config
error, 4 missing input file, 5 validation or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .nn import CheckpointError
from .config import AgentConfig, ConfigError, EncoderConfig, EnvConfig, ScenarioConfig, dump_config, load_config

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_INVALID = 0, 2, 3, 4, 5

log = logging.getLogger("cherlab")


class ValidationFailure(RuntimeError):
    pass


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _summary(path: Path, title: str, items: dict) -> str:
    lines = [title, "=" * len(title)]
    for k, v in items.items():
        lines.append(f"{k:>22}: {v:.6g}" if isinstance(v, float) else f"{k:>22}: {v}")
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    return text


def _run_dir(root: str, name: str) -> Path:
    d = Path(root) / name
    for sub in ("config", "checkpoints", "traces", "report"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    return d


def _sections(path: str | None) -> dict:
    if path is None:
        return {"env": EnvConfig(), "agent": AgentConfig(), "scenario": ScenarioConfig(), "encoder": EncoderConfig()}
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .agent import train, write_log

    sec = _sections(args.config)
    overrides = {"mode": args.mode}
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.lambda_p is not None:
        overrides["lambda_p"] = args.lambda_p
    if args.no_her:
        overrides["her"] = False
    agent_cfg = dataclasses.replace(sec["agent"], **overrides)
    env_cfg = sec["env"]
    name = args.name or f"{env_cfg.kind}_{agent_cfg.mode}_seed{args.seed}"
    run = _run_dir(args.runs_dir, name)
    dump_config({**sec, "agent": agent_cfg}, run / "config" / "config.yaml")

    from .env import ReachEnv

    env = ReachEnv(env_cfg)
    result = train(env, agent_cfg, seed=args.seed, checkpoint_dir=run / "checkpoints", progress=args.verbose)
    write_log(result.log, run / "traces" / "train_log.csv")
    if agent_cfg.mode == "lagrangian":
        _write_csv(run / "traces" / "multiplier.csv",
                   [{"iteration": i, "lambda_before": a, "violation": v, "lambda_after": b}
                    for i, (a, v, b) in enumerate(result.agent.multiplier_trace)])
    ckpt = run / "checkpoints" / "final.ckpt"
    result.agent.save(ckpt, env_cfg, meta={"episode": agent_cfg.episodes, "seed": args.seed})
    ev = result.agent.evaluate(env, agent_cfg.eval_episodes)
    row = {"name": name, "kind": env_cfg.kind, "mode": agent_cfg.mode, "lambda_p": agent_cfg.lambda_p,
           "her": agent_cfg.her, "seed": args.seed, "episodes": agent_cfg.episodes,
           "success_rate": ev["success"], "e1": ev["e1"], "e2": ev["e2"], "cost_value": ev["cost_value"],
           "final_lambda": result.agent.nets.lam, "seconds": result.seconds}
    _write_csv(run / "report" / "eval.csv", [row])
    print(_summary(run / "report" / "summary.txt", f"train {name}", row), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import evaluate_policy, load_agent, mass_sweep

    if args.episodes <= 0:
        raise ValidationFailure("--episodes must be positive")
    agent, env_cfg = load_agent(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "report"
    out.mkdir(parents=True, exist_ok=True)
    if args.mass_sweep:
        rows = mass_sweep(agent, env_cfg, args.episodes)
    else:
        rows = [evaluate_policy(agent, env_cfg, args.episodes, random_start=args.random_start)]
    _write_csv(out / "eval_policy.csv", rows)
    text = ""
    for r in rows:
        text += _summary(out / "eval_summary.txt", f"eval {Path(args.checkpoint).name} (mass x{r['base_mass_scale']})", r)
    (out / "eval_summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_track(args) -> int:
    from .harness import load_agent, run_tracking_scenario
    from .pose import EncoderNet

    sec = _sections(args.config)
    over = {"omega": args.omega, "radius": args.radius}
    if args.steps is not None:
        over["steps"] = args.steps
    if args.joint_rate_limit is not None:
        over["joint_rate_limit"] = args.joint_rate_limit
    if args.estimator is not None:
        over["estimator"] = args.estimator
    if args.seed is not None:
        over["seed"] = args.seed
    sc = dataclasses.replace(sec["scenario"], **over)
    agent, env_cfg = load_agent(args.checkpoint)
    encoder = None
    if sc.estimator == "encoder":
        path = args.encoder or sc.encoder_checkpoint
        if not path or not Path(path).is_file():
            raise FileNotFoundError(f"encoder checkpoint not found: {path}")
        encoder = EncoderNet.load(path)
    res = run_tracking_scenario(agent, env_cfg, sc, encoder)
    out = Path(args.out) if args.out else Path("runs") / f"track_w{sc.omega:g}_r{sc.radius:g}"
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "report").mkdir(parents=True, exist_ok=True)
    res.write_trace(out / "traces" / "tracking.csv")
    for i, tr in enumerate(res.trackers):
        if tr is not None:
            tr.write_trace(out / "traces" / f"ekf_target{i + 1}.csv")
    m = res.metrics
    row = {"omega": sc.omega, "radius": sc.radius, "steps": sc.steps, "final_e1": float(m.e1[-1]),
           "final_e2": float(m.e2[-1]), "epsilon": m.epsilon, "converged": m.converged,
           "convergence_step": m.convergence_step if m.converged else -1, "divergent": m.divergent,
           "t_b1": m.t_b[0], "t_b2": m.t_b[1], "theorem1_consistent": all(c["consistent"] for c in m.theorem1),
           "cost_value": m.cost_value}
    _write_csv(out / "report" / "tracking_summary.csv", [row])
    print(_summary(out / "report" / "summary.txt", f"track omega={sc.omega:g} rad/s", row), end="")
    return EXIT_OK


def cmd_pose_demo(args) -> int:
    from .pose import (EncoderNet, axis_angle_from_rotation, geodesic_loss, kabsch_estimate, make_rotation_pair,
                       sample_surface, train_encoder)

    if args.noise < 0 or args.pairs <= 0 or args.train_encoder < 0:
        raise ValidationFailure("--noise and --train-encoder must be >= 0 and --pairs positive")
    encoder = None
    out = Path(args.out)
    c = _sections(args.config)["encoder"]
    dims = c.shape_dims if args.shape == c.shape else None
    if args.encoder:
        if not Path(args.encoder).is_file():
            raise FileNotFoundError(f"encoder checkpoint not found: {args.encoder}")
        encoder = EncoderNet.load(args.encoder)
    elif args.train_encoder:
        tr = train_encoder(args.shape, dims=dims, n_points=args.points, noise=args.noise, max_angle=c.max_angle,
                           iterations=args.train_encoder, batch_size=c.batch_size, lr=c.lr, seed=c.seed,
                           point_layers=c.point_layers, head_layers=c.head_layers, progress=args.verbose)
        encoder = tr.net
        out.mkdir(parents=True, exist_ok=True)
        encoder.save(out / "encoder.ckpt")
    # an encoder is only meaningful inside the rotation range it was trained on
    max_angle = args.max_angle if args.max_angle is not None else (c.max_angle if encoder is not None else None)
    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(args.pairs):
        cloud = sample_surface(args.shape, args.points, 0.0, seed=int(rng.integers(2**31)), dims=dims)
        a, b, R = make_rotation_pair(cloud, seed=int(rng.integers(2**31)), noise=args.noise, max_angle=max_angle,
                                     orient=True)
        R_k = kabsch_estimate(a, b)
        est = axis_angle_from_rotation(R)
        row = {"pair": i, "true_angle": est.angle, "kabsch_error": geodesic_loss(R, R_k)}
        if encoder is not None:
            R_e, _ = encoder.estimate(a, b)
            row["encoder_error"] = geodesic_loss(R, R_e)
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "pose_errors.csv", rows)
    summary = {"shape": args.shape, "noise": args.noise, "pairs": args.pairs,
               "kabsch_mean_error": float(np.mean([r["kabsch_error"] for r in rows])),
               "kabsch_p95_error": float(np.percentile([r["kabsch_error"] for r in rows], 95))}
    if encoder is not None:
        summary["encoder_mean_error"] = float(np.mean([r["encoder_error"] for r in rows]))
    print(_summary(out / "pose_summary.txt", "pose-demo", summary), end="")
    return EXIT_OK


def collect_eval_rows(root: Path) -> list[dict]:
    rows = []
    for path in sorted(root.rglob("eval.csv")):
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    return rows


def report_table(rows: list[dict]) -> tuple[list[dict], str]:
    """Aggregate per-run eval rows by (mode, lambda_p, her); returns rows and a markdown table."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["mode"], float(r["lambda_p"]), r["her"]), []).append(r)
    table = []
    for (mode, lam, her), rs in sorted(groups.items()):
        def stat(key):
            v = np.array([float(r[key]) for r in rs])
            return float(v.mean()), float(v.std())
        s, c, e1, e2 = stat("success_rate"), stat("cost_value"), stat("e1"), stat("e2")
        table.append({"mode": mode, "lambda_p": lam, "her": her, "runs": len(rs), "success_rate": s[0],
                      "success_std": s[1], "cost_value": c[0], "cost_std": c[1], "e1": e1[0], "e2": e2[0]})
    lines = ["| mode | lambda_p | HER | runs | success | cost value | e1 (m) | e2 (m) |",
             "|---|---|---|---|---|---|---|---|"]
    for t in table:
        lines.append(f"| {t['mode']} | {t['lambda_p']:g} | {t['her']} | {t['runs']} | "
                     f"{t['success_rate']:.2f} ± {t['success_std']:.2f} | {t['cost_value']:.3f} ± {t['cost_std']:.3f} | "
                     f"{t['e1']:.4f} | {t['e2']:.4f} |")
    pen = {t["lambda_p"]: t for t in table if t["mode"] == "penalty" and t["her"] in ("True", True)}
    if 0.0 in pen and 0.5 in pen:
        ok = pen[0.5]["cost_value"] <= pen[0.0]["cost_value"]
        lines.append("")
        lines.append(f"cost ordering lambda_p=0.5 <= lambda_p=0: {'holds' if ok else 'violated'} "
                     f"({pen[0.5]['cost_value']:.3f} vs {pen[0.0]['cost_value']:.3f})")
    return table, "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    root = Path(args.inp)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    rows = collect_eval_rows(root)
    if not rows:
        raise ValidationFailure(f"no eval.csv files under {root}")
    table, text = report_table(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    _write_csv(out.with_suffix(".csv"), table)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cherlab", description="Constrained HER planner and spinning-target tracking lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a CHER agent")
    t.add_argument("--config")
    t.add_argument("--mode", choices=("penalty", "lagrangian"), default="penalty")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int)
    t.add_argument("--lambda-p", type=float)
    t.add_argument("--no-her", action="store_true")
    t.add_argument("--name")
    t.add_argument("--runs-dir", default="runs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--random-start", action="store_true")
    e.add_argument("--mass-sweep", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("track", help="track a spinning target with a trained policy")
    k.add_argument("--omega", type=float, required=True)
    k.add_argument("--radius", type=float, default=0.15)
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--config")
    k.add_argument("--steps", type=int)
    k.add_argument("--joint-rate-limit", type=float)
    k.add_argument("--estimator", choices=("kabsch", "encoder"))
    k.add_argument("--encoder")
    k.add_argument("--seed", type=int)
    k.add_argument("--out")
    k.set_defaults(func=cmd_track)

    d = sub.add_parser("pose-demo", help="rotation estimation on synthetic clouds")
    d.add_argument("--shape", choices=("box", "cylinder", "sphere"), default="box")
    d.add_argument("--noise", type=float, default=0.01)
    d.add_argument("--pairs", type=int, default=50)
    d.add_argument("--points", type=int, default=128)
    d.add_argument("--max-angle", type=float)
    d.add_argument("--encoder")
    d.add_argument("--train-encoder", type=int, default=0, metavar="ITERATIONS",
                   help="train an encoder first and save it to OUT/encoder.ckpt")
    d.add_argument("--config")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default="runs/pose_demo")
    d.set_defaults(func=cmd_pose_demo)

    r = sub.add_parser("report", help="aggregate eval CSVs into a table")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValidationFailure, FloatingPointError, ValueError, CheckpointError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
