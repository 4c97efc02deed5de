"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage, 2 validation (bad config, missing inputs),
3 runtime failure (generation or training sanity checks, planner failure).

Layout below ``output_dir``::

    demos/demo_NNN.jsonl     heldout/demo_NNN.jsonl
    models/{fk,human_ik,keypoint,object}.json, models/joint_map.json
    irl/{policy,reward}.json, irl/history.csv
    pipeline/{report.csv,episodes.jsonl,summary.json}
    eval/*.csv, eval/lba.json
    report/*.csv, report/*.png
    manifest.json
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .arms import restricted_fk_oracle
from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, config_from_dict, load_config, template_text
from .fill import (FillError, default_train_config, evaluate_keypoint_model, evaluate_object_model,
                   split_demos, train_predictor)
from .irl import (ExpertPolicy, IrlError, SortingMdp, evaluate_lba, load_policy, save_policy,
                  save_reward_model, train_airl, trajectories_from_demos)
from .metrics import MetricReport, regression_metrics
from .nn import TrainConfig
from .pipeline import (BASELINE_FOR_TASK, BenchmarkConfig, benchmark_report, episodes_jsonl,
                       report_csv, run_benchmark)
from .planners import PlanningError, load_scene, path_to_jsonl, plan
from .plotting import plot_airl_history, plot_benchmark, plot_episodes, plot_path
from .retarget import (AXES, FkModel, HumanIkModel, Retargeter, SymbolicJointMap, default_fk_train_config,
                       human_ik_pairs, human_ik_report, train_human_ik, train_restricted_fk)
from .world import GenerationError, demo_to_jsonl, generate_demonstration, load_demo

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _validation(message: str) -> StageError:
    return StageError(message, EXIT_VALIDATION)


# ------------------------------------------------------------------ manifest
def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Stage:
    """Records one subcommand's inputs, outputs and wall-clock into ``manifest.json``."""

    def __init__(self, name: str, cfg: RunConfig):
        self.name, self.cfg = name, cfg
        self.root = Path(cfg.output_dir)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.start = time.perf_counter()

    def write(self, rel: str, text: str) -> Path:
        p = self.root / rel
        atomic_write_text(p, text)
        self.outputs.append(p)
        return p

    def output(self, p) -> Path:
        self.outputs.append(Path(p))
        return Path(p)

    def input(self, p) -> Path:
        p = Path(p)
        if not p.exists():
            raise _validation(f"missing input {p}")
        self.inputs.append(p)
        return p

    def _rel(self, p: Path) -> str:
        try:
            return str(p.resolve().relative_to(self.root.resolve()))
        except ValueError:
            return str(p)

    def finish(self) -> None:
        path = self.root / "manifest.json"
        manifest = json.loads(path.read_text()) if path.exists() else {}
        manifest.update({"tool": "cobotmimic", "version": __version__,
                         "config_sha256": self.cfg.digest(),
                         "seeds": self.cfg.to_dict()["seeds"] | {"airl": self.cfg.airl.seed}})
        manifest.setdefault("stages", {})[self.name] = {
            "inputs": {self._rel(p): file_digest(p) for p in self.inputs},
            "outputs": {self._rel(p): file_digest(p) for p in self.outputs},
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
        }
        atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------- helpers
def _demo_files(directory: Path, producer: str = "gen-demos") -> list[Path]:
    files = sorted(directory.glob("demo_*.jsonl"))
    if not files:
        raise _validation(f"no demonstrations in {directory}; run `cobotmimic {producer}` first")
    return files


def _load_demos(stage: Stage, directory: Path):
    out = []
    for p in _demo_files(directory):
        try:
            out.append(load_demo(stage.input(p)))
        except (ValueError, KeyError) as e:
            raise _validation(f"{p}: {e}") from e
    return out


def _need(stage: Stage, rel: str, producer: str) -> Path:
    p = stage.root / rel
    if not p.exists():
        raise _validation(f"missing {p}; run `cobotmimic {producer}` first")
    return stage.input(p)


def _mdp(cfg: RunConfig) -> SortingMdp:
    task = cfg.task_config
    return SortingMdp(task, horizon=task.frame_budget[1] + 5)


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _load_fk(stage: Stage) -> FkModel:
    net, _, ex = load_checkpoint(_need(stage, "models/fk.json", "train-all"))
    return FkModel.from_extras(net, ex)


def _load_retargeter(stage: Stage, cfg: RunConfig) -> Retargeter:
    robot = cfg.robot_spec()
    net, _, ex = load_checkpoint(_need(stage, "models/human_ik.json", "train-all"))
    jmap = SymbolicJointMap.from_dict(json.loads(_need(stage, "models/joint_map.json", "train-all").read_text()))
    try:
        return Retargeter(HumanIkModel.from_extras(net, ex), jmap, _load_fk(stage), robot)
    except ValueError as e:
        raise _validation(f"joint map does not fit {robot.name}: {e}") from e


# ------------------------------------------------------------------ commands
def cmd_init_config(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise _validation(f"{out} exists; pass --force to overwrite")
    atomic_write_text(out, template_text())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gen_demos(args, cfg: RunConfig) -> int:
    stage = Stage("gen-demos", cfg)
    failures = []
    for sub, first, n in (("demos", cfg.seeds.demos, cfg.counts.demos),
                          ("heldout", cfg.seeds.heldout, cfg.counts.heldout)):
        for old in (stage.root / sub).glob("demo_*.jsonl"):
            old.unlink()
        for i in range(n):
            seed = first + i
            try:
                d = generate_demonstration(cfg.task_config, cfg.noise, seed)
            except (GenerationError, ValueError) as e:
                failures.append(f"seed {seed}: {e}")
                continue
            d.metadata.setdefault("seed", seed)
            stage.write(f"{sub}/demo_{i:03d}.jsonl", demo_to_jsonl(d))
    stage.finish()
    print(f"wrote {len(stage.outputs)} demonstrations to {stage.root}")
    if failures:
        for f in failures:
            print(f"generation failed: {f}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train_all(args, cfg: RunConfig) -> int:
    stage = Stage("train-all", cfg)
    demos = _load_demos(stage, stage.root / "demos")
    seed, t = cfg.seeds.train, cfg.train
    failed = []

    robot = cfg.robot_spec()
    fk_cfg = replace(default_fk_train_config(seed), max_steps=t.fk_steps,
                     decay_interval=min(2000, t.fk_steps))
    fk = train_restricted_fk(robot, t.fk_samples, fk_cfg, seed)
    save_checkpoint(stage.output(stage.root / "models/fk.json"), fk.model.net,
                    {"kind": "restricted-fk", "robot": robot.name}, fk.model.extras())
    stage.write("models/fk_report.csv", _rows_csv(fk.report))
    if not fk.max_rmse() < t.fk_rmse_bound:
        failed.append(f"restricted-fk (held-out RMSE {fk.max_rmse():.4f} m)")
    stage.write("models/joint_map.json", json.dumps(SymbolicJointMap.default(robot).to_dict(), indent=2))

    try:
        train, held = split_demos(demos)
        w, y = human_ik_pairs(train)
        hcfg = TrainConfig(base_lr=1e-3, max_steps=t.human_ik_steps, decay_factor=0.5,
                           decay_interval=min(1000, t.human_ik_steps), batch_size=128, seed=seed)
        hik = train_human_ik(w, y, hcfg, seed)
        rows = human_ik_report(hik, *human_ik_pairs(held))
    except (ValueError, FillError) as e:
        raise _validation(f"human IK training data: {e}") from e
    save_checkpoint(stage.output(stage.root / "models/human_ik.json"), hik.net, {"kind": "human-ik"},
                    hik.extras())
    stage.write("models/human_ik_report.csv", _rows_csv(rows))
    worst = max(r["rmse"] for r in rows)
    if not worst < t.human_ik_rmse_bound:
        failed.append(f"human-ik (held-out RMSE {worst:.4f} m)")

    pcfg = replace(default_train_config(seed), max_steps=t.predictor_steps,
                   decay_interval=min(600, t.predictor_steps))
    for kind in ("keypoint", "object"):
        try:
            net, report, _ = train_predictor(kind, demos, pcfg, seed)
        except FillError as e:
            raise _validation(f"{kind} predictor training data: {e}") from e
        save_checkpoint(stage.output(stage.root / f"models/{kind}.json"), net, {"kind": kind})
        stage.write(f"models/{kind}_report.csv", report.to_csv())
        if not report.max_rmse() < t.predictor_rmse_bound:
            failed.append(f"{kind} (held-out RMSE {report.max_rmse():.4f} m)")
    stage.finish()
    print(f"restricted-fk held-out max RMSE {fk.max_rmse():.4f} m")
    if failed:
        print("held-out sanity bound exceeded: " + "; ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train_irl(args, cfg: RunConfig) -> int:
    airl = cfg.airl
    if args.iters is not None:
        airl = replace(airl, iterations=args.iters)
    if args.seed is not None:
        airl = replace(airl, seed=args.seed)
    cfg = replace(cfg, airl=airl)
    stage = Stage("train-irl", cfg)
    demo_dir = Path(args.demos) if args.demos else stage.root / "demos"
    demos = _load_demos(stage, demo_dir)
    try:
        result = train_airl(trajectories_from_demos(demos), _mdp(cfg), airl)
    except IrlError as e:
        raise _validation(str(e)) from e
    save_policy(stage.output(stage.root / "irl/policy.json"), result.policy,
                {"iterations": airl.iterations, "seed": airl.seed})
    save_reward_model(stage.output(stage.root / "irl/reward.json"), result.reward_model)
    stage.write("irl/history.csv", result.history.to_csv())
    stage.finish()
    for w in result.history.warnings:
        print(f"warning: {w}", file=sys.stderr)
    h = result.history
    if h.iteration:
        print(f"final discriminator accuracy {h.disc_accuracy[-1]:.3f}, mean return {h.mean_return[-1]:.3f}")
    return EXIT_OK


def cmd_run_pipeline(args, cfg: RunConfig) -> int:
    stage = Stage("run-pipeline", cfg)
    pipe = _load_retargeter(stage, cfg)
    policy = load_policy(_need(stage, "irl/policy.json", "train-irl"), cfg.task_config)
    bench = BenchmarkConfig(cfg.ik, cfg.planner.to_planner(cfg.task_config), cfg.horizon)
    seeds = range(cfg.seeds.benchmark, cfg.seeds.benchmark + cfg.counts.episodes)
    episodes = run_benchmark(pipe, policy, _mdp(cfg), seeds, bench)
    reports = benchmark_report(episodes)
    stage.write("pipeline/report.csv", report_csv(reports))
    stage.write("pipeline/episodes.jsonl", episodes_jsonl(episodes))
    summary = _summary(episodes, reports)
    stage.write("pipeline/summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    stage.finish()
    print(report_csv(reports), end="")
    print(f"ours/baseline jerkiness {summary['jerkiness_ratio']:.3f}, "
          f"displacement {summary['displacement_ratio']:.3f}; "
          f"non-converged frames: ours {summary['nonconverged']['ours']}, "
          f"baseline {summary['nonconverged']['baseline']}")
    return EXIT_OK


def _summary(episodes, reports) -> dict:
    by = {r.method: r for r in reports}
    ours, base = episodes[0].ours.method, episodes[0].baseline.method
    return {
        "task": episodes[0].task, "episodes": len(episodes), "baseline": base,
        "jerkiness_ratio": by[ours].avg_jerkiness_deg["mean"] / by[base].avg_jerkiness_deg["mean"],
        "displacement_ratio": by[ours].avg_displacement_m["mean"] / by[base].avg_displacement_m["mean"],
        "wins_jerkiness": sum(e.wins[0] for e in episodes),
        "wins_displacement": sum(e.wins[1] for e in episodes),
        "wins_both": sum(all(e.wins) for e in episodes),
        "policy_finished": sum(e.finished for e in episodes),
        "planner_failures": sum(not e.planner_ok for e in episodes),
        "nonconverged": {"ours": sum(int((~e.ours.converged).sum()) for e in episodes),
                         "baseline": sum(int((~e.baseline.converged).sum()) for e in episodes)},
    }


def cmd_plan_baseline(args, cfg: RunConfig) -> int:
    stage = Stage("plan-baseline", cfg)
    planner = args.planner or BASELINE_FOR_TASK[cfg.task]
    base = replace(cfg.planner.to_planner(cfg.task_config), seed=args.seed)
    try:
        scene = load_scene(stage.input(args.scene), base) if args.scene else base
    except (PlanningError, ValueError, KeyError) as e:
        raise _validation(f"scene {args.scene}: {e}") from e
    task = cfg.task_config
    start = np.array(args.start if args.start else task.home, dtype=np.float64)
    goal = np.array(args.goal if args.goal else task.bin, dtype=np.float64)
    try:
        path = plan(planner, start, goal, scene)
    except PlanningError as e:
        raise _validation(str(e)) from e
    name = f"baseline/{planner}_seed{args.seed}"
    stage.write(f"{name}.jsonl", path_to_jsonl(path))
    stage.output(plot_path(path.points, stage.root / f"{name}.png", scene.obstacles))
    stage.finish()
    print(f"{planner}: success={path.success} nodes={path.nodes_expanded} "
          f"waypoints={len(path)} length={path.length:.3f} m")
    return EXIT_OK if path.success else EXIT_RUNTIME


def cmd_eval(args, cfg: RunConfig) -> int:
    stage = Stage("eval", cfg)
    heldout = _load_demos(stage, stage.root / "heldout")
    pairs = trajectories_from_demos(heldout).pairs()
    if not len(pairs):
        raise _validation("held-out set has no state-action pairs")
    if args.expert:
        policy, name = ExpertPolicy(cfg.task_config), "expert"
    else:
        policy, name = load_policy(_need(stage, "irl/policy.json", "train-irl"), cfg.task_config), "policy"
    lba = evaluate_lba(policy, pairs)
    stage.write("eval/lba.json", json.dumps({"policy": name, "lba_percent": lba,
                                             "tolerance_m": 0.02, "pairs": len(pairs)},
                                            indent=2, sort_keys=True) + "\n")
    written = []
    models = stage.root / "models"
    if (models / "fk.json").exists():
        fk = _load_fk(stage)
        rng = np.random.default_rng(cfg.seeds.heldout)
        lo, hi = cfg.robot_spec().mapped_limits
        q = rng.uniform(lo, hi, size=(2000, 4))
        p, pred = restricted_fk_oracle(cfg.robot_spec(), q), fk(q)
        rows = [{"axis": a, **regression_metrics(pred[:, i], p[:, i])} for i, a in enumerate(AXES)]
        stage.write("eval/fk.csv", _rows_csv(rows))
        written.append("fk")
    if (models / "human_ik.json").exists():
        net, _, ex = load_checkpoint(stage.input(models / "human_ik.json"))
        stage.write("eval/human_ik.csv", _rows_csv(human_ik_report(HumanIkModel.from_extras(net, ex),
                                                                   *human_ik_pairs(heldout))))
        written.append("human_ik")
    for kind, fn in (("keypoint", evaluate_keypoint_model), ("object", evaluate_object_model)):
        if (models / f"{kind}.json").exists():
            net, _, _ = load_checkpoint(stage.input(models / f"{kind}.json"))
            try:
                stage.write(f"eval/{kind}.csv", fn(net, heldout).to_csv())
                written.append(kind)
            except FillError as e:
                print(f"skipped {kind} evaluation: {e}", file=sys.stderr)
    stage.finish()
    print(f"LBA ({name}) {lba:.1f}% on {len(pairs)} held-out pairs")
    if written:
        print("regression CSVs: " + ", ".join(written))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    stage = Stage("report", cfg)
    ep_path = _need(stage, "pipeline/episodes.jsonl", "run-pipeline")
    records = [json.loads(l) for l in ep_path.read_text().splitlines() if l.strip()]
    if not records:
        raise _validation(f"{ep_path} is empty")
    reports = []
    for m in dict.fromkeys(r["method"] for r in records):
        rows = [r for r in records if r["method"] == m]
        reports.append(MetricReport.from_episodes(m, [r["time"] for r in rows],
                                                  [r["jerkiness"] for r in rows],
                                                  [r["displacement"] for r in rows]))
    stage.write("report/benchmark.csv", report_csv(reports))
    stage.output(plot_benchmark(records, stage.root / "report/benchmark.png"))
    stage.output(plot_episodes(records, stage.root / "report/episodes.png"))
    hist = stage.root / "irl/history.csv"
    if hist.exists():
        rows = list(csv.DictReader(io.StringIO(stage.input(hist).read_text())))
        if rows:
            stage.output(plot_airl_history(rows, stage.root / "report/airl_history.png"))
    stage.finish()
    print(report_csv(reports), end="")
    print(f"figures written to {stage.root / 'report'}")
    return EXIT_OK


COMMANDS = {"gen-demos": cmd_gen_demos, "train-all": cmd_train_all, "train-irl": cmd_train_irl,
            "run-pipeline": cmd_run_pipeline, "plan-baseline": cmd_plan_baseline,
            "eval": cmd_eval, "report": cmd_report}


# -------------------------------------------------------------------- parser
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cobotmimic", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cobotmimic {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init-config", help="write a commented default configuration")
    s.add_argument("--out", default="run.yaml")
    s.add_argument("--force", action="store_true")

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        sp.add_argument("--output-dir", help="override output_dir")
        return sp

    g = common(sub.add_parser("gen-demos", help="generate scripted demonstrations"))
    g.add_argument("--count", type=int, help="training demonstrations")
    g.add_argument("--seed", type=int, help="first training seed")
    g.add_argument("--noise-std", type=float, help="keypoint noise std, meters")
    g.add_argument("--dropout", type=float, help="keypoint frame dropout probability")
    common(sub.add_parser("train-all", help="train FK, human IK and gap-filling models"))
    t = common(sub.add_parser("train-irl", help="adversarial IRL on demonstrations"))
    t.add_argument("--demos", help="directory of demonstration JSONL files")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    common(sub.add_parser("run-pipeline", help="benchmark the retargeted policy against the planner"))
    b = common(sub.add_parser("plan-baseline", help="plan one baseline path"))
    b.add_argument("--planner", choices=["rrt", "rrt-connect"])
    b.add_argument("--scene", help="scene JSON (bounds and obstacle boxes)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"))
    b.add_argument("--goal", type=float, nargs=3, metavar=("X", "Y", "Z"))
    e = common(sub.add_parser("eval", help="LBA and regression metrics on held-out demonstrations"))
    e.add_argument("--expert", action="store_true", help="evaluate the scripted expert instead")
    common(sub.add_parser("report", help="benchmark CSV and figures"))
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    if args.command == "gen-demos":
        counts, seeds, noise = cfg.counts, cfg.seeds, cfg.noise
        try:
            if args.count is not None:
                counts = replace(counts, demos=args.count)
            if args.seed is not None:
                seeds = replace(seeds, demos=args.seed)
            if args.noise_std is not None:
                noise = replace(noise, keypoint_noise_std=args.noise_std)
            if args.dropout is not None:
                noise = replace(noise, dropout_prob=args.dropout)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        cfg = replace(cfg, counts=counts, seeds=seeds, noise=noise)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-config":
            return cmd_init_config(args)
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
