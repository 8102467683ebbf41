"""Command-line entry point: ``graphcond <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbones import ArchSpec, TrainOpts
from .condense import (METHODS, CondenseConfig, generate_expert_trajectories, load_condensed,
                       load_trajectories, save_condensed, trajectory_bytes)
from .evaluate import (CGL_METHODS, cgl_run, cross_arch, format_table, run_experiment,
                       test_protocol, write_csv, write_jsonl)
from .graph import Graph, load_graph, save_graph, sbm_generate, split_class_il
from .validate import make_validator

PRESETS = {
    "sbm3": dict(blocks=[100, 100, 100], p_in=0.2, p_out=0.02, d=16, mean_sep=1.5),
    "sbm6": dict(blocks=[60] * 6, p_in=0.2, p_out=0.02, d=16, mean_sep=1.5),
}


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# Configuration

def read_config(path) -> dict:
    """INI-style ``key = value`` file; returns ``{section: {key: value}}``."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(p.read_text())
    except configparser.Error as exc:
        raise UsageError(f"cannot parse {p}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def resolve_dataset(spec: str) -> Graph:
    """A graph directory, or a preset such as ``sbm3`` / ``sbm6:seed=4``."""
    if spec is None:
        raise UsageError("--dataset is required")
    path = Path(spec)
    if path.is_dir():
        return load_graph(path)
    name, _, rest = spec.partition(":")
    if name not in PRESETS:
        raise UsageError(f"dataset {spec!r} is neither a directory nor a preset ({', '.join(PRESETS)})")
    kw = dict(PRESETS[name], seed=0)
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        if key == "seed":
            kw["seed"] = int(val)
        elif key == "setting":
            kw["setting"] = val
        elif key in ("p_in", "p_out", "mean_sep"):
            kw[key] = float(val)
        else:
            raise UsageError(f"unknown preset option {key!r}")
    return sbm_generate(**kw)


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --seeds value {text!r}") from None


def build_config(args, sections: dict, seed: int) -> CondenseConfig:
    values = dict(sections.get("condense", {}))
    exp = sections.get("experiment", {})
    method = args.method or exp.get("method")
    budget = args.budget if args.budget is not None else exp.get("budget")
    if method is None or budget is None:
        raise UsageError("--method and --budget are required")
    values.update(method=method, budget=str(budget), seed=str(seed))
    try:
        return CondenseConfig.from_mapping(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def train_opts(sections: dict) -> TrainOpts:
    t = sections.get("train", {})
    try:
        d = TrainOpts()
        return TrainOpts(epochs=int(t.get("epochs", d.epochs)), lr=float(t.get("lr", d.lr)),
                         weight_decay=float(t.get("weight_decay", d.weight_decay)))
    except ValueError as exc:
        raise UsageError(f"bad [train] section: {exc}") from None


def _arch(text: str) -> ArchSpec:
    try:
        return ArchSpec.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def echo_config(out: Path, args, sections: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = ["[cli]"] + [f"{k} = {v}" for k, v in sorted(vars(args).items()) if k != "func"]
    for sec, vals in sections.items():
        lines += ["", f"[{sec}]"] + [f"{k} = {v}" for k, v in vals.items()]
    (out / "config.txt").write_text("\n".join(lines) + "\n")


def _trajectories(args, graph, arch, out: Path):
    root = Path(args.trajectories) if args.trajectories else out / "trajectories"
    trajs = load_trajectories(root, arch)
    if not trajs:
        generate_expert_trajectories(graph, arch, count=8, epochs=100, snapshot_interval=10,
                                     out_dir=root)
        trajs = load_trajectories(root, arch)
    return trajs, root


# ---------------------------------------------------------------------------
# Commands

def cmd_gen_data(args, sections):
    graph = resolve_dataset(args.dataset or "sbm3")
    save_graph(graph, args.out)
    print(f"wrote {graph.n} nodes, {graph.num_edges} edges, {graph.num_classes} classes to {args.out}")


def cmd_condense(args, sections):
    graph = resolve_dataset(args.dataset or sections.get("experiment", {}).get("dataset"))
    arch = _arch(args.backbone)
    out = Path(args.out)
    seeds = parse_seeds(args.seeds)
    configs = [build_config(args, sections, s) for s in seeds]
    opts = train_opts(sections)
    echo_config(out, args, sections)
    rows = []
    for cfg in configs:
        validator = make_validator(args.validator, graph, seed=cfg.seed)
        trajs = None
        if cfg.method == "sfgc":
            trajs, _ = _trajectories(args, graph, arch, out)
        rr, res = run_experiment(graph, cfg, arch, validator, test_seeds=range(args.repeats),
                                 epochs=args.epochs, trajectories=trajs, train_opts=opts)
        run_dir = out / f"seed_{cfg.seed}"
        save_condensed(res.condensed, run_dir / "condensed", cfg.budget, cfg.fingerprint())
        write_jsonl([r.to_dict() for r in res.records], run_dir / "history.jsonl")
        write_jsonl([rr.to_record()], out / "results.jsonl")
        rows.append({"method": cfg.method, "budget": cfg.budget, "arch": str(arch), "seed": cfg.seed,
                     "test_mean": rr.test_mean, "test_std": rr.test_std, "epochs": res.epochs_run})
    cols = ["method", "budget", "arch", "seed", "test_mean", "test_std", "epochs"]
    table = format_table(rows, cols)
    (out / "results.txt").write_text(table + "\n")
    write_csv(rows, cols, out / "results.csv")
    print(table)


def _load_condensed(args):
    if not args.condensed:
        raise UsageError("--condensed is required")
    path = Path(args.condensed)
    if not (path / "meta").exists():
        raise FileNotFoundError(f"no condensed graph at {path}")
    return load_condensed(path)


def cmd_evaluate(args, sections):
    graph = resolve_dataset(args.dataset)
    cg = _load_condensed(args)
    arch = _arch(args.backbone)
    stats = test_protocol(cg, graph, arch, seeds=parse_seeds(args.seeds), opts=train_opts(sections))
    row = {"arch": str(arch), "test_mean": stats.mean, "test_std": stats.std}
    print(format_table([row], list(row)))
    if args.out:
        write_jsonl([{**row, "accuracies": stats.accuracies}], Path(args.out) / "evaluate.jsonl")


def cmd_transfer(args, sections):
    graph = resolve_dataset(args.dataset)
    cg = _load_condensed(args)
    archs = [_arch(a) for a in args.archs.split(",")]
    table = cross_arch(cg, graph, archs, repeats=args.repeats, opts=train_opts(sections))
    rows = [{"arch": k, "test_mean": v.mean, "test_std": v.std} for k, v in table.items()]
    cols = ["arch", "test_mean", "test_std"]
    print(format_table(rows, cols))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(rows, out / "transfer.jsonl")
        write_csv(rows, cols, out / "transfer.csv")
        (out / "transfer.txt").write_text(format_table(rows, cols) + "\n")


def cmd_cgl(args, sections):
    graph = resolve_dataset(args.dataset or "sbm6")
    tasks = split_class_il(graph, 2)
    arch = _arch(args.backbone)
    methods = args.methods.split(",")
    for m in methods:
        if m not in CGL_METHODS:
            raise UsageError(f"method {m!r} is not available for continual learning")
    overrides = sections.get("condense", {})
    rows, records = [], []
    for m in methods:
        aps = []
        for seed in parse_seeds(args.seeds):
            rep = cgl_run(tasks, m, args.budget, arch, overrides, seed=seed,
                          condense_epochs=args.epochs or 50)
            aps.append(rep.ap)
            records.append({**rep.to_record(), "seed": seed})
            print(f"{m} seed {seed}: AP {rep.ap:.4f}")
            for t, row in enumerate(rep.matrix):
                print("   " + " ".join(f"{v:.3f}" for v in row))
        rows.append({"method": m, "ap_mean": float(np.mean(aps)), "ap_std": float(np.std(aps))})
    cols = ["method", "ap_mean", "ap_std"]
    print(format_table(rows, cols))
    if args.out:
        out = Path(args.out)
        write_jsonl(records, out / "cgl.jsonl")
        write_csv(rows, cols, out / "cgl.csv")
        (out / "cgl.txt").write_text(format_table(rows, cols) + "\n")


def cmd_traj_gen(args, sections):
    graph = resolve_dataset(args.dataset)
    arch = _arch(args.backbone)
    t0 = time.perf_counter()
    trajs = generate_expert_trajectories(graph, arch, args.count, args.traj_epochs, args.interval,
                                         seed=parse_seeds(args.seeds)[0], out_dir=args.out)
    seconds = time.perf_counter() - t0
    print(f"{len(trajs)} trajectories, {trajectory_bytes(args.out)} bytes, {seconds:.2f}s")


# -- sweep ------------------------------------------------------------------

@dataclass
class SweepSpec:
    trials: int
    space: dict
    seed: int = 0

    def __post_init__(self):
        if self.trials < 3:
            raise ValueError("top-3 selection needs at least 3 trials")

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name, (kind, *args) in self.space.items():
            if kind == "log_uniform":
                lo, hi = args
                out[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
            elif kind == "choice":
                out[name] = args[0][int(rng.integers(len(args[0])))]
            else:
                raise ValueError(f"unknown sampling kind {kind!r}")
        return out


def default_space(method: str) -> dict:
    """Search spaces per method (lr ranges and SFGC epoch grids)."""
    space = {"lr_feat": ("log_uniform", 1e-6, 1.0)}
    if method in ("gcond", "doscond", "gcdm"):
        space["lr_adj"] = ("log_uniform", 1e-6, 1.0)
    if method == "sfgc":
        space.update(lr_student=("log_uniform", 1e-3, 1.0),
                     expert_epochs=("choice", list(range(10, 801, 10))),
                     max_start_epoch=("choice", list(range(0, 101, 10))),
                     student_epochs=("choice", list(range(10, 301, 10))))
    if method == "gdem":
        space["lr_eigvec"] = ("log_uniform", 1e-6, 1.0)
    return space


def top3(trials: list[dict]) -> dict:
    """Rank by validation score (ties: earlier trial) and aggregate the top three tests."""
    ranked = sorted(trials, key=lambda t: (-t["val_score"], t["trial"]))
    best = [t["test_mean"] for t in ranked[:3]]
    return {"leaderboard": ranked, "top3_mean": float(np.mean(best)), "top3_std": float(np.std(best))}


def _run_trial(payload):
    graph, cfg, arch, validator_spec, epochs, repeats, trajs, opts = payload
    validator = make_validator(validator_spec, graph, seed=cfg.seed)
    try:
        rr, _ = run_experiment(graph, cfg, arch, validator, test_seeds=range(repeats), epochs=epochs,
                               trajectories=trajs, train_opts=opts)
    except Exception as exc:  # a diverging trial is recorded, not fatal
        return {"error": f"{type(exc).__name__}: {exc}"}
    best = max((h["score"] for h in rr.history), default=0.0)
    return {"val_score": best, "test_mean": rr.test_mean, "test_std": rr.test_std}


def cmd_sweep(args, sections):
    graph = resolve_dataset(args.dataset)
    arch = _arch(args.backbone)
    base = build_config(args, sections, parse_seeds(args.seeds)[0])
    try:
        spec = SweepSpec(args.trials, default_space(base.method), base.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    echo_config(out, args, sections)
    trajs = None
    if base.method == "sfgc":
        trajs, _ = _trajectories(args, graph, arch, out)
        last = min(t.epochs[-1] for t in trajs)
        spec.space["expert_epochs"] = ("choice", [e for e in range(10, 801, 10) if e <= last - 10] or [10])
    rng = np.random.default_rng(spec.seed)
    values = base.to_dict()
    payloads, samples = [], []
    for k in range(spec.trials):
        sample = spec.sample(rng)
        samples.append(sample)
        cfg = CondenseConfig(**{**values, **sample})
        payloads.append((graph, cfg, arch, args.validator, args.epochs, args.repeats, trajs,
                         train_opts(sections)))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_run_trial, payloads))
    else:
        results = [_run_trial(p) for p in payloads]
    trials = []
    for k, (sample, res) in enumerate(zip(samples, results)):
        rec = {"trial": k, **sample, **res}
        write_jsonl([rec], out / "trials.jsonl")
        if "error" not in res:
            trials.append(rec)
    if not trials:
        raise RuntimeError("all sweep trials failed")
    agg = top3(trials)
    cols = ["trial", *spec.space, "val_score", "test_mean"]
    print(format_table(agg["leaderboard"], cols))
    print(f"top-3 test accuracy: {100 * agg['top3_mean']:.2f} ± {100 * agg['top3_std']:.2f}")
    (out / "leaderboard.txt").write_text(format_table(agg["leaderboard"], cols) + "\n")
    write_csv(agg["leaderboard"], cols, out / "leaderboard.csv")
    (out / "summary.json").write_text(json.dumps(
        {"top3_mean": agg["top3_mean"], "top3_std": agg["top3_std"], "trials": len(trials)}, indent=2))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="graph directory or preset (sbm3, sbm6[:seed=N])")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--budget", type=int)
    common.add_argument("--backbone", default="gcn", help="gcn or sgc (ArchSpec text accepted)")
    common.add_argument("--validator", default="gcn", help="gcn, sgc or gntk[:mode=linear]")
    common.add_argument("--seeds", default="0", help="comma-separated seeds")
    common.add_argument("--out", default="runs/latest")
    common.add_argument("--config", help="INI file with [experiment], [condense], [train] sections")
    common.add_argument("--epochs", type=int, help="cap on condensation epochs")
    common.add_argument("--repeats", type=int, default=3, help="test repeats per condensed graph")

    p = argparse.ArgumentParser(prog="graphcond", description="Graph condensation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset").set_defaults(func=cmd_gen_data)
    sub.add_parser("condense", parents=[common], help="condense, validate and test").set_defaults(func=cmd_condense)
    ev = sub.add_parser("evaluate", parents=[common], help="test a saved condensed graph")
    ev.add_argument("--condensed")
    ev.set_defaults(func=cmd_evaluate)
    tr = sub.add_parser("transfer", parents=[common], help="cross-architecture table")
    tr.add_argument("--condensed")
    tr.add_argument("--archs", default="mlp,sgc,gcn,sage,appnp")
    tr.set_defaults(func=cmd_transfer)
    cg = sub.add_parser("cgl", parents=[common], help="class-incremental continual learning")
    cg.add_argument("--methods", default="whole,random,dm")
    cg.set_defaults(func=cmd_cgl)
    tg = sub.add_parser("traj-gen", parents=[common], help="generate expert trajectories")
    tg.add_argument("--count", type=int, default=8)
    tg.add_argument("--traj-epochs", type=int, default=100)
    tg.add_argument("--interval", type=int, default=10)
    tg.set_defaults(func=cmd_traj_gen)
    sw = sub.add_parser("sweep", parents=[common], help="random-search sweep with top-3 report")
    sw.add_argument("--trials", type=int, default=10)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--trajectories", help="expert trajectory root (sfgc)")
    sw.set_defaults(func=cmd_sweep)
    for name in ("condense",):
        sub.choices[name].add_argument("--trajectories", help="expert trajectory root (sfgc)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        sections = read_config(args.config)
        if args.command in ("condense", "sweep"):
            exp = sections.get("experiment", {})
            args.dataset = args.dataset or exp.get("dataset")
            if args.method is None and exp.get("method") not in (None, *METHODS):
                raise UsageError(f"unknown method {exp.get('method')!r}")
        args.func(args, sections)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        if os.environ.get("GRAPHCOND_DEBUG"):
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
