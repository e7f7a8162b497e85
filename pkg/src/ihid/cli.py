"""``ihid`` command line: one subcommand per pipeline step.

Exit codes: 0 success, 1 usage error, 2 data error. Every command prints a
one-line JSON summary on stdout and writes its artifacts to ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .detector import Detector, Thresholds, read_jsonl, write_jsonl
from .diffusion import DiffusionModel, train_diffusion
from .evalbench import experiment as ex
from .evalbench.config import ConfigError, load_config
from .evalbench.world import PRESETS, synth_world
from .forge import ForgeError, forge_many
from .geojson import export_geojson
from .graph import SubgoalGraph, build_graph
from .iql import QFunction, train_iql
from .trajectory import ParseError, SegmentationError, parse_trajectories, write_trajectories

log = logging.getLogger("ihid")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -------------------------------------------------------------- resolution


def resolve_seed(args, cfg: dict | None = None) -> int:
    """--seed, then IHID_SEED, then the config's runner seed, then 0."""
    if args.seed is not None:
        return args.seed
    env = os.environ.get("IHID_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"IHID_SEED must be an integer, got {env!r}")
    if cfg is not None:
        return int(cfg["runner"].get("seed", 0))
    return 0


def _config(args) -> dict:
    cfg = load_config(args.config)
    cfg["runner"]["seed"] = resolve_seed(args, cfg)
    return cfg


def _set(cfg, section, key, value):
    if value is not None:
        cfg[section][key] = value


def _load_graph(path) -> SubgoalGraph:
    g = SubgoalGraph.load(path)
    if g.bbox is None:
        raise DataError(f"{path}: graph has no bounding box")
    return g


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_ingest(args):
    trajs = parse_trajectories(args.input)
    write_trajectories(trajs, args.out, with_label=True)
    return {"trajectories": len(trajs), "points": int(sum(len(t) for t in trajs))}


def cmd_synth(args):
    cfg = _config(args)
    _set(cfg, "world", "preset", args.world)
    seed = cfg["runner"]["seed"]
    spec = ex.world_spec(cfg)
    n = args.n if args.n is not None else spec.n_trajectories
    _, trajs, _ = synth_world(spec, n=n, seed=seed, prefix=args.prefix)
    write_trajectories(trajs, args.out, with_label=True)
    return {"trajectories": len(trajs), "world": cfg["world"]["preset"], "seed": seed}


def cmd_build_graph(args):
    cfg = _config(args)
    for k in ("f_min", "d_min", "radius", "theta_turn", "window", "bandwidth"):
        _set(cfg, "graph", k, getattr(args, k))
    trajs = parse_trajectories(args.input)
    g = build_graph(trajs, ex.graph_params(cfg))
    g.save(args.out)
    return {"nodes": len(g.nodes), "edges": len(g.edges)}


def cmd_forge(args):
    cfg = _config(args)
    for k in ("d", "omega", "omega_star", "sigma"):
        _set(cfg, "forge", k, getattr(args, k))
    trajs = parse_trajectories(args.input)
    g = _load_graph(args.graph) if args.graph else None
    if args.kind == "small_detour" and g is None:
        raise UsageError("forge --kind small_detour requires --graph")
    rng = np.random.default_rng(cfg["runner"]["seed"])
    out = forge_many(args.kind, trajs, args.n, ex.forge_params(cfg), rng, g, g.bbox if g else None)
    write_trajectories(out, args.out, with_label=True)
    return {"kind": args.kind, "forged": len(out)}


def _training(args, L):
    g = _load_graph(args.graph)
    trajs = parse_trajectories(args.input)
    seqs, legs, sg = ex.training_data(trajs, g, L)
    if not seqs:
        raise DataError("no input trajectory could be segmented on this graph")
    return g, seqs, legs, sg


def cmd_train_high(args):
    cfg = _config(args)
    for k in ("epochs", "lr", "representation"):
        _set(cfg, "iql", k, getattr(args, k))
    g, seqs, _, _ = _training(args, 2)
    icfg = ex.iql_config(cfg)
    res = train_iql(seqs, g, icfg)
    res.q.save(args.out, icfg)
    return {"sequences": len(seqs), "epochs_run": len(res.losses), "final_loss": res.losses[-1]}


def cmd_train_low(args):
    cfg = _config(args)
    for k in ("profile", "steps", "rho", "t_inf"):
        _set(cfg, "diffusion", k, getattr(args, k))
    dcfg = ex.diffusion_config(cfg)
    g, _, legs, sg = _training(args, dcfg.L)
    dm = train_diffusion(legs, sg, dcfg)
    dm.save(args.out)
    return {"legs": len(legs), "steps": len(dm.losses), "final_loss": float(np.mean(dm.losses[-50:]))}


def cmd_detect(args):
    cfg = _config(args)
    _set(cfg, "thresholds", "gamma_q", args.gamma_q)
    _set(cfg, "thresholds", "beta_e", args.beta_e)
    t = cfg["thresholds"]
    d = Thresholds()
    th = Thresholds(d.gamma_q if t.get("gamma_q") is None else float(t["gamma_q"]),
                    d.beta_e if t.get("beta_e") is None else float(t["beta_e"]))
    g = _load_graph(args.graph)
    q = QFunction.load(args.high)
    dm = DiffusionModel.load(args.low)
    trajs = parse_trajectories(args.input)
    det = Detector(q, dm, g, seed=cfg["runner"]["seed"], samples=args.samples, t_inf=args.t_inf)
    reports = det.detect_many(trajs, th, args.mode)
    write_jsonl(reports, args.out)
    return {"trajectories": len(reports), "anomalies": sum(r.is_anomaly for r in reports),
            "gamma_q": th.gamma_q, "beta_e": th.beta_e}


def _bundle(args, cfg):
    if args.cache_dir:
        cfg["runner"]["cache_dir"] = args.cache_dir
    return ex.build_bundle(cfg)


def _brief(per_type: dict) -> dict:
    return {k: v["f1"] for k, v in per_type.items()}


def cmd_evaluate(args):
    cfg = _config(args)
    _set(cfg, "runner", "repeats", args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = ex.run_experiment(cfg, _bundle(args, cfg), reports_path=out / "reports.jsonl")
    wall = res.pop("wall_time_s")
    _write_json(out / "result.json", res)
    _write_json(out / "timing.json", {"wall_time_s": wall})
    return {"f1": _brief(res["per_type"]), "thresholds": res["thresholds"]}


def cmd_ablate(args):
    cfg = _config(args)
    res = ex.ablate(cfg, _bundle(args, cfg))
    _write_json(args.out, res)
    return {"union_holds": res["union_holds"],
            "f1": {m: _brief(v["per_type"]) for m, v in res["variants"].items()}}


def cmd_sweep(args):
    cfg = _config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}")
    if args.param == "t_inf":
        values = [int(v) for v in values]
    res = ex.sweep(cfg, args.param, values, _bundle(args, cfg))
    _write_json(args.out, res)
    return {"param": args.param, "points": len(res["results"]),
            "f1": [_brief(r["per_type"]) for r in res["results"]]}


def cmd_export_geojson(args):
    trajs = parse_trajectories(args.input)
    reports = read_jsonl(args.report) if args.report else None
    g = _load_graph(args.graph) if args.graph else None
    export_geojson(args.out, trajs, reports, g)
    return {"trajectories": len(trajs), "nodes": 0 if g is None else len(g.nodes)}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ihid", description="Hierarchical trajectory anomaly detection.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def cmd(name, fn, help_, inp=True, out_help="output path"):
        s = sub.add_parser(name, help=help_, description=help_)
        s.set_defaults(fn=fn)
        s.add_argument("--seed", type=int, default=None, help="random seed (fallback: $IHID_SEED)")
        s.add_argument("--config", default=None, help="experiment config JSON")
        s.add_argument("--out", required=True, help=out_help)
        s.add_argument("--workers", type=int, default=1, help="torch intra-op threads")
        s.add_argument("-v", "--verbose", action="store_true")
        if inp:
            s.add_argument("--input", required=True, help="trajectory CSV (traj_id,t,lat,lon[,label])")
        return s

    cmd("ingest", cmd_ingest, "validate and clean a trajectory CSV")
    s = cmd("synth", cmd_synth, "generate normal trajectories from a synthetic world", inp=False)
    s.add_argument("--world", choices=sorted(PRESETS), default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--prefix", default="w")
    s = cmd("build-graph", cmd_build_graph, "build the subgoal graph", out_help="graph JSON")
    s.add_argument("--f-min", dest="f_min", type=int)
    s.add_argument("--d-min", dest="d_min", type=float)
    s.add_argument("--radius", type=float)
    s.add_argument("--theta-turn", dest="theta_turn", type=float)
    s.add_argument("--window", type=int)
    s.add_argument("--bandwidth", type=float)
    s = cmd("forge", cmd_forge, "forge anomalies from normal trajectories")
    s.add_argument("--kind", required=True, choices=list(ex.ANOMALY_TYPES))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--graph", help="graph JSON (required for small_detour)")
    s.add_argument("--d", type=float)
    s.add_argument("--omega", type=float)
    s.add_argument("--omega-star", dest="omega_star", type=float)
    s.add_argument("--sigma", type=float)
    s = cmd("train-high", cmd_train_high, "train the Q-function", out_help="checkpoint manifest")
    s.add_argument("--graph", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--representation", choices=["tabular", "mlp"])
    s = cmd("train-low", cmd_train_low, "train the diffusion model", out_help="checkpoint manifest")
    s.add_argument("--graph", required=True)
    s.add_argument("--profile", choices=["chengdu", "ais", "synthetic"])
    s.add_argument("--steps", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--t-inf", dest="t_inf", type=int)
    s = cmd("detect", cmd_detect, "run the two-stage detector", out_help="JSON-lines report")
    s.add_argument("--graph", required=True)
    s.add_argument("--high", required=True, help="Q checkpoint")
    s.add_argument("--low", required=True, help="diffusion checkpoint")
    s.add_argument("--gamma-q", dest="gamma_q", type=float)
    s.add_argument("--beta-e", dest="beta_e", type=float)
    s.add_argument("--t-inf", dest="t_inf", type=int)
    s.add_argument("--samples", type=int, default=1, help="reconstructions averaged per leg")
    s.add_argument("--mode", choices=["full", "high", "low"], default="full")
    s = cmd("evaluate", cmd_evaluate, "repeated evaluation on a synthetic world", inp=False,
            out_help="output directory (result.json, reports.jsonl, timing.json)")
    s.add_argument("--repeats", type=int)
    s.add_argument("--cache-dir", dest="cache_dir", help="reuse trained models across runs")
    s = cmd("ablate", cmd_ablate, "stage-1-only / stage-2-only / full comparison", inp=False)
    s.add_argument("--cache-dir", dest="cache_dir")
    s = cmd("sweep", cmd_sweep, "vary one parameter", inp=False)
    s.add_argument("--param", required=True, choices=list(ex.SWEEPABLE))
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--cache-dir", dest="cache_dir")
    s = cmd("export-geojson", cmd_export_geojson, "export trajectories (and verdicts) as GeoJSON")
    s.add_argument("--report", help="JSON-lines report from detect")
    s.add_argument("--graph", help="graph JSON; adds subgoal nodes")
    return p


DATA_ERRORS = (ParseError, SegmentationError, ForgeError, ConfigError, DataError, ValueError,
               KeyError, OSError, json.JSONDecodeError)


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers and args.workers > 0:
        import torch
        torch.set_num_threads(args.workers)
    try:
        summary = args.fn(args)
    except UsageError as e:
        print(f"ihid {args.command}: error: {e}", file=sys.stderr)
        return 1
    except DATA_ERRORS as e:
        print(f"ihid {args.command}: data error: {e}", file=sys.stderr)
        return 2
    _emit({"command": args.command, "out": str(args.out), **summary})
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
