"""Repeated evaluation on a synthetic world: pools, threshold tuning, ablation, sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
import tempfile
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..detector import Detector, RawScores, Thresholds, TrajectoryReport, decide
from ..diffusion import DiffusionConfig, DiffusionModel, profile_config, train_diffusion
from ..forge import ForgeParams, forge_many
from ..graph import GraphParams, SubgoalGraph, build_graph
from ..iql import IqlConfig, QFunction, train_iql
from ..trajectory import SegmentationError, Trajectory, segment_by_graph
from .config import load_config
from .metrics import ConfusionCounts, encode, mean_defined
from .world import PRESETS, WorldSpec, synth_world

log = logging.getLogger(__name__)

ANOMALY_TYPES = ("big_detour", "small_detour", "route_switch")


# ---------------------------------------------------------- config plumbing


def _pick(cls, d: dict, **extra):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in {**d, **extra}.items() if k in names})


def world_spec(cfg: dict) -> WorldSpec:
    w = dict(cfg["world"])
    preset = w.pop("preset", "default")
    if preset not in PRESETS:
        raise ValueError(f"unknown world preset {preset!r}")
    n = w.pop("n_train", None)
    spec = PRESETS[preset](**{k: v for k, v in w.items() if k != "seed"})
    spec.seed = int(cfg["world"].get("seed", 0))
    if n is not None:
        spec.n_trajectories = int(n)
    return spec


def graph_params(cfg: dict) -> GraphParams:
    return _pick(GraphParams, cfg["graph"])


def forge_params(cfg: dict) -> ForgeParams:
    return _pick(ForgeParams, cfg["forge"])


def iql_config(cfg: dict) -> IqlConfig:
    return _pick(IqlConfig, cfg["iql"], seed=cfg["runner"].get("seed", 0))


def diffusion_config(cfg: dict) -> DiffusionConfig:
    d = dict(cfg["diffusion"])
    profile = d.pop("profile", "synthetic")
    d.setdefault("seed", cfg["runner"].get("seed", 0))
    return profile_config(profile, **d)


# ------------------------------------------------------------------ models


@dataclass
class Bundle:
    """Everything trained from the normal training set."""

    graph: SubgoalGraph
    q: QFunction
    dm: DiffusionModel
    train: list[Trajectory]


def training_data(trajs, graph: SubgoalGraph, L: int):
    """Subgoal sequences, legs (N, L, 2) and leg subgoal centres (N, 4)."""
    seqs, legs, sg = [], [], []
    for tr in trajs:
        try:
            seg = segment_by_graph(tr, graph, graph.bbox, L)
        except SegmentationError:
            continue
        seqs.append(seg.subgoal_seq)
        for leg, (u, v) in zip(seg.legs, seg.pairs):
            legs.append(leg)
            sg.append(graph.node(u).center + graph.node(v).center)
    return seqs, np.array(legs), np.array(sg)


def _cache_key(cfg: dict, *sections) -> str:
    blob = json.dumps({s: cfg[s] for s in sections}, sort_keys=True)
    blob += json.dumps({"seed": cfg["runner"].get("seed", 0)})
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_bundle(cfg: dict, cache_dir: Optional[str] = None) -> Bundle:
    """Synthesize the training world, build the graph and train both levels.

    With ``cache_dir`` the trained models are stored under a hash of the
    relevant config sections and reused on later calls.
    """
    cache_dir = cache_dir or cfg["runner"].get("cache_dir")
    spec = world_spec(cfg)
    _, train, _ = synth_world(spec, prefix="train")
    graph = build_graph(train, graph_params(cfg))
    dcfg = diffusion_config(cfg)
    seqs, legs, sg = training_data(train, graph, dcfg.L)

    # models always pass through the float32 checkpoint (a temporary one
    # without a cache), so cold, cached and uncached runs score identically
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(cache_dir or tmp)
        root.mkdir(parents=True, exist_ok=True)
        qpath = root / f"high-{_cache_key(cfg, 'world', 'graph', 'iql')}.json"
        dpath = root / f"low-{_cache_key(cfg, 'world', 'graph', 'diffusion')}.json"
        if not qpath.exists():
            train_iql(seqs, graph, iql_config(cfg)).q.save(qpath, iql_config(cfg))
        if not dpath.exists():
            train_diffusion(legs, sg, dcfg).save(dpath)
        q = QFunction.load(qpath)
        dm = DiffusionModel.load(dpath)
    return Bundle(graph, q, dm, train)


# ------------------------------------------------------------------- pools


@dataclass
class Pools:
    normal: list[Trajectory]
    anomalous: dict[str, list[Trajectory]]


def make_pools(cfg: dict, graph: SubgoalGraph, split: str) -> Pools:
    """Fresh normal trajectories plus forged anomalies of every type.

    ``split`` is "test" or "val"; the two use disjoint world seeds.
    """
    r = cfg["runner"]
    spec = world_spec(cfg)
    offset = {"test": 1000, "val": 2000}[split]
    seed = spec.seed + offset + int(r.get("seed", 0))
    n_norm = int(r["pool_normal"] if split == "test" else r["val_normal"])
    n_anom = int(r["pool_anomalous"] if split == "test" else r["val_anomalous"])
    _, normal, _ = synth_world(spec, n=n_norm, seed=seed, prefix=f"{split}n")
    # anomalies are forged from a separate set of normals
    _, base, _ = synth_world(spec, n=n_norm, seed=seed + 500, prefix=f"{split}b")
    fp = forge_params(cfg)
    anomalous = {}
    for k, kind in enumerate(r["anomaly_types"]):
        rng = np.random.default_rng([seed, k])
        anomalous[kind] = forge_many(kind, base, n_anom, fp, rng, graph, graph.bbox)
    return Pools(normal, anomalous)


def score_pools(det: Detector, pools: Pools) -> dict[str, dict[str, RawScores]]:
    """Raw scores for every pool trajectory, computed once and keyed by id."""
    out = {"normal": {r.traj_id: r for r in det.score(pools.normal)}}
    for kind, trajs in pools.anomalous.items():
        out[kind] = {r.traj_id: r for r in det.score(trajs)}
    return out


# --------------------------------------------------------- threshold tuning


def _flags(raw: RawScores, gamma_q: float):
    """(rejected at stage 1 or off-graph, max E over legs that pass stage 1)."""
    if raw.subgoal_seq is None:
        return True, -np.inf
    hard, e_max = False, -np.inf
    for q, e in zip(raw.q_scores, raw.e_deltas):
        if q is None or q <= gamma_q:
            hard = True
        elif e is not None:
            e_max = max(e_max, e)
    return hard, e_max


def _best_beta(hard, e_max, truth):
    """beta_e maximising F1 given fixed stage-1 flags (anomaly iff hard or E >= beta)."""
    hard, e_max, truth = map(np.asarray, (hard, e_max, truth))
    cands = np.unique(e_max[np.isfinite(e_max)])
    cands = np.concatenate([cands, [np.inf]])
    best = (-1.0, np.inf)
    for b in cands:
        f = _f1(hard | (e_max >= b), truth)
        if f > best[0]:
            best = (f, float(b))
    return best


def _f1(pred, truth) -> float:
    tp = int(np.sum(pred & truth))
    d = 2 * tp + int(np.sum(pred & ~truth)) + int(np.sum(~pred & truth))
    return 2 * tp / d if d else 0.0


def tune_thresholds(scores: dict[str, dict[str, RawScores]], mode: str = "full") -> tuple[Thresholds, float]:
    """Fit gamma_q on stage 1 alone, then beta_e given gamma_q.

    gamma_q is chosen among midpoints of observed Q scores to maximise the
    stage-1-only F1 on the pooled validation set (normals plus all anomaly
    types); ties are broken by taking the middle of the widest run of optimal
    candidates, so the cut sits in the widest gap. beta_e is then an exact F1
    search for the full rule. Returns the thresholds and the validation F1.
    """
    raws, truth = [], []
    for kind, d in scores.items():
        for r in d.values():
            raws.append(r)
            truth.append(kind != "normal")
    truth = np.array(truth)
    qs = sorted({q for r in raws for q in r.q_scores if q is not None})
    if mode == "low" or not qs:
        g = -1e9
    else:
        mids = [qs[0] - 1.0] + [(a + b) / 2 for a, b in zip(qs, qs[1:])] + [qs[-1] + 1.0]
        f1s = np.array([_f1(np.array([_flags(r, m)[0] for r in raws]), truth) for m in mids])
        best = np.flatnonzero(f1s >= f1s.max() - 1e-12)
        runs = np.split(best, np.flatnonzero(np.diff(best) > 1) + 1)
        run = max(runs, key=lambda rn: mids[rn[-1]] - mids[rn[0]])
        g = float((mids[run[0]] + mids[run[-1]]) / 2)
    hard, e_max = map(np.array, zip(*(_flags(r, g) for r in raws)))
    if mode == "high":
        return Thresholds(g, 1e9), _f1(hard, truth)
    f, b = _best_beta(hard, e_max, truth)
    # an infinite beta means "never"; keep it finite so it serialises
    return Thresholds(g, 1e9 if not np.isfinite(b) else float(b)), f


# -------------------------------------------------------------- evaluation


def _stage_hist(reports) -> dict:
    h = {"high_level_reject": 0, "low_level_reject": 0, "off_graph_reject": 0, "normal": 0}
    for rep in reports:
        for v in rep.legs:
            h[v.stage] += 1
    return h


def evaluate_scores(cfg: dict, scores, th: Thresholds, mode: str = "full"):
    """Per-type metrics over repeated 400 + 100 draws from the scored pools.

    Returns (summary dict, per-trajectory records of every repeat, each
    tagged with its anomaly set and repeat index).
    """
    r = cfg["runner"]
    normal_ids = sorted(scores["normal"])
    per_type, hists, records = {}, {}, []
    for kind in r["anomaly_types"]:
        anom_ids = sorted(scores[kind])
        reps = []
        hist_reports = []
        for rep in range(int(r["repeats"])):
            rng = np.random.default_rng([int(r.get("seed", 0)), rep, ANOMALY_TYPES.index(kind)
                                         if kind in ANOMALY_TYPES else 99])
            ni = rng.choice(len(normal_ids), size=min(int(r["n_normal"]), len(normal_ids)), replace=False)
            ai = rng.choice(len(anom_ids), size=min(int(r["n_anomalous"]), len(anom_ids)), replace=False)
            reports = [decide(scores["normal"][normal_ids[i]], th, mode) for i in sorted(ni)]
            reports += [decide(scores[kind][anom_ids[i]], th, mode) for i in sorted(ai)]
            truth = [rp.label not in (None, "normal") for rp in reports]
            cc = ConfusionCounts.from_predictions(truth, [rp.is_anomaly for rp in reports])
            reps.append(cc)
            hist_reports += [rp for rp, y in zip(reports, truth) if y]
            for rp in reports:
                records.append({"set": kind, "repeat": rep, **rp.to_record(with_time=False)})
        per_type[kind] = {
            "precision": encode(mean_defined(c.precision for c in reps)),
            "recall": encode(mean_defined(c.recall for c in reps)),
            "f1": encode(mean_defined(c.f1 for c in reps)),
            "repeats": [c.summary() for c in reps],
        }
        hists[kind] = _stage_hist(hist_reports)
    hists["normal"] = _stage_hist([decide(s, th, mode) for s in scores["normal"].values()])
    return {"per_type": per_type, "stage_histogram": hists}, records


def _detector(cfg, bundle, t_inf=None) -> Detector:
    return Detector(bundle.q, bundle.dm, bundle.graph, seed=int(cfg["runner"].get("seed", 0)),
                    samples=int(cfg["runner"].get("samples", 1)), t_inf=t_inf)


def _thresholds(cfg, val_scores, mode="full"):
    t = cfg["thresholds"]
    if t.get("gamma_q") is not None and t.get("beta_e") is not None:
        return Thresholds(float(t["gamma_q"]), float(t["beta_e"])), None
    th, f = tune_thresholds(val_scores, mode)
    if t.get("gamma_q") is not None:
        th = Thresholds(float(t["gamma_q"]), th.beta_e)
    if t.get("beta_e") is not None:
        th = Thresholds(th.gamma_q, float(t["beta_e"]))
    return th, f


def _seeds(cfg) -> dict:
    spec = world_spec(cfg)
    s = int(cfg["runner"].get("seed", 0))
    return {"runner": s, "world_train": spec.seed, "world_test": spec.seed + 1000 + s,
            "world_val": spec.seed + 2000 + s, "diffusion": diffusion_config(cfg).seed,
            "iql": iql_config(cfg).seed}


def run_experiment(cfg: dict | None = None, bundle: Bundle | None = None,
                   reports_path=None, mode: str = "full") -> dict:
    """Train (or reuse ``bundle``), tune thresholds on validation pools, evaluate on test pools."""
    t0 = time.perf_counter()
    cfg = cfg or load_config()
    bundle = bundle or build_bundle(cfg)
    det = _detector(cfg, bundle)
    val = score_pools(det, make_pools(cfg, bundle.graph, "val"))
    th, val_f1 = _thresholds(cfg, val, mode)
    test = score_pools(det, make_pools(cfg, bundle.graph, "test"))
    summary, records = evaluate_scores(cfg, test, th, mode)
    if reports_path is not None:
        with open(reports_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {
        "config": cfg, "seeds": _seeds(cfg), "mode": mode,
        "thresholds": {"gamma_q": th.gamma_q, "beta_e": th.beta_e,
                       "tuned": val_f1 is not None, "val_f1": val_f1},
        **summary,
        "wall_time_s": time.perf_counter() - t0,
    }


def ablate(cfg: dict | None = None, bundle: Bundle | None = None) -> dict:
    """Stage-1-only, stage-2-only and full detector on identical scores.

    Thresholds are tuned once for the full detector and shared, so the full
    anomaly set is exactly the union of the two single-stage sets.
    """
    t0 = time.perf_counter()
    cfg = cfg or load_config()
    bundle = bundle or build_bundle(cfg)
    det = _detector(cfg, bundle)
    val = score_pools(det, make_pools(cfg, bundle.graph, "val"))
    th, _ = _thresholds(cfg, val, "full")
    test = score_pools(det, make_pools(cfg, bundle.graph, "test"))
    out = {"config": cfg, "seeds": _seeds(cfg),
           "thresholds": {"gamma_q": th.gamma_q, "beta_e": th.beta_e}, "variants": {}}
    flagged = {}
    for mode in ("high", "low", "full"):
        out["variants"][mode], _ = evaluate_scores(cfg, test, th, mode)
        flagged[mode] = {tid for d in test.values() for tid, r in d.items() if decide(r, th, mode).is_anomaly}
    out["union_holds"] = flagged["full"] == (flagged["high"] | flagged["low"])
    out["wall_time_s"] = time.perf_counter() - t0
    return out


SWEEPABLE = ("rho", "t_inf", "gamma_q", "beta_e")


def sweep(cfg: dict | None, param: str, values, bundle: Bundle | None = None) -> dict:
    """Vary one parameter. ``rho`` retrains the diffusion model; ``t_inf``
    re-scores; the thresholds only re-apply the decision rule."""
    if param not in SWEEPABLE:
        raise ValueError(f"can only sweep {SWEEPABLE}, not {param!r}")
    t0 = time.perf_counter()
    cfg = cfg or load_config()
    bundle = bundle or build_bundle(cfg)
    results = []
    if param in ("gamma_q", "beta_e"):
        det = _detector(cfg, bundle)
        val = score_pools(det, make_pools(cfg, bundle.graph, "val"))
        test = score_pools(det, make_pools(cfg, bundle.graph, "test"))
        base, _ = _thresholds(cfg, val)
        for v in values:
            th = Thresholds(float(v), base.beta_e) if param == "gamma_q" else Thresholds(base.gamma_q, float(v))
            s, _ = evaluate_scores(cfg, test, th)
            results.append({"value": v, "thresholds": {"gamma_q": th.gamma_q, "beta_e": th.beta_e}, **s})
    else:
        for v in values:
            if param == "rho":
                c = json.loads(json.dumps(cfg))
                c["diffusion"]["rho"] = float(v)
                dcfg = diffusion_config(c)
                _, legs, sg = training_data(bundle.train, bundle.graph, dcfg.L)
                b = Bundle(bundle.graph, bundle.q, train_diffusion(legs, sg, dcfg), bundle.train)
                det = _detector(c, b)
            else:
                c = cfg
                det = _detector(cfg, bundle, t_inf=int(v))
            val = score_pools(det, make_pools(c, bundle.graph, "val"))
            th, _ = _thresholds(c, val)
            s, _ = evaluate_scores(c, score_pools(det, make_pools(c, bundle.graph, "test")), th)
            results.append({"value": v, "thresholds": {"gamma_q": th.gamma_q, "beta_e": th.beta_e}, **s})
    return {"config": cfg, "seeds": _seeds(cfg), "param": param, "results": results,
            "wall_time_s": time.perf_counter() - t0}
