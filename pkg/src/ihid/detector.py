"""Two-stage decision: Q threshold on the subgoal choice, then reconstruction error."""
from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .diffusion import DiffusionModel, reconstruct_batch, recon_errors
from .graph import SubgoalGraph
from .iql import QFunction
from .trajectory import BoundingBox, SegmentationError, Trajectory, segment_by_graph

STAGES = ("high_level_reject", "low_level_reject", "off_graph_reject", "normal")
MODES = ("full", "high", "low")


@dataclass
class Thresholds:
    gamma_q: float = -1.0
    beta_e: float = 0.13

    def __post_init__(self):
        if not (np.isfinite(self.gamma_q) and np.isfinite(self.beta_e)):
            raise ValueError("thresholds must be finite")


@dataclass
class LegVerdict:
    leg: int
    q_score: Optional[float]
    e_delta: Optional[float]
    stage: str
    is_anomaly: bool


@dataclass
class TrajectoryReport:
    traj_id: str
    legs: list[LegVerdict]
    is_anomaly: bool
    subgoal_seq: Optional[list[int]] = None
    label: Optional[str] = None
    wall_time: float = 0.0

    def to_record(self, with_time: bool = True) -> dict:
        rec = {"id": self.traj_id, "label": self.label, "is_anomaly": self.is_anomaly,
               "subgoal_seq": self.subgoal_seq, "legs": [asdict(v) for v in self.legs]}
        if with_time:
            rec["timing"] = {"wall_time_s": self.wall_time}
        return rec


def write_jsonl(reports: Iterable[TrajectoryReport], path, with_time: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record(with_time), sort_keys=True) + "\n")


def leg_seed(seed: int, traj_id: str, leg: int, sample: int = 0) -> list[int]:
    """Reconstruction rng seed derived from (global seed, trajectory id, leg index)."""
    return [int(seed), zlib.crc32(traj_id.encode("utf-8")), int(leg), int(sample)]


def subgoal_pair_coords(graph: SubgoalGraph, g_i: int, g_next: int) -> np.ndarray:
    return np.array(graph.node(g_i).center + graph.node(g_next).center, dtype=float)


# -------------------------------------------------------------- raw scoring


@dataclass
class RawScores:
    """Threshold-free scores of one trajectory; ``subgoal_seq`` is None if segmentation failed."""

    traj_id: str
    label: Optional[str]
    subgoal_seq: Optional[list[int]]
    q_scores: list[Optional[float]] = field(default_factory=list)
    e_deltas: list[Optional[float]] = field(default_factory=list)
    wall_time: float = 0.0


def decide(raw: RawScores, th: Thresholds, mode: str = "full") -> TrajectoryReport:
    """Apply thresholds to precomputed scores.

    ``mode="high"`` skips stage 2 (legs passing the Q test are normal);
    ``mode="low"`` skips stage 1. Trajectories that cannot be segmented are
    off-graph anomalies in every mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if raw.subgoal_seq is None:
        v = LegVerdict(0, None, None, "off_graph_reject", True)
        return TrajectoryReport(raw.traj_id, [v], True, None, raw.label, raw.wall_time)
    verdicts = []
    for i, (q, e) in enumerate(zip(raw.q_scores, raw.e_deltas)):
        if q is None and mode != "low":
            verdicts.append(LegVerdict(i, None, None, "off_graph_reject", True))
            continue
        if mode != "low" and q <= th.gamma_q:
            verdicts.append(LegVerdict(i, q, None, "high_level_reject", True))
            continue
        qv = None if mode == "low" else q
        if mode == "high":
            verdicts.append(LegVerdict(i, qv, None, "normal", False))
            continue
        # equality counts as anomalous: only E < beta is normal
        bad = e >= th.beta_e
        verdicts.append(LegVerdict(i, qv, e, "low_level_reject" if bad else "normal", bad))
    return TrajectoryReport(raw.traj_id, verdicts, any(v.is_anomaly for v in verdicts),
                            list(raw.subgoal_seq), raw.label, raw.wall_time)


class Detector:
    """Scores trajectories against a trained Q-function and diffusion model."""

    def __init__(self, q: QFunction, dm: DiffusionModel, graph: SubgoalGraph,
                 bbox: BoundingBox | None = None, seed: int = 0, samples: int = 1,
                 t_inf: int | None = None):
        self.q, self.dm, self.graph = q, dm, graph
        self.bbox = bbox or graph.bbox
        if self.bbox is None:
            raise ValueError("need a bounding box (graph has none)")
        self.seed = seed
        self.samples = samples
        self.t_inf = dm.cfg.t_inf if t_inf is None else t_inf

    def _q(self, u, v):
        if u not in self.graph or v not in self.graph:
            return None
        try:
            return self.q(u, v)
        except KeyError:
            return None

    def score(self, trajs: Sequence[Trajectory], gamma_q: float | None = None) -> list[RawScores]:
        """Q scores for every leg and reconstruction errors in one batched pass.

        With ``gamma_q`` set, legs failing the Q test are not reconstructed
        (their ``e_delta`` stays None).
        """
        L = self.dm.cfg.L
        out, jobs = [], []
        t_start = time.perf_counter()
        for tr in trajs:
            t0 = time.perf_counter()
            try:
                seg = segment_by_graph(tr, self.graph, self.bbox, L)
            except SegmentationError:
                out.append(RawScores(tr.id, tr.label, None, wall_time=time.perf_counter() - t0))
                continue
            raw = RawScores(tr.id, tr.label, seg.subgoal_seq)
            for i, ((u, v), leg) in enumerate(zip(seg.pairs, seg.legs)):
                q = self._q(u, v)
                raw.q_scores.append(q)
                raw.e_deltas.append(None)
                if q is None or (gamma_q is not None and q <= gamma_q):
                    continue
                jobs.append((len(out), i, leg, subgoal_pair_coords(self.graph, u, v)))
            raw.wall_time = time.perf_counter() - t0
            out.append(raw)

        if jobs:
            legs = np.array([j[2] for j in jobs])
            sg = np.array([j[3] for j in jobs])
            err = np.zeros(len(jobs))
            for s in range(self.samples):
                seeds = [leg_seed(self.seed, out[k].traj_id, i, s) for k, i, _, _ in jobs]
                rec = reconstruct_batch(self.dm, legs, sg, self.t_inf, seeds=seeds)
                err += recon_errors(legs, rec)
            err /= self.samples
            for (k, i, _, _), e in zip(jobs, err):
                out[k].e_deltas[i] = float(e)
        # batched reconstruction time is shared evenly across trajectories
        share = (time.perf_counter() - t_start - sum(r.wall_time for r in out)) / max(len(out), 1)
        for r in out:
            r.wall_time += share
        return out

    def detect_many(self, trajs: Sequence[Trajectory], th: Thresholds, mode: str = "full") -> list[TrajectoryReport]:
        lazy = th.gamma_q if mode == "full" else None
        return [decide(r, th, mode) for r in self.score(trajs, gamma_q=lazy)]

    def detect_trajectory(self, traj: Trajectory, th: Thresholds, mode: str = "full") -> TrajectoryReport:
        return self.detect_many([traj], th, mode)[0]


def detect_leg(q: QFunction, dm: DiffusionModel, graph: SubgoalGraph, leg, g_i: int, g_next: int,
               th: Thresholds, rng=None, t_inf: int | None = None) -> LegVerdict:
    """Judge one leg. The diffusion model runs only if the Q test passes."""
    if g_i not in graph or g_next not in graph:
        return LegVerdict(0, None, None, "off_graph_reject", True)
    try:
        qs = q(g_i, g_next)
    except KeyError:
        return LegVerdict(0, None, None, "off_graph_reject", True)
    if qs <= th.gamma_q:
        return LegVerdict(0, qs, None, "high_level_reject", True)
    rng = rng if rng is not None else np.random.default_rng()
    t_inf = dm.cfg.t_inf if t_inf is None else t_inf
    leg = np.asarray(leg, dtype=float)
    noise = rng.standard_normal((1, t_inf + 1) + leg.shape)
    rec = reconstruct_batch(dm, leg[None], subgoal_pair_coords(graph, g_i, g_next)[None], t_inf, noise=noise)
    e = float(recon_errors(leg[None], rec)[0])
    bad = e >= th.beta_e
    return LegVerdict(0, qs, e, "low_level_reject" if bad else "normal", bad)


def report_from_record(rec: dict) -> TrajectoryReport:
    legs = [LegVerdict(**v) for v in rec["legs"]]
    return TrajectoryReport(rec["id"], legs, bool(rec["is_anomaly"]), rec.get("subgoal_seq"),
                            rec.get("label"), rec.get("timing", {}).get("wall_time_s", 0.0))


def read_jsonl(path) -> list[TrajectoryReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(report_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{ln}: bad report record ({e})") from e
    return out
