"""High-level scorer: inverse soft-Q learning over subgoal transitions.

The MDP is deterministic: choosing subgoal ``a`` in state ``s`` moves the
agent to ``a``. The soft value sums over every graph node, so transitions
never seen in expert data still get a (pushed-down) Q value.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class UnknownNodeError(KeyError):
    pass


@dataclass
class IqlConfig:
    gamma_d: float = 0.99     # discount
    alpha_reg: float = 0.5    # chi-square regulariser weight
    lr: float = 1e-2
    epochs: int = 400
    batch_size: int = 128
    seed: int = 0
    representation: str = "tabular"   # or "mlp"
    embed_dim: int = 30
    hidden: int = 64
    plateau_tol: float = 1e-5
    plateau_window: int = 10

    def __post_init__(self):
        if not 0 <= self.gamma_d < 1:
            raise ValueError("gamma_d must be in [0, 1)")
        if self.alpha_reg <= 0:
            raise ValueError("alpha_reg must be positive")
        if self.representation not in ("tabular", "mlp"):
            raise ValueError(f"unknown representation {self.representation!r}")


@dataclass
class TransitionBatch:
    """Rows index nodes by graph position, not by node id."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    is_terminal: np.ndarray
    initial_states: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.next_states, self.actions):
            raise ValueError("deterministic dynamics: next state must equal the action")

    def __len__(self):
        return len(self.states)

    def take(self, idx) -> "TransitionBatch":
        return TransitionBatch(self.states[idx], self.actions[idx], self.next_states[idx],
                               self.is_terminal[idx], self.initial_states[idx])


def transitions_from_sequences(seqs: Sequence[Sequence[int]], node_ids: Sequence[int],
                               edges=None) -> TransitionBatch:
    """Flatten subgoal sequences into one row per consecutive pair.

    The last node of a sequence is absorbing (soft value 0). Each row carries
    the first node of its own sequence as the sampled initial state.
    """
    pos = {n: i for i, n in enumerate(node_ids)}
    s, a, term, s0 = [], [], [], []
    for seq in seqs:
        if len(seq) < 2:
            raise ValueError("subgoal sequences need at least two nodes")
        for i, (u, v) in enumerate(zip(seq[:-1], seq[1:])):
            if u not in pos or v not in pos:
                raise UnknownNodeError(f"node {u if u not in pos else v} not in graph")
            if edges is not None and (u, v) not in edges:
                raise ValueError(f"transition {u}->{v} is not a graph edge")
            s.append(pos[u])
            a.append(pos[v])
            term.append(i == len(seq) - 2)
            s0.append(pos[seq[0]])
    a = np.array(a, dtype=np.int64)
    return TransitionBatch(np.array(s, dtype=np.int64), a, a.copy(),
                           np.array(term, dtype=bool), np.array(s0, dtype=np.int64))


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def chi2_phi(r, alpha):
    return r - r * r / (4.0 * alpha)


# -------------------------------------------------------------- Q functions


class QFunction:
    """Map (state node, action node) -> real over a fixed node list."""

    representation = "base"

    def __init__(self, node_ids: Sequence[int]):
        self.node_ids = [int(n) for n in node_ids]
        self._pos = {n: i for i, n in enumerate(self.node_ids)}

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def pos(self, node_id: int) -> int:
        try:
            return self._pos[int(node_id)]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def matrix(self) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s_id: int, a_id: int) -> float:
        return float(self.matrix()[self.pos(s_id), self.pos(a_id)])

    def save(self, path, config: IqlConfig | None = None) -> None:
        manifest = {"kind": "iql", "representation": self.representation,
                    "node_ids": self.node_ids, "dims": self.dims()}
        if config is not None:
            manifest["config"] = asdict(config)
            manifest["seed"] = config.seed
        save_checkpoint(path, manifest, self.tensors())

    @staticmethod
    def load(path) -> "QFunction":
        manifest, tensors = load_checkpoint(path)
        if manifest.get("kind") != "iql":
            raise ValueError(f"{path} is not a Q-function checkpoint")
        if manifest["representation"] == "tabular":
            return TabularQ(manifest["node_ids"], tensors["q"])
        q = MlpQ(manifest["node_ids"], **manifest["dims"])
        q.net.load_state_dict({k: torch.tensor(v, dtype=torch.float64) for k, v in tensors.items()})
        return q


class TabularQ(QFunction):
    representation = "tabular"

    def __init__(self, node_ids, table=None):
        super().__init__(node_ids)
        self.table = np.zeros((self.n, self.n)) if table is None else np.array(table, dtype=float)
        if self.table.shape != (self.n, self.n):
            raise ValueError("table shape does not match node count")

    def matrix(self):
        return self.table

    def dims(self):
        return {"n": self.n}

    def tensors(self):
        return [("q", self.table)]


class _QNet(nn.Module):
    def __init__(self, n, embed_dim, hidden):
        super().__init__()
        self.embed = nn.Embedding(n, embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(2 * embed_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, s, a):
        x = torch.cat([self.embed(s), self.embed(a)], dim=-1)
        return self.mlp(x).squeeze(-1)

    def all_actions(self, s, n):
        """Q(s, .) for every node: shape (len(s), n)."""
        a = torch.arange(n).expand(len(s), n)
        return self.forward(s[:, None].expand(-1, n), a)


class MlpQ(QFunction):
    """Two hidden layers over concatenated learned node embeddings."""

    representation = "mlp"

    def __init__(self, node_ids, embed_dim=30, hidden=64, seed=0, **_):
        super().__init__(node_ids)
        self.embed_dim, self.hidden = embed_dim, hidden
        torch.manual_seed(seed)
        self.net = _QNet(self.n, embed_dim, hidden).double()
        self._cache = None

    def matrix(self):
        if self._cache is None:
            with torch.no_grad():
                self._cache = self.net.all_actions(torch.arange(self.n), self.n).numpy().copy()
        return self._cache

    def invalidate(self):
        self._cache = None

    def dims(self):
        return {"embed_dim": self.embed_dim, "hidden": self.hidden}

    def tensors(self):
        return [(k, v.detach().numpy()) for k, v in self.net.state_dict().items()]


# ------------------------------------------------------------------- objective


def soft_value(q: QFunction, s: int, action_set: Sequence[int] | None = None) -> float:
    """log-sum-exp of Q(s, a) over ``action_set`` (all nodes by default)."""
    row = q.matrix()[q.pos(s)]
    if action_set is not None:
        if len(action_set) == 0:
            raise ValueError("empty action set")
        row = row[[q.pos(a) for a in action_set]]
    return float(logsumexp(row))


def iql_loss(q: QFunction, batch: TransitionBatch, cfg: IqlConfig) -> float:
    """Negated inverse soft-Q objective with a chi-square regulariser."""
    return _tabular_loss_grad(q.matrix(), batch, cfg, need_grad=False)[0]


def iql_loss_and_grad(table: np.ndarray, batch: TransitionBatch, cfg: IqlConfig):
    """Loss and its exact gradient with respect to every entry of a Q table."""
    return _tabular_loss_grad(table, batch, cfg, need_grad=True)


def _tabular_loss_grad(Q, batch, cfg, need_grad):
    g, alpha = cfg.gamma_d, cfg.alpha_reg
    V = logsumexp(Q, axis=1)
    live = ~batch.is_terminal
    v_next = np.where(live, V[batch.next_states], 0.0)
    r = Q[batch.states, batch.actions] - g * v_next
    expert = chi2_phi(r, alpha).mean()
    init = V[batch.initial_states].mean()
    loss = -(expert - (1.0 - g) * init)
    if not need_grad:
        return float(loss), None

    B = len(batch)
    grad = np.zeros_like(Q)
    w = -(1.0 - r / (2.0 * alpha)) / B
    np.add.at(grad, (batch.states, batch.actions), w)
    P = _softmax(Q)
    ns = batch.next_states[live]
    np.add.at(grad, ns, (-g * w[live])[:, None] * P[ns])
    s0 = batch.initial_states
    np.add.at(grad, s0, ((1.0 - g) / len(s0)) * P[s0])
    return float(loss), grad


def _torch_loss(net, batch, cfg, n):
    g, alpha = cfg.gamma_d, cfg.alpha_reg
    s = torch.as_tensor(batch.states)
    a = torch.as_tensor(batch.actions)
    ns = torch.as_tensor(batch.next_states)
    live = torch.as_tensor(~batch.is_terminal, dtype=torch.float64)
    s0 = torch.as_tensor(batch.initial_states)
    q_sa = net(s, a)
    v_next = torch.logsumexp(net.all_actions(ns, n), dim=1) * live
    r = q_sa - g * v_next
    expert = (r - r * r / (4.0 * alpha)).mean()
    init = torch.logsumexp(net.all_actions(s0, n), dim=1).mean()
    return -(expert - (1.0 - g) * init)


# --------------------------------------------------------------------- training


@dataclass
class TrainResult:
    q: QFunction
    losses: list[float] = field(default_factory=list)


def _plateaued(losses, cfg):
    k = cfg.plateau_window
    if len(losses) <= k:
        return False
    prev, cur = losses[-k - 1], losses[-1]
    return (prev - cur) / max(abs(prev), 1e-12) < cfg.plateau_tol


def train_iql(subgoal_trajs: Sequence[Sequence[int]], graph, cfg: IqlConfig | None = None) -> TrainResult:
    """Fit Q on expert subgoal sequences with minibatch Adam.

    Each epoch shuffles all expert transitions; stops at ``cfg.epochs`` or when
    the epoch loss improves by less than ``plateau_tol`` (relative) over
    ``plateau_window`` epochs.
    """
    cfg = cfg or IqlConfig()
    node_ids = graph.ids
    data = transitions_from_sequences(subgoal_trajs, node_ids, graph.edges)
    if len(data) == 0:
        raise ValueError("no transitions to train on")
    rng = np.random.default_rng(cfg.seed)
    if cfg.representation == "tabular":
        return _train_tabular(data, node_ids, cfg, rng)
    return _train_mlp(data, node_ids, cfg, rng)


def _batches(n, bs, rng):
    perm = rng.permutation(n)
    return [perm[i:i + bs] for i in range(0, n, bs)]


def _train_tabular(data, node_ids, cfg, rng):
    q = TabularQ(node_ids)
    m = np.zeros_like(q.table)
    v = np.zeros_like(q.table)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    for _ in range(cfg.epochs):
        tot = 0.0
        for idx in _batches(len(data), cfg.batch_size, rng):
            loss, grad = iql_loss_and_grad(q.table, data.take(idx), cfg)
            step += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mh = m / (1 - b1 ** step)
            vh = v / (1 - b2 ** step)
            q.table -= cfg.lr * mh / (np.sqrt(vh) + eps)
            tot += loss * len(idx)
        losses.append(tot / len(data))
        if _plateaued(losses, cfg):
            break
    return TrainResult(q, losses)


def _train_mlp(data, node_ids, cfg, rng):
    q = MlpQ(node_ids, cfg.embed_dim, cfg.hidden, seed=cfg.seed)
    opt = torch.optim.Adam(q.net.parameters(), lr=cfg.lr)
    losses = []
    for _ in range(cfg.epochs):
        tot = 0.0
        for idx in _batches(len(data), cfg.batch_size, rng):
            opt.zero_grad()
            loss = _torch_loss(q.net, data.take(idx), cfg, q.n)
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
        losses.append(tot / len(data))
        if _plateaued(losses, cfg):
            break
    q.invalidate()
    return TrainResult(q, losses)


def score_transition(q: QFunction, g_i: int, g_next: int) -> float:
    return q(g_i, g_next)
