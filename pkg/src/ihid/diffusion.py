"""Low-level model: subgoal-conditioned DDPM over fixed-length legs.

The denoiser is a transformer with long skip connections (three down
blocks, one middle block, three up blocks for the default seven layers). The
subgoal pair enters only through the blended input
``c = rho * CrossAttention(subgoals, x_t) + (1 - rho) * x_t``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays are 0-based: ``betas[t - 1]`` is the variance of step ``t``."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tildes: np.ndarray

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def make_schedule(T: int = 800, beta1: float = 1e-4, betaT: float = 0.02) -> NoiseSchedule:
    """Linear variance schedule from ``beta1`` to ``betaT`` over ``T`` steps."""
    if T < 2 or not (0 < beta1 < betaT < 1):
        raise ValueError("need T >= 2 and 0 < beta1 < betaT < 1")
    t = np.arange(1, T + 1, dtype=float)
    betas = beta1 + (t - 1) * (betaT - beta1) / (T - 1)
    betas[0], betas[-1] = beta1, betaT
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate(([1.0], alpha_bars[:-1]))
    beta_tildes = (1.0 - prev) / (1.0 - alpha_bars) * betas
    return NoiseSchedule(T, betas, alphas, alpha_bars, beta_tildes)


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Sample of the noised leg at step ``t`` given the noise draw ``eps``."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [1, {schedule.T}]")
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError("x0 and eps shapes differ")
    ab = schedule.alpha_bars[t - 1]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def recon_error(orig, recon) -> float:
    """Mean over positions of the squared Euclidean displacement."""
    a = np.asarray(orig, dtype=float)
    b = np.asarray(recon, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum(axis=-1).mean(axis=-1))


def recon_errors(orig, recon) -> np.ndarray:
    a = np.asarray(orig, dtype=float)
    b = np.asarray(recon, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return ((a - b) ** 2).sum(axis=-1).mean(axis=-1)


# -------------------------------------------------------------------- config


@dataclass
class DiffusionConfig:
    L: int = 64
    latent: int = 256
    layers: int = 7
    heads: int = 4
    dropout: float = 0.2
    ff_mult: int = 2
    time_channels: int = 4
    subgoal_dim: int = 30
    ctx_dim: int = 64
    rho: float = 0.4
    T: int = 800
    beta1: float = 1e-4
    betaT: float = 0.02
    t_inf: int = 200
    lr: float = 1e-3
    epochs: int = 120
    batch_size: int = 128
    steps: Optional[int] = None   # overrides epochs when set
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.layers < 1 or self.layers % 2 == 0:
            raise ValueError("layers must be odd (down, middle, up blocks)")
        if not 0 <= self.t_inf <= self.T:
            raise ValueError("t_inf must be in [0, T]")


PROFILES = {
    "chengdu": dict(L=64, latent=256, rho=0.4, t_inf=200),
    "ais": dict(L=64, latent=128, rho=0.8, t_inf=600),
    # desk-scale profile used on the synthetic worlds
    "synthetic": dict(L=16, latent=32, rho=0.4, t_inf=10, dropout=0.0, steps=1500),
}


def profile_config(name: str, **overrides) -> DiffusionConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return DiffusionConfig(**{**PROFILES[name], **overrides})


# ---------------------------------------------------------------- networks


def timestep_embedding(t: torch.Tensor, channels: int, max_period: float = 10000.0) -> torch.Tensor:
    half = channels // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class Conditioner(nn.Module):
    """Cross-attention from the two subgoal tokens onto the noisy leg.

    The two attended tokens are mean-pooled and projected to an (L, 2)
    offset field so the result can be blended with the noisy leg itself.
    """

    def __init__(self, L, subgoal_dim=30, ctx_dim=64, heads=4):
        super().__init__()
        self.L = L
        self.encode = nn.Sequential(nn.Linear(2, subgoal_dim), nn.SiLU(), nn.Linear(subgoal_dim, subgoal_dim))
        self.role = nn.Parameter(torch.zeros(2, subgoal_dim))
        self.kv_in = nn.Linear(2, ctx_dim)
        self.kv_pos = nn.Parameter(torch.zeros(L, ctx_dim))
        self.attn = nn.MultiheadAttention(ctx_dim, heads, kdim=ctx_dim, vdim=ctx_dim,
                                          batch_first=True)
        self.q_in = nn.Linear(subgoal_dim, ctx_dim)
        self.out = nn.Linear(ctx_dim, L * 2)
        nn.init.normal_(self.role, std=0.02)
        nn.init.normal_(self.kv_pos, std=0.02)

    def forward(self, subgoals, x_t):
        """``subgoals``: (B, 4) start/end centres; ``x_t``: (B, L, 2)."""
        g = subgoals.reshape(-1, 2, 2)
        tokens = self.encode(g) + self.role[None]
        q = self.q_in(tokens)
        kv = self.kv_in(x_t) + self.kv_pos[None]
        att, _ = self.attn(q, kv, kv, need_weights=False)
        pooled = att.mean(dim=1)
        return self.out(pooled).reshape(-1, self.L, 2)


def condition_blend(cond: Conditioner, subgoals, x_t, rho: float):
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    A = cond(subgoals, x_t)
    if A.shape != x_t.shape:
        raise ValueError(f"attention branch shape {tuple(A.shape)} != input {tuple(x_t.shape)}")
    return blend(A, x_t, rho)


def blend(A, x_t, rho: float):
    return rho * A + (1.0 - rho) * x_t


class Denoiser(nn.Module):
    """Transformer noise predictor with long skips between mirrored layers."""

    def __init__(self, L, latent=256, layers=7, heads=4, dropout=0.2, ff_mult=2, time_channels=4):
        super().__init__()
        self.time_channels = time_channels
        self.inp = nn.Linear(2, latent)
        self.pos = nn.Parameter(torch.zeros(L + 1, latent))
        nn.init.normal_(self.pos, std=0.02)
        self.time = nn.Sequential(nn.Linear(time_channels, latent), nn.SiLU(), nn.Linear(latent, latent))

        def block():
            return nn.TransformerEncoderLayer(latent, heads, ff_mult * latent, dropout,
                                              activation="gelu", batch_first=True, norm_first=True)

        n_side = (layers - 1) // 2
        self.down = nn.ModuleList([block() for _ in range(n_side)])
        self.mid = block()
        self.up = nn.ModuleList([block() for _ in range(n_side)])
        self.merge = nn.ModuleList([nn.Linear(2 * latent, latent) for _ in range(n_side)])
        self.norm = nn.LayerNorm(latent)
        self.head = nn.Linear(latent, 2)

    def forward(self, c, t):
        temb = self.time(timestep_embedding(t, self.time_channels).to(c.dtype))
        h = torch.cat([temb[:, None, :], self.inp(c)], dim=1) + self.pos[None]
        skips = []
        for layer in self.down:
            h = layer(h)
            skips.append(h)
        h = self.mid(h)
        for layer, merge in zip(self.up, self.merge):
            h = layer(merge(torch.cat([h, skips.pop()], dim=-1)))
        return self.head(self.norm(h[:, 1:]))


class EpsModel(nn.Module):
    def __init__(self, cfg: DiffusionConfig):
        super().__init__()
        self.rho = cfg.rho
        self.cond = Conditioner(cfg.L, cfg.subgoal_dim, cfg.ctx_dim, cfg.heads)
        self.net = Denoiser(cfg.L, cfg.latent, cfg.layers, cfg.heads, cfg.dropout,
                            cfg.ff_mult, cfg.time_channels)

    def forward(self, x_t, subgoals, t):
        c = condition_blend(self.cond, subgoals, x_t, self.rho)
        return self.net(c, t)


# -------------------------------------------------------------------- model


@dataclass
class DiffusionModel:
    cfg: DiffusionConfig
    schedule: NoiseSchedule
    eps_model: EpsModel
    losses: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: DiffusionConfig, dtype=torch.float32) -> "DiffusionModel":
        torch.manual_seed(cfg.seed)
        m = EpsModel(cfg).to(dtype)
        return cls(cfg, make_schedule(cfg.T, cfg.beta1, cfg.betaT), m)

    @property
    def dtype(self):
        return next(self.eps_model.parameters()).dtype

    def n_params(self) -> int:
        return sum(p.numel() for p in self.eps_model.parameters())

    def predict_eps(self, x_t, subgoals, t):
        return self.eps_model(x_t, subgoals, t)

    def save(self, path) -> None:
        manifest = {"kind": "diffusion", "config": asdict(self.cfg), "seed": self.cfg.seed,
                    "schedule": {"T": self.cfg.T, "beta1": self.cfg.beta1, "betaT": self.cfg.betaT},
                    "rho": self.cfg.rho, "t_inf": self.cfg.t_inf, "L": self.cfg.L,
                    "n_params": self.n_params(), "losses": list(self.losses)}
        tensors = [(k, v.detach().cpu().numpy()) for k, v in self.eps_model.state_dict().items()]
        save_checkpoint(path, manifest, tensors)

    @classmethod
    def load(cls, path) -> "DiffusionModel":
        manifest, tensors = load_checkpoint(path)
        if manifest.get("kind") != "diffusion":
            raise ValueError(f"{path} is not a diffusion checkpoint")
        model = cls.create(DiffusionConfig(**manifest["config"]))
        state = {k: torch.tensor(v, dtype=model.dtype) for k, v in tensors.items()}
        model.eps_model.load_state_dict(state)
        model.eps_model.eval()
        model.losses = [float(x) for x in manifest.get("losses", [])]
        return model


# ------------------------------------------------------------------ training


def train_diffusion(legs, subgoals, cfg: DiffusionConfig, log_every: int = 0,
                    model: DiffusionModel | None = None) -> DiffusionModel:
    """Minibatch Adam on the noise-prediction loss.

    ``legs``: (N, L, 2) normalised legs; ``subgoals``: (N, 4) start and end
    node centres of each leg. ``model.losses`` records the loss of every step.
    """
    legs = np.asarray(legs, dtype=np.float32)
    subgoals = np.asarray(subgoals, dtype=np.float32)
    if legs.ndim != 3 or legs.shape[1:] != (cfg.L, 2):
        raise ValueError(f"legs must have shape (N, {cfg.L}, 2), got {legs.shape}")
    if subgoals.shape != (len(legs), 4):
        raise ValueError("need one (4,) subgoal row per leg")
    model = model or DiffusionModel.create(cfg)
    sched = model.schedule
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    dtype = model.dtype
    sab = torch.tensor(np.sqrt(sched.alpha_bars), dtype=dtype)
    s1ab = torch.tensor(np.sqrt(1.0 - sched.alpha_bars), dtype=dtype)
    X = torch.tensor(legs, dtype=dtype)
    G = torch.tensor(subgoals, dtype=dtype)

    n = len(legs)
    steps = cfg.steps if cfg.steps is not None else cfg.epochs * max(1, math.ceil(n / cfg.batch_size))
    opt = torch.optim.Adam(model.eps_model.parameters(), lr=cfg.lr)
    model.eps_model.train()
    for step in range(steps):
        idx = torch.as_tensor(rng.integers(0, n, size=cfg.batch_size))
        t = torch.as_tensor(rng.integers(1, cfg.T + 1, size=cfg.batch_size))
        eps = torch.as_tensor(rng.standard_normal((cfg.batch_size, cfg.L, 2)), dtype=dtype)
        x0 = X[idx]
        x_t = sab[t - 1, None, None] * x0 + s1ab[t - 1, None, None] * eps
        loss = ((eps - model.predict_eps(x_t, G[idx], t)) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(model.eps_model.parameters(), cfg.grad_clip)
        opt.step()
        model.losses.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.4f", step + 1, np.mean(model.losses[-log_every:]))
    model.eps_model.eval()
    return model


# ------------------------------------------------------------ reconstruction


def _leg_noise(seeds: Sequence, t_inf: int, L: int) -> np.ndarray:
    """Per-leg noise block: row 0 noises the input, rows 1.. feed the reverse steps."""
    out = np.empty((len(seeds), t_inf + 1, L, 2))
    for j, s in enumerate(seeds):
        out[j] = np.random.default_rng(s).standard_normal((t_inf + 1, L, 2))
    return out


@torch.no_grad()
def reconstruct_batch(model: DiffusionModel, legs, subgoals, t_inf: int | None = None,
                      seeds: Sequence | None = None, noise: np.ndarray | None = None,
                      chunk: int = 512) -> np.ndarray:
    """Noise each leg to ``t_inf`` and run the reverse chain back to step 0.

    ``seeds`` gives one independent rng seed per leg; alternatively ``noise``
    supplies the full (N, t_inf + 1, L, 2) block explicitly. The final reverse
    step adds no noise.
    """
    sched = model.schedule
    t_inf = model.cfg.t_inf if t_inf is None else int(t_inf)
    legs = np.asarray(legs, dtype=float)
    subgoals = np.asarray(subgoals, dtype=float).reshape(-1, 4)
    if legs.ndim != 3 or legs.shape[2] != 2:
        raise ValueError("legs must have shape (N, L, 2)")
    if not 0 <= t_inf <= sched.T:
        raise ValueError(f"t_inf={t_inf} outside [0, {sched.T}]")
    if t_inf == 0:
        return legs.copy()
    N, L, _ = legs.shape
    if noise is None and seeds is None:
        raise ValueError("pass per-leg seeds or an explicit noise block")
    out = np.empty_like(legs)
    dtype = model.dtype
    model.eps_model.eval()
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        nz = noise[lo:hi] if noise is not None else _leg_noise(seeds[lo:hi], t_inf, L)
        ab = sched.alpha_bars[t_inf - 1]
        x = math.sqrt(ab) * legs[lo:hi] + math.sqrt(1.0 - ab) * nz[:, 0]
        g = torch.tensor(subgoals[lo:hi], dtype=dtype)
        for t in range(t_inf, 0, -1):
            tt = torch.full((hi - lo,), t, dtype=torch.long)
            eps = model.predict_eps(torch.tensor(x, dtype=dtype), g, tt).double().numpy()
            beta, alpha, abar = sched.betas[t - 1], sched.alphas[t - 1], sched.alpha_bars[t - 1]
            x = (x - beta / math.sqrt(1.0 - abar) * eps) / math.sqrt(alpha)
            if t > 1:
                x = x + math.sqrt(sched.beta_tildes[t - 1]) * nz[:, t_inf - t + 1]
        out[lo:hi] = x
    return out


def reconstruct(model: DiffusionModel, leg, subgoals, t_inf: int | None = None, rng=None,
                noise: np.ndarray | None = None) -> np.ndarray:
    """Single-leg wrapper around :func:`reconstruct_batch`."""
    leg = np.asarray(leg, dtype=float)
    t_inf = model.cfg.t_inf if t_inf is None else int(t_inf)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal((1, t_inf + 1) + leg.shape)
    else:
        noise = np.asarray(noise, dtype=float).reshape((1, t_inf + 1) + leg.shape)
    return reconstruct_batch(model, leg[None], np.asarray(subgoals)[None], t_inf, noise=noise)[0]
