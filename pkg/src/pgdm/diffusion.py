"""
Denoising diffusion over forecast horizons with classifier-free pattern
guidance whose strength is set per window from AAUQ, and a final mix of the
raw pattern prediction into the sampled forecast.

Forecasts are returned as (d x H) matrices like the predicted patterns.
Internally horizons are flattened step-major, (H, d) -> H*d.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .archetypal import aauq_batch
from .errors import InvalidInput, InvalidState, NumericalDivergence, ShapeError
from .guidance import guide_batch, require_trained

log = logging.getLogger(__name__)

DEFAULT_STEPS = 200
EMBED_DIM = 16


# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def S(self):
        return self.betas.shape[0]

    def to_dict(self):
        return {"S": self.S, "betas": self.betas.tolist()}

    @classmethod
    def from_betas(cls, betas):
        betas = np.asarray(betas, dtype=float)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidInput("need at least one beta")
        if np.any(betas <= 0) or np.any(betas >= 1) or np.any(np.diff(betas) < 0):
            raise InvalidInput("betas must be non-decreasing and inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        return cls(betas, alphas, alpha_bars)


def make_schedule(S=DEFAULT_STEPS, beta_start=None, beta_end=None, kind="linear"):
    """Linear beta schedule.

    With no explicit bounds the familiar 1e-4 -> 0.02 range (tuned for 1000
    steps) is rescaled by 1000 / S, which keeps the terminal signal level
    negligible for short chains. Rescaled betas are capped at 0.5.
    """
    if kind != "linear":
        raise InvalidInput(f"unsupported schedule kind {kind!r}")
    if S < 1:
        raise InvalidInput("S must be >= 1")
    scale = 1000.0 / S
    beta_start = min(1e-4 * scale, 0.5) if beta_start is None else beta_start
    beta_end = min(0.02 * scale, 0.5) if beta_end is None else beta_end
    betas = np.array([beta_start]) if S == 1 else np.linspace(beta_start, beta_end, S)
    return NoiseSchedule.from_betas(betas)


def forward_sample(x0, s, sched, noise):
    """Closed-form noising of ``x0`` to step ``s`` (1-based)."""
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x0.shape:
        raise ShapeError("noise must match x0")
    if not 1 <= s <= sched.S:
        raise InvalidInput(f"step {s} outside [1, {sched.S}]")
    ab = sched.alpha_bars[s - 1]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


# ---------------------------------------------------------------------------
# guidance knobs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceConfig:
    w_bar: float = 1.0
    w_star_bar: float = 0.2
    gamma: float = 0.1
    p_drop: float = 0.2

    def __post_init__(self):
        if self.w_bar < 0:
            raise InvalidInput("w_bar must be >= 0")
        if not 0.0 <= self.w_star_bar <= 1.0:
            raise InvalidInput("w_star_bar must lie in [0, 1]")
        if self.gamma <= 0:
            raise InvalidInput("gamma must be > 0")
        if not 0.0 <= self.p_drop <= 1.0:
            raise InvalidInput("p_drop must lie in [0, 1]")


def dynamic_scale(u, max_scale, gamma):
    """ReLU ramp from ``max_scale`` at zero uncertainty down to 0 at ``gamma``."""
    u = np.asarray(u, dtype=float)
    out = np.maximum(-(max_scale / gamma) * u + max_scale, 0.0)
    return float(out) if out.ndim == 0 else out


def calibrate_gamma(uncertainties, quantile=1.0):
    """Tolerable uncertainty taken from the spread of validation AAUQ values."""
    u = np.asarray(uncertainties, dtype=float)
    g = float(np.quantile(u, quantile))
    return g if g > 0 else 1e-6


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Per-dimension affine map of the training range onto [0, 1]."""

    lo: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, frames):
        frames = np.asarray(frames, dtype=float).reshape(-1, np.shape(frames)[-1])
        lo = frames.min(axis=0)
        span = frames.max(axis=0) - lo
        return cls(lo, np.where(span > 0, span, 1.0))

    def apply(self, x):
        return (x - self.lo) / self.scale

    def invert(self, z):
        return z * self.scale + self.lo

    def to_dict(self):
        return {"lo": self.lo.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj):
        return cls(np.asarray(obj["lo"], dtype=float), np.asarray(obj["scale"], dtype=float))


# ---------------------------------------------------------------------------
# denoiser
# ---------------------------------------------------------------------------

def timestep_embedding(s, dim=EMBED_DIM):
    s = np.asarray(s, dtype=float).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = s * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class Denoiser:
    """Noise predictor over [noisy horizon, history, pattern, has-pattern flag, t-embed].

    The null conditioning is an all-zero pattern with the flag set to 0.
    """

    net: nn.Mlp
    d: int
    T: int
    H: int
    normalizer: Normalizer
    embed_dim: int = EMBED_DIM
    trained: bool = False
    archetype_fingerprint: str = ""
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def width(self):
        return self.d * self.H

    def inputs(self, z, hist, cond, s):
        n = z.shape[0]
        if cond is None:
            cond = np.zeros((n, self.width))
            flag = np.zeros((n, 1))
        else:
            flag = np.ones((n, 1))
        s = np.broadcast_to(np.asarray(s), (n,))
        return np.concatenate([z, hist, cond, flag, timestep_embedding(s, self.embed_dim)],
                              axis=1)

    def eps(self, z, hist, cond, s):
        """Noise estimate for flattened normalized inputs; ``cond=None`` is the null token."""
        return nn.forward(self.net, self.inputs(z, hist, cond, s))

    def to_dict(self):
        return {"d": self.d, "T": self.T, "H": self.H, "embed_dim": self.embed_dim,
                "trained": self.trained, "archetype_fingerprint": self.archetype_fingerprint,
                "normalizer": self.normalizer.to_dict(), "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(nn.Mlp.from_dict(obj["net"]), int(obj["d"]), int(obj["T"]), int(obj["H"]),
                   Normalizer.from_dict(obj["normalizer"]), int(obj["embed_dim"]),
                   bool(obj["trained"]), obj.get("archetype_fingerprint", ""))


def make_denoiser(d, T, H, normalizer, hidden=(128, 128), activation="relu", seed=0,
                  embed_dim=EMBED_DIM):
    width = d * H
    n_in = width + d * T + width + 1 + embed_dim
    net = nn.init_mlp([n_in, *hidden, width], activation, seed=seed)
    # conditioning inputs start disconnected; they only acquire weight from
    # batches where the pattern is present
    cond = slice(width + d * T, width + d * T + width + 1)
    net.weights[0][cond] = 0.0
    return Denoiser(net, d, T, H, normalizer, embed_dim)


@dataclass
class DenoiserConfig:
    hidden: tuple = (128, 128)
    activation: str = "relu"
    lr: float = 1e-3
    lr_final: float = None  # cosine decay target; None keeps lr constant
    batch_size: int = 64
    n_steps: int = 6000
    eval_every: int = 50
    eval_batch: int = 256


def _denoise_arrays(windows, normalizer):
    hist = np.stack([w.history for w in windows])
    hor = np.stack([w.horizon for w in windows])
    n = hist.shape[0]
    return normalizer.apply(hist).reshape(n, -1), normalizer.apply(hor).reshape(n, -1)


def train_denoiser(windows, A, fA, sched, gcfg, cfg=None, seed=0, normalizer=None):
    """Train the noise predictor with conditioning dropout.

    Each step draws a minibatch of windows, diffusion steps uniformly from
    1..S, standard normal noise, and replaces the predicted pattern by the
    null token with probability ``p_drop``. ``loss_history`` records the
    loss on a fixed evaluation batch with frozen draws.
    """
    cfg = cfg or DenoiserConfig()
    require_trained(fA)
    if not windows:
        raise InvalidInput("no training windows")
    d, T, H = windows[0].d, windows[0].T, windows[0].H
    if normalizer is None:
        normalizer = Normalizer.fit(np.concatenate(
            [np.concatenate([w.history, w.horizon]) for w in windows]))
    hist_n, hor_n = _denoise_arrays(windows, normalizer)
    pattern = guide_batch(fA, A, np.stack([w.history for w in windows]))
    pat_n = normalizer.apply(pattern).reshape(len(windows), -1)

    den = make_denoiser(d, T, H, normalizer, cfg.hidden, cfg.activation, seed=seed)
    den.archetype_fingerprint = A.fingerprint()
    rng = np.random.default_rng(seed)
    n = len(windows)
    width = den.width

    eval_rng = np.random.default_rng([seed, 1])
    e_idx = eval_rng.integers(n, size=min(cfg.eval_batch, n))
    e_s = eval_rng.integers(1, sched.S + 1, size=e_idx.size)
    e_eps = eval_rng.standard_normal((e_idx.size, width))
    e_drop = eval_rng.random(e_idx.size) < gcfg.p_drop
    e_x = _noisy_inputs(den, sched, hor_n[e_idx], hist_n[e_idx], pat_n[e_idx], e_s, e_eps, e_drop)

    state = nn.AdamState(lr=cfg.lr)
    params = den.net.params()
    for step in range(cfg.n_steps + 1):
        if step % cfg.eval_every == 0:
            den.loss_history.append((step, nn.loss_value(den.net, "mse", e_x, e_eps)))
        if step == cfg.n_steps:
            break
        if cfg.lr_final is not None:
            frac = step / max(cfg.n_steps, 1)
            state.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
        idx = rng.integers(n, size=cfg.batch_size)
        s = rng.integers(1, sched.S + 1, size=idx.size)
        eps = rng.standard_normal((idx.size, width))
        drop = rng.random(idx.size) < gcfg.p_drop
        x = _noisy_inputs(den, sched, hor_n[idx], hist_n[idx], pat_n[idx], s, eps, drop)
        _, grads = nn.backward(den.net, "mse", x, eps)
        params = nn.adam_step(state, params, grads)
        den.net = den.net.with_params(params)
    den.trained = True
    return den


def _noisy_inputs(den, sched, x0, hist, pat, s, eps, drop):
    ab = sched.alpha_bars[s - 1][:, None]
    z = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    cond = np.where(drop[:, None], 0.0, pat)
    flag = (~drop).astype(float)[:, None]
    return np.concatenate([z, hist, cond, flag, timestep_embedding(s, den.embed_dim)], axis=1)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def guided_epsilon(denoiser, z, history, P_hat, w, s):
    """w * eps(pattern) + (1 - w) * eps(null) for normalized flattened inputs."""
    cond = denoiser.eps(z, history, P_hat, s)
    uncond = denoiser.eps(z, history, None, s)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    return w * cond + (1.0 - w) * uncond


@dataclass(frozen=True)
class SampleResult:
    forecast: np.ndarray  # (d, H)
    u: float
    w_used: float
    w_star_used: float


def _reverse_chain(den, sched, hist_n, pat_n, w, noise):
    """Run S reverse steps for a batch; noise is (N, S, width)."""
    x = noise[:, 0].copy()
    wcol = w[:, None]
    use_cond = np.any(w != 0)
    use_uncond = np.any(w != 1)
    for s in range(sched.S, 0, -1):
        if use_cond and use_uncond:
            cond = den.eps(x, hist_n, pat_n, s)
            uncond = den.eps(x, hist_n, None, s)
            eps_hat = wcol * cond + (1.0 - wcol) * uncond
        elif use_cond:
            eps_hat = den.eps(x, hist_n, pat_n, s)
        else:
            eps_hat = den.eps(x, hist_n, None, s)
        a = sched.alphas[s - 1]
        coef = (1.0 - a) / math.sqrt(1.0 - sched.alpha_bars[s - 1])
        x = (x - coef * eps_hat) / math.sqrt(a)
        if s > 1:
            x = x + math.sqrt(sched.betas[s - 1]) * noise[:, sched.S - s + 1]
        if not np.all(np.isfinite(x)):
            raise NumericalDivergence(s)
    return x


def _check_ready(den, fA, A, sched):
    require_trained(fA)
    if not den.trained:
        raise InvalidState("denoiser has not been trained")
    if den.T != fA.T or den.H != fA.H or den.d != A.d or fA.p != A.p:
        raise ShapeError("denoiser, predictor and archetypes disagree on shapes")


def sample_forecasts(den, fA, A, sched, gcfg, histories, num_samples=1, seed=0):
    """Guided forecasts for many windows.

    Window i draws all its noise from ``default_rng([seed, i])``, so results
    do not depend on how windows are batched. Returns a dict with
    ``forecasts`` (N, K, d, H) and per-window ``u``, ``w``, ``w_star``.
    """
    _check_ready(den, fA, A, sched)
    histories = np.asarray(histories, dtype=float)
    n = histories.shape[0]
    K = num_samples
    u = aauq_batch(histories, A)
    w = dynamic_scale(u, gcfg.w_bar, gcfg.gamma)
    w_star = dynamic_scale(u, gcfg.w_star_bar, gcfg.gamma)
    pattern = guide_batch(fA, A, histories)  # (N, H, d)
    hist_n = den.normalizer.apply(histories).reshape(n, -1)
    pat_n = den.normalizer.apply(pattern).reshape(n, -1)

    noise = np.stack([np.random.default_rng([seed, i]).standard_normal((K, sched.S, den.width))
                      for i in range(n)]).reshape(n * K, sched.S, den.width)
    rep = np.repeat(np.arange(n), K)
    x0 = _reverse_chain(den, sched, hist_n[rep], pat_n[rep], w[rep], noise)
    x0 = den.normalizer.invert(x0.reshape(n, K, den.H, den.d))
    ws = w_star[:, None, None, None]
    mixed = ws * pattern[:, None] + (1.0 - ws) * x0
    return {"forecasts": np.swapaxes(mixed, 2, 3), "u": u, "w": w, "w_star": w_star,
            "patterns": np.swapaxes(pattern, 1, 2)}


def sample_horizon(den, fA, A, sched, gcfg, history, rng):
    """One guided forecast (d x H) for a single (T x d) history.

    Draws an (S, d*H) block of standard normals from ``rng``: row 0 seeds
    the chain, row k is the step noise for s = S - k + 1.
    """
    _check_ready(den, fA, A, sched)
    history = np.asarray(history, dtype=float)
    if history.shape != (den.T, den.d):
        raise ShapeError(f"history must be ({den.T}, {den.d})")
    u = float(aauq_batch(history[None], A)[0])
    w = dynamic_scale(u, gcfg.w_bar, gcfg.gamma)
    w_star = dynamic_scale(u, gcfg.w_star_bar, gcfg.gamma)
    pattern = guide_batch(fA, A, history[None])[0]  # (H, d)
    noise = rng.standard_normal((sched.S, den.width))
    hist_n = den.normalizer.apply(history).reshape(1, -1)
    pat_n = den.normalizer.apply(pattern).reshape(1, -1)
    x0 = _reverse_chain(den, sched, hist_n, pat_n, np.array([w]), noise[None])
    x0 = den.normalizer.invert(x0.reshape(den.H, den.d))
    mixed = w_star * pattern + (1.0 - w_star) * x0
    return SampleResult(mixed.T, u, w, w_star)
