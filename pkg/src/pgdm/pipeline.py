"""
End-to-end experiment plumbing shared by the CLI, the acceptance suite and
the notebooks: configuration, the data -> patterns -> predictor -> denoiser
chain, forecasting and the guidance-scale sweep.
"""

import copy
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .archetypal import fit_archetypes, select_archetype_count
from .data import SyntheticSpec, generate, sliding_windows, split, stack_windows
from .diffusion import (DenoiserConfig, GuidanceConfig, calibrate_gamma, make_schedule,
                        sample_forecasts, train_denoiser)
from .errors import InvalidInput
from .guidance import PredictorConfig, train_pattern_predictor, window_errors
from .io import config_hash
from .metrics import evaluate

log = logging.getLogger(__name__)

DEFAULTS = {
    "workdir": "pgdm_run",
    "seed": 0,
    "data": {
        "source": "synthetic",  # or "csv"
        "input_dir": None,
        "T": 3,
        "H": 5,
        "stride": 1,
        "split": [0.70, 0.15, 0.15],
        "synthetic": {f.name: f.default for f in fields(SyntheticSpec)},
    },
    "archetypes": {
        "p": 4,  # null selects p with the elbow rule over p_range
        "p_range": [2, 3, 4, 5, 6, 7, 8],
        "elbow_threshold": 0.05,
        "max_fit_frames": 400,
        "tol": 1e-6,
        "max_iter": 500,
    },
    "predictor": {"hidden": [64, 64], "activation": "tanh", "lr": 5e-4, "batch_size": 32,
                  "max_epochs": 100, "patience": 20},
    "diffusion": {"S": 200, "hidden": [256, 256], "activation": "tanh", "lr": 2e-3,
                  "lr_final": 1e-5, "batch_size": 64, "n_steps": 10000},
    "guidance": {"w_bar": 1.0, "w_star_bar": 0.2, "gamma": None, "p_drop": 0.2,
                 "gamma_quantile": 1.0},
    "evaluation": {"num_samples": 5, "max_windows": 500, "sweep": [0, 1, 2, 3, 4, 5],
                   "sweep_w_star": 0.0},
    "certify": {"n_pairs": 10_000, "n_points": 1000},
}

# config sections each stage depends on (cumulative), for stale-artifact checks
STAGE_KEYS = {
    "data": ["seed", "data"],
    "archetypes": ["seed", "data", "archetypes"],
    "predictor": ["seed", "data", "archetypes", "predictor", "guidance.gamma",
                  "guidance.gamma_quantile"],
    "denoiser": ["seed", "data", "archetypes", "predictor", "guidance.gamma",
                 "guidance.gamma_quantile", "guidance.p_drop", "diffusion"],
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _get(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, overrides=None):
        """Defaults, then the JSON file at ``path``, then ``overrides`` (flags win)."""
        raw = copy.deepcopy(DEFAULTS)
        if path is not None:
            raw = _merge(raw, json.loads(Path(path).read_text()))
        raw = _merge(raw, overrides or {})
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def workdir(self):
        return Path(self.raw["workdir"])

    def stage_hash(self, stage):
        return config_hash({k: _get(self.raw, k) for k in STAGE_KEYS[stage]})

    def synthetic_spec(self):
        return SyntheticSpec(**self.raw["data"]["synthetic"])

    def predictor_config(self):
        p = self.raw["predictor"]
        return PredictorConfig(hidden=tuple(p["hidden"]), activation=p["activation"],
                               lr=p["lr"], batch_size=p["batch_size"],
                               max_epochs=p["max_epochs"], patience=p["patience"],
                               seed=self.seed)

    def denoiser_config(self):
        q = self.raw["diffusion"]
        return DenoiserConfig(hidden=tuple(q["hidden"]), activation=q["activation"],
                              lr=q["lr"], lr_final=q["lr_final"],
                              batch_size=q["batch_size"], n_steps=q["n_steps"])

    def guidance_config(self, gamma, **override):
        g = dict(self.raw["guidance"])
        g.update(override)
        return GuidanceConfig(w_bar=g["w_bar"], w_star_bar=g["w_star_bar"],
                              gamma=g["gamma"] if g["gamma"] is not None else gamma,
                              p_drop=g["p_drop"])

    def validate(self):
        d = self.raw["data"]
        if d["source"] not in ("synthetic", "csv"):
            raise InvalidInput("data.source must be 'synthetic' or 'csv'")
        if d["source"] == "csv":
            if not d["input_dir"] or not Path(d["input_dir"]).is_dir():
                raise InvalidInput(f"data.input_dir {d['input_dir']!r} is not a directory")
        else:
            self.synthetic_spec()
        if int(d["T"]) < 1 or int(d["H"]) < 1:
            raise InvalidInput("T and H must be >= 1")
        a = self.raw["archetypes"]
        if a["p"] is not None and int(a["p"]) < 1:
            raise InvalidInput("archetypes.p must be >= 1")
        g = self.raw["guidance"]
        GuidanceConfig(w_bar=g["w_bar"], w_star_bar=g["w_star_bar"],
                       gamma=g["gamma"] if g["gamma"] is not None else 1.0,
                       p_drop=g["p_drop"])
        if int(self.raw["diffusion"]["S"]) < 1:
            raise InvalidInput("diffusion.S must be >= 1")
        if int(self.raw["evaluation"]["num_samples"]) < 1:
            raise InvalidInput("evaluation.num_samples must be >= 1")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def windows_from_sequences(ids, sequences, cfg):
    d = cfg["data"]
    wins = sliding_windows(sequences, int(d["T"]), int(d["H"]), int(d["stride"]), ids=ids)
    return split(wins, tuple(d["split"]), seed=cfg.seed)


def archetype_frames(train_windows, max_frames, seed):
    """Most recent history frame of every training window, subsampled."""
    frames = np.stack([w.history[-1] for w in train_windows])
    if max_frames and frames.shape[0] > max_frames:
        idx = np.sort(np.random.default_rng(seed).choice(frames.shape[0], max_frames,
                                                         replace=False))
        frames = frames[idx]
    return frames


def fit_patterns(train_windows, cfg):
    """Returns (ArchetypeSet, elbow curve or None)."""
    a = cfg["archetypes"]
    frames = archetype_frames(train_windows, a["max_fit_frames"], cfg.seed)
    curve = None
    p = a["p"]
    if p is None:
        p_values = [q for q in a["p_range"] if q <= frames.shape[0]]
        p, curve = select_archetype_count(frames, p_values, a["elbow_threshold"],
                                          seed=cfg.seed, tol=a["tol"],
                                          max_iter=a["max_iter"])
    A = fit_archetypes(frames, int(p), tol=a["tol"], max_iter=a["max_iter"], seed=cfg.seed)
    return A, curve


def train_guidance(splits, A, cfg):
    """Pattern predictor plus the calibrated tolerable uncertainty."""
    fA = train_pattern_predictor(splits["train"], A, cfg.predictor_config(),
                                 val_windows=splits["val"] or None)
    val = splits["val"] or splits["train"]
    u_val = window_errors(fA, A, val).u_history
    gamma = calibrate_gamma(u_val, cfg["guidance"]["gamma_quantile"])
    return fA, gamma


def train_diffusion(splits, A, fA, gamma, cfg):
    sched = make_schedule(int(cfg["diffusion"]["S"]))
    den = train_denoiser(splits["train"], A, fA, sched, cfg.guidance_config(gamma),
                         cfg.denoiser_config(), seed=cfg.seed)
    return den, sched


@dataclass
class Experiment:
    cfg: RunConfig
    splits: dict
    A: object
    fA: object
    den: object
    sched: object
    gamma: float
    elbow: dict = None


def run_experiment(cfg, sequences=None, ids=None):
    """Train every stage in memory on synthetic (default) or given sequences."""
    if sequences is None:
        ds = generate(cfg.synthetic_spec(), seed=cfg.seed)
        sequences, ids = ds.sequences, ds.ids
    splits = windows_from_sequences(ids, sequences, cfg)
    A, curve = fit_patterns(splits["train"], cfg)
    fA, gamma = train_guidance(splits, A, cfg)
    den, sched = train_diffusion(splits, A, fA, gamma, cfg)
    return Experiment(cfg, splits, A, fA, den, sched, gamma, curve)


def eval_windows(windows, max_windows):
    return windows[:max_windows] if max_windows else windows


def forecast(exp_or_parts, windows, gcfg, num_samples, seed):
    A, fA, den, sched = exp_or_parts
    hist, hor = stack_windows(windows)
    return sample_forecasts(den, fA, A, sched, gcfg, hist, num_samples, seed), \
        np.swapaxes(hor, 1, 2)


def guidance_sweep(parts, windows, cfg, gamma, seed=None):
    """Metrics for the configured guidance/mixing pair and a sweep over w_bar.

    Every row uses the same sampling seed, so differences come from the
    guidance settings alone.
    """
    e = cfg["evaluation"]
    seed = cfg.seed + 1 if seed is None else seed
    K = int(e["num_samples"])
    rows = []
    settings = [(float(w), float(e["sweep_w_star"]), "sweep") for w in e["sweep"]]
    g = cfg["guidance"]
    settings.append((float(g["w_bar"]), float(g["w_star_bar"]), "configured"))
    settings.append((0.0, 0.0, "unguided"))
    cache = {}
    for w_bar, w_star, tag in settings:
        key = (w_bar, w_star)
        if key not in cache:
            gcfg = cfg.guidance_config(gamma, w_bar=w_bar, w_star_bar=w_star)
            out, truth = forecast(parts, windows, gcfg, K, seed)
            report = evaluate(out["forecasts"], truth)
            report["mean_w"] = float(np.mean(out["w"]))
            report["mean_w_star"] = float(np.mean(out["w_star"]))
            cache[key] = report
        rows.append({"w_bar": w_bar, "w_star_bar": w_star, "role": tag, **cache[key]})
    base = cache[(0.0, 0.0)]
    for row in rows:
        row["mae_delta_vs_unguided"] = row["mae_mean"] - base["mae_mean"]
        row["mae_reduction_pct"] = 100.0 * (base["mae_mean"] - row["mae_mean"]) / base["mae_mean"]
    return rows
