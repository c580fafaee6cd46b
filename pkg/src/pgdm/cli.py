"""
Command-line pipeline. Every stage reads the run config (JSON file plus
flag overrides), loads upstream artifacts from the work directory, refuses
artifacts produced under a different config, and writes its own outputs.

    pgdm generate | ingest | fit-patterns | train-guidance | train-diffusion
         | forecast | evaluate | certify

Failures exit non-zero and print a JSON error object on stderr. The log
level comes from the PGDM_LOG_LEVEL environment variable.
"""

import argparse
import csv
import json
import logging
import os
import sys
import numpy as np

from . import certify as cert
from .archetypal import ArchetypeSet, hull_distance_batch, reconstruction_errors
from .data import generate, read_sequence_csv, read_sequences_dir, write_sequence_csv
from .diffusion import Denoiser, NoiseSchedule
from .errors import PGDMError, StaleArtifact
from .guidance import PatternPredictor, window_errors
from .io import load_checkpoint, save_checkpoint, write_json
from .pipeline import (RunConfig, archetype_frames, eval_windows, fit_patterns, forecast, guidance_sweep,
                       train_diffusion, train_guidance, windows_from_sequences)

log = logging.getLogger("pgdm")

MANIFEST = "data/manifest.json"
ARCHETYPES = "checkpoints/archetypes.json"
PREDICTOR = "checkpoints/predictor.json"
DENOISER = "checkpoints/denoiser.json"


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _write_dataset(cfg, ids, sequences, source, extra=None):
    root = cfg.workdir / "data"
    seq_dir = root / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)
    for old in seq_dir.glob("*.csv"):
        old.unlink()
    files = []
    for sid, seq in zip(ids, sequences):
        path = seq_dir / f"{sid}.csv"
        write_sequence_csv(path, seq)
        files.append({"id": sid, "path": str(path.relative_to(cfg.workdir)),
                      "frames": int(seq.shape[0])})
    splits = windows_from_sequences(ids, sequences, cfg)
    assignment = {}
    for name, wins in splits.items():
        for w in wins:
            assignment[w.source_id] = name
    for f in files:
        f["split"] = assignment.get(f["id"], "unused")
    manifest = {"source": source, "d": int(sequences[0].shape[1]), "T": cfg["data"]["T"],
                "H": cfg["data"]["H"], "files": files,
                "n_windows": {k: len(v) for k, v in splits.items()}, **(extra or {})}
    save_checkpoint(cfg.workdir / MANIFEST, "manifest", manifest, cfg.stage_hash("data"))
    return manifest


def _load_splits(cfg):
    doc = load_checkpoint(cfg.workdir / MANIFEST, "manifest", cfg.stage_hash("data"))
    files = doc["payload"]["files"]
    ids = [f["id"] for f in files]
    sequences = [read_sequence_csv(cfg.workdir / f["path"]) for f in files]
    return windows_from_sequences(ids, sequences, cfg), doc["payload"]


def _load_archetypes(cfg):
    doc = load_checkpoint(cfg.workdir / ARCHETYPES, "archetypes", cfg.stage_hash("archetypes"))
    return ArchetypeSet.from_dict(doc["payload"])


def _load_predictor(cfg, A):
    doc = load_checkpoint(cfg.workdir / PREDICTOR, "predictor", cfg.stage_hash("predictor"))
    fA = PatternPredictor.from_dict(doc["payload"])
    if fA.archetype_fingerprint != A.fingerprint():
        raise StaleArtifact("predictor was trained against different archetypes")
    return fA, float(doc["gamma"])


def _load_denoiser(cfg, A):
    doc = load_checkpoint(cfg.workdir / DENOISER, "denoiser", cfg.stage_hash("denoiser"))
    den = Denoiser.from_dict(doc["payload"])
    if doc["archetype_fingerprint"] != A.fingerprint():
        raise StaleArtifact("denoiser was trained against different archetypes")
    return den, NoiseSchedule.from_betas(doc["schedule"]["betas"])


def _load_all(cfg):
    splits, manifest = _load_splits(cfg)
    A = _load_archetypes(cfg)
    fA, gamma = _load_predictor(cfg, A)
    den, sched = _load_denoiser(cfg, A)
    return splits, manifest, A, fA, gamma, den, sched


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg):
    ds = generate(cfg.synthetic_spec(), seed=cfg.seed)
    extra = {"true_archetypes": ds.archetypes.tolist(),
             "ood": {sid: bool(flag) for sid, flag in zip(ds.ids, ds.ood)}}
    manifest = _write_dataset(cfg, ds.ids, ds.sequences, "synthetic", extra)
    return {"sequences": len(manifest["files"]), "n_windows": manifest["n_windows"]}


def cmd_ingest(cfg):
    ids, sequences = read_sequences_dir(cfg["data"]["input_dir"])
    widths = {s.shape[1] for s in sequences}
    if len(widths) != 1:
        raise StaleArtifact(f"input sequences have differing widths {sorted(widths)}")
    manifest = _write_dataset(cfg, ids, sequences, "csv",
                              {"input_dir": str(cfg["data"]["input_dir"])})
    return {"sequences": len(manifest["files"]), "n_windows": manifest["n_windows"]}


def cmd_fit_patterns(cfg):
    splits, _ = _load_splits(cfg)
    A, curve = fit_patterns(splits["train"], cfg)
    save_checkpoint(cfg.workdir / ARCHETYPES, "archetypes", A.to_dict(),
                    cfg.stage_hash("archetypes"))
    out = {"p": A.p, "fit_rss": A.fit_rss, "iterations": A.iterations_used}
    if curve is not None:
        out["elbow_curve"] = {str(k): v for k, v in curve.items()}
        write_json(cfg.workdir / "reports/elbow.json", out)
    return out


def cmd_train_guidance(cfg):
    splits, _ = _load_splits(cfg)
    A = _load_archetypes(cfg)
    fA, gamma = train_guidance(splits, A, cfg)
    save_checkpoint(cfg.workdir / PREDICTOR, "predictor", fA.to_dict(),
                    cfg.stage_hash("predictor"), gamma=gamma,
                    archetype_fingerprint=A.fingerprint())
    last = fA.history[-1] if fA.history else {}
    return {"epochs": len(fA.history), "gamma": gamma, **last}


def cmd_train_diffusion(cfg):
    splits, _ = _load_splits(cfg)
    A = _load_archetypes(cfg)
    fA, gamma = _load_predictor(cfg, A)
    den, sched = train_diffusion(splits, A, fA, gamma, cfg)
    save_checkpoint(cfg.workdir / DENOISER, "denoiser", den.to_dict(),
                    cfg.stage_hash("denoiser"), schedule=sched.to_dict(),
                    guidance=vars(cfg.guidance_config(gamma)),
                    archetype_fingerprint=A.fingerprint(),
                    loss_history=den.loss_history)
    return {"steps": cfg["diffusion"]["n_steps"], "final_eval_loss": den.loss_history[-1][1]}


def cmd_forecast(cfg, num_samples=None, split_name="test"):
    splits, _, A, fA, gamma, den, sched = _load_all(cfg)
    K = int(num_samples or cfg["evaluation"]["num_samples"])
    windows = eval_windows(splits[split_name], cfg["evaluation"]["max_windows"])
    gcfg = cfg.guidance_config(gamma)
    out, _ = forecast((A, fA, den, sched), windows, gcfg, K, cfg.seed + 1)
    fc = out["forecasts"]  # (N, K, d, H)
    rdir = cfg.workdir / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    with open(rdir / "forecasts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        d = fc.shape[2]
        writer.writerow(["window", "source_id", "offset", "sample", "step"]
                        + [f"x{j}" for j in range(d)])
        for i, w in enumerate(windows):
            for k in range(K):
                for h in range(fc.shape[3]):
                    writer.writerow([i, w.source_id, w.offset, k, h]
                                    + [repr(float(v)) for v in fc[i, k, :, h]])
    meta = [{"window": i, "source_id": w.source_id, "offset": w.offset,
             "u": float(out["u"][i]), "w_used": float(out["w"][i]),
             "w_star_used": float(out["w_star"][i])} for i, w in enumerate(windows)]
    write_json(rdir / "forecasts.json", {"guidance": vars(gcfg), "num_samples": K,
                                         "windows": meta})
    return {"windows": len(windows), "num_samples": K,
            "mean_u": float(np.mean(out["u"])), "mean_w": float(np.mean(out["w"]))}


def cmd_evaluate(cfg):
    splits, _, A, fA, gamma, den, sched = _load_all(cfg)
    windows = eval_windows(splits["test"], cfg["evaluation"]["max_windows"])
    rows = guidance_sweep((A, fA, den, sched), windows, cfg, gamma)
    configured = next(r for r in rows if r["role"] == "configured")
    report = {"gamma": gamma, "rows": rows,
              **{k: configured[k] for k in ("mae_mean", "mae_std", "crps_raw",
                                            "crps_normalized", "n_windows", "K")}}
    write_json(cfg.workdir / "reports/evaluation.json", report)
    return {"configured": configured,
            "sweep": [(r["w_bar"], round(r["mae_mean"], 6)) for r in rows
                      if r["role"] == "sweep"]}


def cmd_certify(cfg):
    n_pairs = int(cfg["certify"]["n_pairs"])
    n_points = int(cfg["certify"]["n_points"])
    splits, manifest, A, fA, gamma, _, _ = _load_all(cfg)
    test = splits["test"] or splits["train"]
    e = window_errors(fA, A, test)
    margin = e.L_fG - (e.L_cA_horizon - e.L_fA)
    trained = {"n_windows": len(test), "violations": int(np.sum(margin < -1e-9)),
               "min_margin": float(margin.min()),
               "pearson_u_vs_L_fG": float(np.corrcoef(e.u_history, e.L_fG)[0, 1])
               if len(test) > 1 else None}
    randomized = cert.certify_guidance_bound(n_pairs, seed=cfg.seed)

    # sandwich on test frames against the frames the archetypes were fitted on
    fit_frames = archetype_frames(splits["train"], cfg["archetypes"]["max_fit_frames"],
                                  cfg.seed)
    X = np.stack([w.history[-1] for w in test])[:n_points]
    u = reconstruction_errors(X, A)
    dist, _, delta = hull_distance_batch(X, fit_frames, A)
    excess = np.abs(u - dist) - delta
    sandwich = {"n_points": int(X.shape[0]), "violations": int(np.sum(excess > 1e-6)),
                "max_excess": float(excess.max()), "max_delta": float(delta.max())}
    report = {
        "theorem1": {"trained_predictor": trained, "randomized": randomized,
                     "violations": trained["violations"] + randomized["violations"]},
        "theorem2": {"pipeline_frames": sandwich,
                     "randomized": cert.certify_hull_sandwich(n_points, seed=cfg.seed),
                     "p_equals_n": cert.certify_full_archetypes(seed=cfg.seed)},
    }
    write_json(cfg.workdir / "reports/certify.json", report)
    return {"theorem1_violations": report["theorem1"]["violations"],
            "theorem2_violations": sandwich["violations"]
            + report["theorem2"]["randomized"]["violations"],
            "p_equals_n_max_abs_diff": report["theorem2"]["p_equals_n"]["max_abs_diff"]}


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "fit-patterns": cmd_fit_patterns,
    "train-guidance": cmd_train_guidance,
    "train-diffusion": cmd_train_diffusion,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "certify": cmd_certify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="pgdm", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--workdir", help="artifact directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--p", type=int, help="number of archetypes (0 = elbow rule)")
    common.add_argument("--w-bar", type=float, dest="w_bar")
    common.add_argument("--w-star-bar", type=float, dest="w_star_bar")
    common.add_argument("--gamma", type=float)
    common.add_argument("--steps", type=int, help="denoiser training steps")
    common.add_argument("--max-windows", type=int, dest="max_windows")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "ingest":
            sp.add_argument("--input-dir", dest="input_dir", help="directory of CSV sequences")
        if name == "forecast":
            sp.add_argument("--num-samples", type=int, dest="num_samples")
    return parser


def _overrides(args):
    o = {}
    if args.workdir:
        o["workdir"] = args.workdir
    if args.seed is not None:
        o["seed"] = args.seed
    if args.p is not None:
        o.setdefault("archetypes", {})["p"] = args.p or None
    for key in ("w_bar", "w_star_bar", "gamma"):
        if getattr(args, key) is not None:
            o.setdefault("guidance", {})[key] = getattr(args, key)
    if args.steps is not None:
        o.setdefault("diffusion", {})["n_steps"] = args.steps
    if args.max_windows is not None:
        o.setdefault("evaluation", {})["max_windows"] = args.max_windows
    if getattr(args, "input_dir", None):
        o.setdefault("data", {}).update(source="csv", input_dir=args.input_dir)
    return o


def main(argv=None):
    logging.basicConfig(level=os.environ.get("PGDM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        kwargs = {}
        if args.command == "forecast" and args.num_samples:
            kwargs["num_samples"] = args.num_samples
        result = COMMANDS[args.command](cfg, **kwargs)
    except PGDMError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "ok": True, **result}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
