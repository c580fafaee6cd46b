"""Versioned JSON checkpoints with config-hash guards."""

import hashlib
import json
from pathlib import Path

from .errors import MissingArtifact, StaleArtifact

FORMAT_VERSION = 1


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, kind, payload, cfg_hash, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "config_hash": cfg_hash,
           **extra, "payload": payload}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)
    return path


def load_checkpoint(path, kind, expected_hash=None):
    """Read a checkpoint, refusing wrong kinds, versions or config hashes."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path} does not exist; run the upstream stage first")
    doc = json.loads(path.read_text())
    if doc.get("kind") != kind:
        raise StaleArtifact(f"{path} holds a {doc.get('kind')!r}, expected {kind!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise StaleArtifact(f"{path} has format version {doc.get('format_version')}")
    if expected_hash is not None and doc.get("config_hash") != expected_hash:
        raise StaleArtifact(
            f"{path} was produced under config {doc.get('config_hash')}, "
            f"current config is {expected_hash}; re-run that stage")
    return doc


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))
    return path
