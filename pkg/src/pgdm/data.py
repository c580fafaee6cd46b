"""
Synthetic pattern sequences with known archetypes, CSV ingestion,
sliding windows and leakage-free sequence-level splits.
"""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .errors import InvalidInput, ShapeError, SplitWarning

DYNAMICS = ("constant", "linear-drift", "oscillating", "random-walk-on-simplex")


@dataclass(frozen=True)
class SequenceWindow:
    history: np.ndarray  # (T, d)
    horizon: np.ndarray  # (H, d)
    source_id: str = ""
    offset: int = 0

    def __post_init__(self):
        if self.history.ndim != 2 or self.horizon.ndim != 2:
            raise ShapeError("history and horizon must be (frames, d) arrays")
        if self.history.shape[0] < 1 or self.horizon.shape[0] < 1:
            raise ShapeError("history and horizon need at least one frame")
        if self.history.shape[1] != self.horizon.shape[1]:
            raise ShapeError("history and horizon frame widths differ")
        if not (np.all(np.isfinite(self.history)) and np.all(np.isfinite(self.horizon))):
            raise InvalidInput("window contains non-finite frames")

    @property
    def T(self):
        return self.history.shape[0]

    @property
    def H(self):
        return self.horizon.shape[0]

    @property
    def d(self):
        return self.history.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 8
    p_true: int = 4
    n_sequences: int = 400
    sequence_length: int = 40
    coeff_dynamics: str = "oscillating"
    noise_sigma: float = 0.02
    ood_fraction: float = 0.0
    ood_offset: float = 0.5
    period: int = 2
    drift_rate: float = 0.3  # random-walk mixing weight per step
    dirichlet_alpha: float = 1.0

    def __post_init__(self):
        if self.coeff_dynamics not in DYNAMICS:
            raise InvalidInput(f"coeff_dynamics must be one of {DYNAMICS}")
        if not 0.0 <= self.ood_fraction <= 1.0:
            raise InvalidInput("ood_fraction must lie in [0, 1]")
        if not 0.0 <= self.drift_rate <= 1.0:
            raise InvalidInput("drift_rate must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be >= 0")
        if self.p_true < 1 or self.d < 1 or self.period < 1:
            raise InvalidInput("d, p_true and period must be positive")


@dataclass
class SyntheticDataset:
    sequences: list  # each (L, d)
    coeffs: list  # each (L, p_true), the noiseless simplex path
    archetypes: np.ndarray  # (d, p_true)
    ood: np.ndarray  # bool per sequence
    ood_directions: dict = field(default_factory=dict)
    ids: list = field(default_factory=list)


def random_archetypes(d, p, rng):
    """``p`` affinely independent points in [0, 1]^d (requires p <= d + 1)."""
    if p > d + 1:
        raise InvalidInput(f"p_true={p} cannot be affinely independent in d={d}")
    while True:
        a = rng.uniform(0.0, 1.0, size=(d, p))
        if p == 1 or np.linalg.matrix_rank(a[:, 1:] - a[:, :1], tol=1e-3) == p - 1:
            return a


def _outward_faces(archetypes):
    """(vertex indices, unit outward normal) pairs for pushing points off the hull."""
    d, p = archetypes.shape
    centered = archetypes - archetypes.mean(axis=1, keepdims=True)
    u, s, _ = np.linalg.svd(centered, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * max(s.max(initial=0.0), 1.0)))
    if rank < d:
        # lower-dimensional hull: any direction orthogonal to its span is outward
        return [(np.arange(p), u[:, rank])]
    hull = ConvexHull(archetypes.T)
    faces = []
    for simplex, eq in zip(hull.simplices, hull.equations):
        normal = eq[:d] / np.linalg.norm(eq[:d])
        faces.append((np.asarray(simplex), normal))
    return faces


def _coeff_path(spec, k, rng):
    alpha = np.full(k, spec.dirichlet_alpha)
    L = spec.sequence_length
    c0 = rng.dirichlet(alpha)
    if spec.coeff_dynamics == "constant":
        return np.repeat(c0[None, :], L, axis=0)
    if spec.coeff_dynamics == "linear-drift":
        c1 = rng.dirichlet(alpha)
        lam = np.linspace(0.0, 1.0, L)[:, None] if L > 1 else np.zeros((1, 1))
        return (1.0 - lam) * c0 + lam * c1
    if spec.coeff_dynamics == "oscillating":
        c1 = rng.dirichlet(alpha)
        t = np.arange(L)
        phase = (t % spec.period) / spec.period
        phi = (0.5 * (1.0 - np.cos(2.0 * np.pi * phase)))[:, None]
        return (1.0 - phi) * c0 + phi * c1
    path = np.empty((L, k))
    path[0] = c0
    for t in range(1, L):
        path[t] = (1.0 - spec.drift_rate) * path[t - 1] + spec.drift_rate * rng.dirichlet(alpha)
    return path


def generate(spec, seed=0, archetypes=None):
    """Sample sequences ``x_t = A c_t + noise`` with simplex-valued ``c_t``.

    A fraction ``ood_fraction`` of sequences is confined to one face of the
    archetype hull and shifted by ``ood_offset`` along that face's outward
    normal, so their noiseless frames sit exactly ``ood_offset`` away from
    the hull. Pass ``archetypes`` (d x p) to reuse a fixed ground truth.
    """
    rng = np.random.default_rng(seed)
    if archetypes is None:
        archetypes = random_archetypes(spec.d, spec.p_true, rng)
    archetypes = np.asarray(archetypes, dtype=float)
    if archetypes.shape[0] != spec.d:
        raise ShapeError("archetypes must have d rows")
    p = archetypes.shape[1]
    faces = _outward_faces(archetypes) if spec.ood_fraction > 0 else []
    n_ood = int(round(spec.ood_fraction * spec.n_sequences))
    ood = np.zeros(spec.n_sequences, dtype=bool)
    ood[rng.permutation(spec.n_sequences)[:n_ood]] = True

    sequences, coeffs, directions, ids = [], [], {}, []
    width = len(str(max(spec.n_sequences - 1, 0)))
    for i in range(spec.n_sequences):
        sid = f"seq{i:0{width}d}"
        if ood[i]:
            verts, normal = faces[int(rng.integers(len(faces)))]
            sub = _coeff_path(spec, len(verts), rng)
            c = np.zeros((spec.sequence_length, p))
            c[:, verts] = sub
            shift = spec.ood_offset * normal
            directions[sid] = normal
        else:
            c = _coeff_path(spec, p, rng)
            shift = 0.0
        x = c @ archetypes.T + shift
        if spec.noise_sigma > 0:
            x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
        sequences.append(x)
        coeffs.append(c)
        ids.append(sid)
    return SyntheticDataset(sequences, coeffs, archetypes, ood, directions, ids)


def sliding_windows(sequences, T, H, stride=1, ids=None):
    """All windows of T history and H horizon frames from each sequence."""
    if T < 1 or H < 1 or stride < 1:
        raise InvalidInput("T, H and stride must be positive")
    if ids is None:
        ids = [str(i) for i in range(len(sequences))]
    out = []
    for sid, seq in zip(ids, sequences):
        seq = np.asarray(seq, dtype=float)
        for start in range(0, seq.shape[0] - T - H + 1, stride):
            out.append(SequenceWindow(seq[start:start + T], seq[start + T:start + T + H],
                                      sid, start))
    return out


def split_sources(source_ids, ratios=(0.70, 0.15, 0.15), seed=0):
    """Assign each distinct source id to train/val/test; returns a dict id -> split."""
    uniq = sorted(set(source_ids))
    if not np.isclose(sum(ratios), 1.0):
        raise InvalidInput("split ratios must sum to 1")
    if len(uniq) == 1:
        warnings.warn("only one sequence: everything goes to train", SplitWarning,
                      stacklevel=3)
        return {uniq[0]: "train"}
    order = np.random.default_rng(seed).permutation(len(uniq))
    n = len(uniq)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    names = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
    return {uniq[i]: name for i, name in zip(order, names)}


def split(windows, ratios=(0.70, 0.15, 0.15), seed=0):
    """Sequence-level train/val/test split of windows."""
    assignment = split_sources([w.source_id for w in windows], ratios, seed)
    out = {"train": [], "val": [], "test": []}
    for w in windows:
        out[assignment[w.source_id]].append(w)
    return out


def stack_windows(windows):
    """(histories (N, T, d), horizons (N, H, d)) arrays from a window list."""
    if not windows:
        raise InvalidInput("no windows")
    return (np.stack([w.history for w in windows]), np.stack([w.horizon for w in windows]))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def read_sequence_csv(path):
    """One frame per row, comma separated; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if i == 0:
                    continue
                raise InvalidInput(f"{path}: non-numeric value on line {i + 1}")
    if not rows:
        raise InvalidInput(f"{path}: no frames")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ShapeError(f"{path}: ragged rows")
    arr = np.asarray(rows)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{path}: non-finite values")
    return arr


def write_sequence_csv(path, frames, header=True):
    frames = np.asarray(frames, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"x{j}" for j in range(frames.shape[1])])
        for row in frames:
            writer.writerow([repr(float(v)) for v in row])


def read_sequences_dir(directory):
    """Every ``*.csv`` in ``directory``, sorted by name; returns (ids, sequences)."""
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise InvalidInput(f"no CSV files in {directory}")
    return [p.stem for p in paths], [read_sequence_csv(p) for p in paths]
