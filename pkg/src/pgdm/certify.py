"""
Randomized certification of the two geometric guarantees:

* guidance error >= horizon projection error - prediction error, for any
  window and any predictor;
* |AAUQ - dist(x, Conv D)| <= ||A c_A(x) - d||, with equality of AAUQ and
  hull distance when every data point is an archetype.
"""

import numpy as np

from .archetypal import ArchetypeSet, fit_archetypes, hull_distance_batch, reconstruction_errors
from .data import SequenceWindow, random_archetypes
from .guidance import THEOREM1_TOL, make_predictor, window_errors

SANDWICH_TOL = 1e-6


def _random_windows(rng, archetypes, T, H, count):
    d, p = archetypes.shape
    out = []
    for _ in range(count):
        c = rng.dirichlet(np.ones(p), size=T + H)
        frames = c @ archetypes.T
        # a mix of in-hull, near-hull and far-off frames
        spread = rng.choice([0.0, 0.05, 1.0])
        frames = frames + rng.normal(0.0, spread, size=frames.shape)
        out.append(SequenceWindow(frames[:T], frames[T:]))
    return out


def certify_guidance_bound(n_pairs=10_000, windows_per_predictor=100, seed=0,
                           tol=THEOREM1_TOL):
    """Check the guidance-error bound on random (window, predictor) pairs."""
    rng = np.random.default_rng(seed)
    n_checks = violations = 0
    worst = np.inf
    while n_checks < n_pairs:
        d = int(rng.integers(2, 7))
        p = int(rng.integers(2, min(d + 1, 5) + 1))
        T = int(rng.integers(1, 5))
        H = int(rng.integers(1, 6))
        arche = random_archetypes(d, p, rng)
        A = ArchetypeSet.from_archetypes(arche)
        fA = make_predictor(T, H, p, hidden=(int(rng.integers(4, 33)),),
                            seed=int(rng.integers(2**31)))
        scale = rng.choice([0.1, 1.0, 10.0])
        fA.net = fA.net.with_params([w * scale for w in fA.net.params()])
        count = min(windows_per_predictor, n_pairs - n_checks)
        e = window_errors(fA, A, _random_windows(rng, arche, T, H, count))
        margin = e.L_fG - (e.L_cA_horizon - e.L_fA)
        violations += int(np.sum(margin < -tol))
        worst = min(worst, float(margin.min()))
        n_checks += count
    return {"n_checks": n_checks, "violations": violations, "min_margin": worst}


def certify_hull_sandwich(n_points=1000, n_data=60, d=3, p=6, seed=0,
                          tol=SANDWICH_TOL):
    """Check the AAUQ/hull-distance sandwich for archetypes fitted with p < n."""
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n_data, d))
    A = fit_archetypes(data, p, seed=seed)
    X = rng.normal(scale=2.0, size=(n_points, d))
    u = reconstruction_errors(X, A)
    dist, _, delta = hull_distance_batch(X, data, A)
    excess = np.abs(u - dist) - delta
    return {"n_points": n_points, "p": p, "n": n_data,
            "violations": int(np.sum(excess > tol)),
            "max_excess": float(excess.max()), "max_delta": float(delta.max())}


def certify_full_archetypes(n_data=20, n_points=200, d=3, seed=0):
    """With p = n, AAUQ must equal the distance to the data hull."""
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n_data, d))
    A = fit_archetypes(data, n_data, seed=seed)
    X = rng.normal(scale=2.0, size=(n_points, d))
    u = reconstruction_errors(X, A)
    dist, _, delta = hull_distance_batch(X, data, A)
    return {"n": n_data, "n_points": n_points, "fit_rss": A.fit_rss,
            "max_abs_diff": float(np.max(np.abs(u - dist))),
            "max_delta": float(delta.max())}
