"""MAE and CRPS_SUM for forecast ensembles."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ForecastEnsemble:
    samples: np.ndarray  # (K, d, H)
    truth: np.ndarray  # (d, H)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        t = np.asarray(self.truth, dtype=float)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[0] < 1 or s.shape[1:] != t.shape:
            raise ShapeError(f"samples {s.shape} do not match truth {t.shape}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "truth", t)


def mae(ensemble):
    """Mean over samples of the mean absolute error over all entries."""
    return float(np.mean(np.abs(ensemble.samples - ensemble.truth[None])))


def crps_ensemble(members, obs):
    """Empirical CRPS, (1/K) sum|X_k - y| - 1/(2K^2) sum sum |X_k - X_j|.

    ``members`` is (K, ...) and ``obs`` broadcasts against ``members[0]``.
    """
    x = np.asarray(members, dtype=float)
    y = np.asarray(obs, dtype=float)
    K = x.shape[0]
    skill = np.mean(np.abs(x - y[None]), axis=0)
    # sum_{j,k} |x_j - x_k| = 2 sum_i i (K - i) (x_(i+1) - x_(i)) over sorted
    # members; every term is nonnegative, so identical members give exactly 0
    gaps = np.diff(np.sort(x, axis=0), axis=0)
    i = np.arange(1, K)
    weights = (i * (K - i)).reshape((K - 1,) + (1,) * (x.ndim - 1))
    spread = 2.0 * np.sum(weights * gaps, axis=0)
    return skill - spread / (2.0 * K * K)


def crps_sum(ensemble):
    """CRPS of the per-step sum over dimensions, averaged over horizon steps."""
    summed = ensemble.samples.sum(axis=1)  # (K, H)
    truth = ensemble.truth.sum(axis=0)  # (H,)
    return float(np.mean(crps_ensemble(summed, truth)))


def crps_sum_normalized(ensemble):
    """:func:`crps_sum` divided by the mean absolute summed truth."""
    scale = float(np.mean(np.abs(ensemble.truth.sum(axis=0))))
    return crps_sum(ensemble) / scale if scale > 0 else float("nan")


def gaussian_crps(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at observation y."""
    from scipy.stats import norm

    z = (np.asarray(y, dtype=float) - mu) / sigma
    return sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))


def evaluate(forecasts, truths):
    """Aggregate report over windows.

    ``forecasts`` is (N, K, d, H) and ``truths`` (N, d, H). ``mae_std`` is the
    spread across the K sample slots of the window-averaged MAE.
    """
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(truths, dtype=float)
    if f.ndim != 4 or f.shape[0] != y.shape[0] or f.shape[2:] != y.shape[1:]:
        raise ShapeError(f"forecasts {f.shape} do not match truths {y.shape}")
    n, K = f.shape[:2]
    abs_err = np.abs(f - y[:, None])
    per_sample = abs_err.mean(axis=(0, 2, 3))  # (K,)
    summed = f.sum(axis=2)  # (N, K, H)
    summed_truth = y.sum(axis=1)  # (N, H)
    crps = crps_ensemble(np.moveaxis(summed, 1, 0), summed_truth)  # (N, H)
    crps_raw = float(np.mean(crps))
    scale = float(np.mean(np.abs(summed_truth)))
    return {
        "mae_mean": float(abs_err.mean()),
        "mae_std": float(per_sample.std()),
        "crps_raw": crps_raw,
        "crps_normalized": crps_raw / scale if scale > 0 else float("nan"),
        "n_windows": int(n),
        "K": int(K),
    }
