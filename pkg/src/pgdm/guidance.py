"""
Pattern predictor over archetype coefficients and the guidance function
that lifts its predictions back to data space, plus the error functionals
relating projection, prediction and guidance errors.

Predicted patterns are returned as (d x H) matrices: column h is the lifted
pattern for horizon step h.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .archetypal import SOLVER_TOL, project_points
from .data import stack_windows
from .errors import InvalidInput, InvalidState, ShapeError

log = logging.getLogger(__name__)


@dataclass
class PatternPredictor:
    """Maps T coefficient vectors to H coefficient vectors (softmax per step)."""

    net: nn.Mlp
    T: int
    H: int
    p: int
    trained: bool = False
    archetype_fingerprint: str = ""
    history: list = field(default_factory=list, repr=False)

    def predict_coeffs(self, hist_coeffs):
        """(N, T, p) or (T, p) history coefficients -> (N, H, p) / (H, p)."""
        c = np.asarray(hist_coeffs, dtype=float)
        single = c.ndim == 2
        if single:
            c = c[None]
        if c.shape[1:] != (self.T, self.p):
            raise ShapeError(f"expected ({self.T}, {self.p}) coefficients, got {c.shape[1:]}")
        out = nn.forward(self.net, c.reshape(c.shape[0], -1)).reshape(-1, self.H, self.p)
        return out[0] if single else out

    def to_dict(self):
        return {"T": self.T, "H": self.H, "p": self.p, "trained": self.trained,
                "archetype_fingerprint": self.archetype_fingerprint,
                "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(nn.Mlp.from_dict(obj["net"]), int(obj["T"]), int(obj["H"]),
                   int(obj["p"]), bool(obj["trained"]), obj.get("archetype_fingerprint", ""))


def make_predictor(T, H, p, hidden=(64, 64), activation="tanh", seed=0, zero=False):
    net = nn.init_mlp([p * T, *hidden, p * H], activation, head="softmax",
                      head_groups=H, seed=seed, zero=zero)
    return PatternPredictor(net, T, H, p)


@dataclass
class PredictorConfig:
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    lr: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0


@dataclass(frozen=True)
class GuidanceOutput:
    predicted_coeffs: np.ndarray  # (H, p)
    predicted_pattern: np.ndarray  # (d, H)


def _window_coeffs(windows, A, tol=SOLVER_TOL):
    hist, hor = stack_windows(windows)
    n, T, d = hist.shape
    H = hor.shape[1]
    frames = np.concatenate([hist.reshape(-1, d), hor.reshape(-1, d)])
    coeffs = project_points(frames, A, tol)
    p = coeffs.shape[1]
    return (coeffs[: n * T].reshape(n, T, p), coeffs[n * T:].reshape(n, H, p), hist, hor)


def _lifted_mae(fA, A, hist_c, horizons):
    pred = fA.predict_coeffs(hist_c) @ A.archetypes.T  # (N, H, d)
    return float(np.mean(np.abs(pred - horizons)))


def kl_to_targets(fA, hist_c, target_c):
    n = hist_c.shape[0]
    return nn.loss_value(fA.net, "kl", hist_c.reshape(n, -1), target_c.reshape(n, -1))


def train_pattern_predictor(windows, A, cfg=None, val_windows=None):
    """Fit the predictor with KL loss and Adam; early-stop on validation MAE.

    Validation MAE is measured in data space between the lifted prediction
    and the true horizon. Without ``val_windows`` the training windows are
    used for early stopping.
    """
    cfg = cfg or PredictorConfig()
    if not windows:
        raise InvalidInput("no training windows")
    T, H = windows[0].T, windows[0].H
    if any(w.T != T or w.H != H or w.d != A.d for w in windows):
        raise ShapeError("all windows must share T, H and d with the archetypes")
    hist_c, hor_c, _, _ = _window_coeffs(windows, A)
    if val_windows:
        val_hist_c, _, _, val_hor = _window_coeffs(val_windows, A)
    else:
        val_hist_c, val_hor = hist_c, stack_windows(windows)[1]

    fA = make_predictor(T, H, A.p, cfg.hidden, cfg.activation, seed=cfg.seed)
    fA.archetype_fingerprint = A.fingerprint()
    rng = np.random.default_rng(cfg.seed + 1)
    state = nn.AdamState(lr=cfg.lr)
    params = fA.net.params()
    x_all = hist_c.reshape(len(windows), -1)
    y_all = hor_c.reshape(len(windows), -1)

    best = (_lifted_mae(fA, A, val_hist_c, val_hor), [p.copy() for p in params])
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(windows))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = nn.backward(fA.net, "kl", x_all[idx], y_all[idx])
            params = nn.adam_step(state, params, grads)
            fA.net = fA.net.with_params(params)
            losses.append(value)
        val_mae = _lifted_mae(fA, A, val_hist_c, val_hor)
        fA.history.append({"epoch": epoch, "train_kl": float(np.mean(losses)),
                           "val_mae": val_mae})
        if val_mae < best[0]:
            best = (val_mae, [p.copy() for p in params])
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.debug("early stop at epoch %d (best val MAE %.5f)", epoch, best[0])
                break
    fA.net = fA.net.with_params(best[1])
    fA.trained = True
    return fA


def guide(fA, A, history):
    """Project a (T x d) history, predict future coefficients, lift to (d x H)."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape != (fA.T, A.d):
        raise ShapeError(f"history must be ({fA.T}, {A.d}), got {history.shape}")
    coeffs = fA.predict_coeffs(project_points(history, A))
    return lift(A, coeffs)


def lift(A, coeffs):
    """GuidanceOutput for given (H x p) coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2 or coeffs.shape[1] != A.p:
        raise ShapeError(f"coefficients must be (H, {A.p})")
    return GuidanceOutput(coeffs, A.archetypes @ coeffs.T)


def guide_batch(fA, A, histories):
    """Predicted patterns for a stack of histories: returns (N, H, d)."""
    h = np.asarray(histories, dtype=float)
    n, T, d = h.shape
    if T != fA.T or d != A.d:
        raise ShapeError("histories do not match predictor / archetypes")
    c = project_points(h.reshape(-1, d), A).reshape(n, T, A.p)
    return fA.predict_coeffs(c) @ A.archetypes.T


# ---------------------------------------------------------------------------
# error functionals (Frobenius over the H lifted columns)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowErrors:
    L_fG: np.ndarray
    L_fA: np.ndarray
    L_cA_horizon: np.ndarray
    u_history: np.ndarray


def window_errors(fA, A, windows):
    """Guidance, prediction and horizon-projection errors for each window."""
    hist_c, hor_c, hist, hor = _window_coeffs(windows, A)
    arche = A.archetypes
    pred = fA.predict_coeffs(hist_c) @ arche.T
    lifted_true = hor_c @ arche.T
    n = len(windows)
    L_fG = np.linalg.norm((hor - pred).reshape(n, -1), axis=1)
    L_fA = np.linalg.norm((lifted_true - pred).reshape(n, -1), axis=1)
    L_cA = np.linalg.norm((hor - lifted_true).reshape(n, -1), axis=1)
    u = np.linalg.norm(hist - hist_c @ arche.T, axis=2).mean(axis=1)
    return WindowErrors(L_fG, L_fA, L_cA, u)


def error_L_fA(fA, A, window):
    return float(window_errors(fA, A, [window]).L_fA[0])


def error_L_fG(fA, A, window):
    return float(window_errors(fA, A, [window]).L_fG[0])


@dataclass(frozen=True)
class Theorem1Check:
    lhs: float
    rhs: float
    holds: bool


THEOREM1_TOL = 1e-9


def check_theorem1(fA, A, window, tol=THEOREM1_TOL):
    """Guidance error versus horizon projection error minus prediction error."""
    e = window_errors(fA, A, [window])
    lhs = float(e.L_fG[0])
    rhs = float(e.L_cA_horizon[0] - e.L_fA[0])
    return Theorem1Check(lhs, rhs, lhs >= rhs - tol)


def require_trained(fA):
    if not getattr(fA, "trained", False):
        raise InvalidState("pattern predictor has not been trained")
