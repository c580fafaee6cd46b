"""
Archetypal analysis: simplex-constrained least squares, archetype fitting,
projection onto the archetype simplex, reconstruction error, AAUQ and a
convex-hull distance oracle.

Conventions: a data matrix has one frame per row (n x d). Archetypes are
stored column-wise (d x p), so ``archetypes @ c`` reconstructs a frame from
simplex coefficients ``c``.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import DegenerateDataWarning, InvalidArity, InvalidInput, ShapeError

SIMPLEX_EPS = 1e-9
SOLVER_TOL = 1e-8
FIT_TOL = 1e-6
FIT_MAX_ITER = 500


# ---------------------------------------------------------------------------
# simplex projection and simplex-constrained least squares
# ---------------------------------------------------------------------------

def project_to_simplex(v):
    """Euclidean projection onto the probability simplex.

    ``v`` may be a vector of length m or an (m, N) array, in which case each
    column is projected independently.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[0] == 0:
        raise InvalidInput("cannot project an empty vector onto the simplex")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("simplex projection requires finite input")
    return _project_columns(v)


def _project_columns(v):
    vector = v.ndim == 1
    if vector:
        v = v[:, None]
    m = v.shape[0]
    # stable sort: equal entries keep index order
    u = -np.sort(-v, axis=0, kind="stable")
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, m + 1, dtype=float)[:, None]
    cond = u - css / ind > 0
    rho = m - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(v.shape[1])] / (rho + 1.0)
    out = np.maximum(v - theta, 0.0)
    return out[:, 0] if vector else out


@dataclass(frozen=True)
class SimplexSolution:
    """Result of a simplex-constrained least-squares solve."""

    coeffs: np.ndarray
    objective: float
    kkt_residual: float
    n_iter: int
    converged: bool


class _Problem:
    """min_c 0.5 ||t - B c||^2 over the simplex, for a batch of targets."""

    def __init__(self, basis, targets):
        self.basis = basis
        self.targets = targets
        d, m = basis.shape
        # Gram form is cheaper when m is small relative to d
        self.gram = basis.T @ basis if m <= 2 * d else None
        self.bt_t = basis.T @ targets if self.gram is not None else None
        self.lipschitz = float(np.linalg.norm(basis, 2) ** 2) if basis.size else 0.0

    def grad(self, c, cols=None):
        if self.gram is not None:
            btt = self.bt_t if cols is None else self.bt_t[:, cols]
            return self.gram @ c - btt
        t = self.targets if cols is None else self.targets[:, cols]
        return self.basis.T @ (self.basis @ c - t)

    def objective(self, c, cols=None):
        t = self.targets if cols is None else self.targets[:, cols]
        r = t - self.basis @ c
        return 0.5 * np.sum(r * r, axis=0)

    def kkt(self, c, cols=None):
        g = self.grad(c, cols)
        return np.linalg.norm(c - _project_columns(c - g), axis=0)


def _polish(problem, c, col):
    """Exact solve of the equality-constrained problem on the current support."""
    support = np.flatnonzero(c > 0)
    k = support.size
    if k == 0 or k > problem.basis.shape[0] + 1:
        return None
    bs = problem.basis[:, support]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = bs.T @ bs
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.empty(k + 1)
    rhs[:k] = bs.T @ problem.targets[:, col]
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    cs = sol[:k]
    if not np.all(np.isfinite(cs)) or cs.min() < 0:
        return None
    out = np.zeros_like(c)
    out[support] = cs
    return out / out.sum()


def _solve_batch(basis, targets, tol, max_iter, init=None, polish=True):
    """Accelerated projected gradient (FISTA with adaptive restart).

    Returns (coeffs (m, N), objective (N,), kkt (N,), iterations (N,)).
    """
    d, m = basis.shape
    n_targets = targets.shape[1]
    problem = _Problem(basis, targets)
    if init is None:
        x = np.full((m, n_targets), 1.0 / m)
    else:
        x = _project_columns(np.array(init, dtype=float, copy=True))
    iters = np.zeros(n_targets, dtype=int)

    if problem.lipschitz == 0.0:
        obj = problem.objective(x)
        return x, obj, np.zeros(n_targets), iters

    step = 1.0 / problem.lipschitz
    kkt = problem.kkt(x)
    active = np.flatnonzero(kkt > tol)
    y = x[:, active].copy()
    xa = x[:, active].copy()
    t = np.ones(active.size)
    k = 0
    check_every, polish_every = 10, 50
    max_support = d + 1
    while active.size and k < max_iter:
        k += 1
        g = problem.grad(y, active)
        x_new = _project_columns(y - step * g)
        restart = np.sum((y - x_new) * (x_new - xa), axis=0) > 0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - xa)
        y[:, restart] = x_new[:, restart]
        t_new[restart] = 1.0
        xa, t = x_new, t_new
        if k % check_every and k != max_iter:
            continue
        res = problem.kkt(xa, active)
        done = res <= tol
        if polish and k % polish_every == 0:
            # once the optimal face is identified an exact solve finishes the job
            small = np.flatnonzero(~done & (np.count_nonzero(xa > 0, axis=0) <= max_support))
            for j in small:
                cand = _polish(problem, xa[:, j], active[j])
                if cand is None:
                    continue
                cand_res = problem.kkt(cand[:, None], [active[j]])[0]
                if cand_res <= tol:
                    xa[:, j], res[j], done[j] = cand, cand_res, True
        if np.any(done):
            x[:, active[done]] = xa[:, done]
            iters[active[done]] = k
            kkt[active[done]] = res[done]
            keep = ~done
            active, xa, y, t = active[keep], xa[:, keep], y[:, keep], t[keep]
    if active.size:
        x[:, active] = xa
        iters[active] = k
        kkt[active] = problem.kkt(xa, active)

    obj = problem.objective(x)
    if polish:
        for col in np.flatnonzero(kkt > 0):
            cand = _polish(problem, x[:, col], col)
            if cand is None:
                continue
            cand_obj = problem.objective(cand[:, None], [col])[0]
            if cand_obj <= obj[col] * (1 + 1e-12):
                cand_kkt = problem.kkt(cand[:, None], [col])[0]
                if cand_kkt <= max(kkt[col], tol):
                    x[:, col] = cand
                    obj[col] = cand_obj
                    kkt[col] = cand_kkt
    return x, obj, kkt, iters


def _check_basis(targets, basis):
    basis = np.asarray(basis, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if basis.ndim != 2:
        raise ShapeError(f"basis must be 2-D, got shape {basis.shape}")
    if targets.shape[0] != basis.shape[0]:
        raise ShapeError(
            f"targets have {targets.shape[0]} rows but basis has {basis.shape[0]}")
    if basis.shape[1] < 1:
        raise ShapeError("basis needs at least one column")
    if not (np.all(np.isfinite(basis)) and np.all(np.isfinite(targets))):
        raise InvalidInput("basis and targets must be finite")
    return targets, basis


def solve_simplex_lsq(targets, basis, tol=SOLVER_TOL, max_iter=5000, init=None):
    """Minimize ``||targets - basis @ c||`` over the probability simplex.

    Returns a :class:`SimplexSolution`; ``converged`` reports whether the
    projected-gradient norm reached ``tol`` within ``max_iter`` iterations.
    """
    targets, basis = _check_basis(targets, basis)
    if targets.ndim != 1:
        raise ShapeError("targets must be a vector; use solve_simplex_lsq_batch")
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    init_col = None if init is None else np.asarray(init, dtype=float)[:, None]
    c, obj, kkt, iters = _solve_batch(basis, targets[:, None], tol, max_iter, init_col)
    return SimplexSolution(c[:, 0], float(obj[0]), float(kkt[0]), int(iters[0]),
                           bool(kkt[0] <= tol))


def solve_simplex_lsq_batch(targets, basis, tol=SOLVER_TOL, max_iter=5000, init=None):
    """Column-wise :func:`solve_simplex_lsq` for targets of shape (d, N).

    Returns coefficients (m, N) and the per-column KKT residuals.
    """
    targets, basis = _check_basis(targets, basis)
    if targets.ndim != 2:
        raise ShapeError("batched targets must be (d, N)")
    c, _, kkt, _ = _solve_batch(basis, targets, tol, max_iter, init)
    return c, kkt


# ---------------------------------------------------------------------------
# archetype sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchetypeSet:
    """Fitted archetypes (d x p) and the data-mixing weights that produced them.

    ``mixing_weights`` has shape (p, n); row j is the simplex vector beta_j
    with ``archetypes[:, j] == data.T @ mixing_weights[j]``.
    """

    archetypes: np.ndarray
    mixing_weights: np.ndarray
    fit_rss: float
    iterations_used: int
    rss_history: tuple = ()
    degenerate: bool = False

    @property
    def d(self):
        return self.archetypes.shape[0]

    @property
    def p(self):
        return self.archetypes.shape[1]

    @classmethod
    def from_archetypes(cls, archetypes):
        """Wrap a fixed archetype matrix (d x p) that was not fitted to data."""
        a = np.asarray(archetypes, dtype=float)
        if a.ndim != 2:
            raise ShapeError("archetypes must be a d x p matrix")
        return cls(a, np.eye(a.shape[1]), 0.0, 0)

    def fingerprint(self):
        """Stable hash of the archetype matrix, used to pair checkpoints."""
        payload = json.dumps(np.round(self.archetypes, 12).tolist()).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self):
        return {
            "d": self.d,
            "p": self.p,
            "archetypes": self.archetypes.ravel().tolist(),
            "mixing_weights": self.mixing_weights.tolist(),
            "fit_rss": self.fit_rss,
            "iterations_used": self.iterations_used,
            "rss_history": list(self.rss_history),
            "degenerate": self.degenerate,
            "fingerprint": self.fingerprint(),
        }

    @classmethod
    def from_dict(cls, obj):
        d, p = int(obj["d"]), int(obj["p"])
        archetypes = np.asarray(obj["archetypes"], dtype=float).reshape(d, p)
        weights = np.asarray(obj["mixing_weights"], dtype=float)
        return cls(archetypes, weights, float(obj["fit_rss"]),
                   int(obj.get("iterations_used", 0)),
                   tuple(obj.get("rss_history", ())),
                   bool(obj.get("degenerate", False)))


def _as_data_matrix(data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ShapeError(f"data must be a non-empty n x d matrix, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise InvalidInput("data contains non-finite values")
    return data


def furthest_sum(data, p, start, n_extra_steps=10):
    """Greedy extreme-point selection of ``p`` row indices (FurthestSum)."""
    sq = np.sum(data * data, axis=1)

    def dist_to(i):
        return np.sqrt(np.maximum(sq + sq[i] - 2.0 * data @ data[i], 0.0))

    selected = [start]
    score = dist_to(start)
    for step in range(p - 1 + n_extra_steps):
        if step >= p - 1:
            # swap out the oldest pick and reselect it greedily
            dropped = selected.pop(0)
            score = score - dist_to(dropped)
        masked = score.copy()
        masked[selected] = -np.inf
        if not np.any(np.isfinite(masked)):
            break
        nxt = int(np.argmax(masked))
        selected.append(nxt)
        score = score + dist_to(nxt)
    return selected[-p:] if len(selected) > p else selected


def _rss(data, coeffs, archetypes):
    resid = data - coeffs @ archetypes.T
    return float(np.sum(resid * resid))


def fit_archetypes(data, p, tol=FIT_TOL, max_iter=FIT_MAX_ITER, seed=0,
                   solver_tol=SOLVER_TOL, inner_max_iter=2000):
    """Fit ``p`` archetypes to the rows of ``data`` by alternating minimization.

    Each outer iteration re-solves the mixing weights of every archetype
    (block-coordinate, against residual-adjusted targets) and then the
    simplex coefficients of every data row. Updates are only accepted when
    they do not increase their block objective, so the recorded RSS is
    non-increasing.
    """
    data = _as_data_matrix(data)
    n, d = data.shape
    if p < 1 or p > n:
        raise InvalidArity(f"need 1 <= p <= n, got p={p}, n={n}")
    rng = np.random.default_rng(seed)

    if np.all(data == data[0]):
        warnings.warn("all data rows are identical; archetypes collapse to one point",
                      DegenerateDataWarning, stacklevel=2)
        beta = np.zeros((p, n))
        beta[:, 0] = 1.0
        return ArchetypeSet(np.repeat(data[0][:, None], p, axis=1), beta, 0.0, 0,
                            (0.0,), degenerate=True)

    start = int(rng.integers(n))
    picks = furthest_sum(data, p, start)
    beta = np.zeros((p, n))
    beta[np.arange(p), picks] = 1.0
    arche = data.T @ beta.T  # d x p

    coeffs, _ = solve_simplex_lsq_batch(data.T, arche, solver_tol, inner_max_iter)
    coeffs = coeffs.T  # n x p
    rss = _rss(data, coeffs, arche)
    history = [rss]
    it = 0
    data_t = data.T
    while it < max_iter and rss > 0.0:
        it += 1
        # mixing-weight block for each archetype
        for j in range(p):
            cj = coeffs[:, j]
            norm2 = float(cj @ cj)
            if norm2 <= 1e-300:
                continue
            resid = data - coeffs @ arche.T + np.outer(cj, arche[:, j])
            z = resid.T @ cj / norm2
            sol = solve_simplex_lsq(z, data_t, solver_tol, inner_max_iter,
                                    init=_hull_start(z[None], data)[:, 0])
            old = z - arche[:, j]
            if sol.objective <= 0.5 * float(old @ old):
                beta[j] = sol.coeffs
                arche[:, j] = data_t @ sol.coeffs
        # coefficient block for each data row
        new_coeffs, _ = solve_simplex_lsq_batch(data_t, arche, solver_tol, inner_max_iter,
                                                init=coeffs.T)
        new_coeffs = new_coeffs.T
        old_err = np.sum((data - coeffs @ arche.T) ** 2, axis=1)
        new_err = np.sum((data - new_coeffs @ arche.T) ** 2, axis=1)
        better = new_err <= old_err
        coeffs[better] = new_coeffs[better]

        new_rss = _rss(data, coeffs, arche)
        rel = (rss - new_rss) / rss
        rss = new_rss
        history.append(rss)
        if rel < tol:
            break
    return ArchetypeSet(arche, beta, rss, it, tuple(history))


def select_archetype_count(data, p_values, threshold=0.05, seed=0, **fit_kw):
    """Elbow rule for the number of archetypes.

    Fits every candidate ``p`` and returns ``(p_selected, curve)`` where
    ``curve`` maps p to its final RSS. The selected p is the smallest one
    whose successor improves RSS by less than ``threshold``, measured
    relative to the RSS of the smallest candidate (so gains that only chip
    away at the noise floor do not count).
    """
    p_values = sorted(int(p) for p in p_values)
    curve = {p: fit_archetypes(data, p, seed=seed, **fit_kw).fit_rss for p in p_values}
    chosen = p_values[-1]
    base = curve[p_values[0]]
    for prev, nxt in zip(p_values, p_values[1:]):
        gain = (curve[prev] - curve[nxt]) / base if base > 0 else 0.0
        if gain < threshold:
            chosen = prev
            break
    return chosen, curve


# ---------------------------------------------------------------------------
# projection, reconstruction and uncertainty
# ---------------------------------------------------------------------------

def _basis(A):
    return A.archetypes if isinstance(A, ArchetypeSet) else np.asarray(A, dtype=float)


def project_point(x, A, tol=SOLVER_TOL):
    """Simplex coefficients of the closest point to ``x`` in Conv A."""
    basis = _basis(A)
    return solve_simplex_lsq(x, basis, tol).coeffs


def project_points(X, A, tol=SOLVER_TOL):
    """Project every row of ``X`` (N x d); returns an (N x p) coefficient array.

    Duplicate rows are solved once.
    """
    basis = _basis(A)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != basis.shape[0]:
        raise ShapeError(f"expected rows of length {basis.shape[0]}, got {X.shape}")
    if X.shape[0] == 0:
        return np.zeros((0, basis.shape[1]))
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    coeffs, _ = solve_simplex_lsq_batch(uniq.T, basis, tol)
    return coeffs.T[inverse.ravel()]


def reconstruct(A, c):
    basis = _basis(A)
    c = np.asarray(c, dtype=float)
    if c.shape[0] != basis.shape[1]:
        raise ShapeError(f"coefficient length {c.shape[0]} != p = {basis.shape[1]}")
    return basis @ c


def reconstruction_error(x, A, tol=SOLVER_TOL):
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - reconstruct(A, project_point(x, A, tol))))


def reconstruction_errors(X, A, tol=SOLVER_TOL):
    """Row-wise reconstruction error of ``X`` (N x d)."""
    X = np.asarray(X, dtype=float)
    c = project_points(X, A, tol)
    return np.linalg.norm(X - c @ _basis(A).T, axis=1)


def aauq(history, A, tol=SOLVER_TOL):
    """Mean reconstruction error of the frames of ``history`` (T x d)."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[None, :]
    if history.shape[0] == 0:
        raise InvalidInput("AAUQ needs at least one frame")
    return float(np.mean(reconstruction_errors(history, A, tol)))


def aauq_batch(histories, A, tol=SOLVER_TOL):
    """AAUQ for a stack of histories (N x T x d)."""
    h = np.asarray(histories, dtype=float)
    if h.ndim != 3 or h.shape[1] == 0:
        raise InvalidInput("histories must be a non-empty (N, T, d) array")
    errs = reconstruction_errors(h.reshape(-1, h.shape[2]), A, tol)
    return errs.reshape(h.shape[0], h.shape[1]).mean(axis=1)


@dataclass(frozen=True)
class HullDistanceResult:
    distance: float
    witness: np.ndarray
    delta_gap: float
    weights: np.ndarray = field(repr=False, default=None)


def _hull_start(points, data):
    """Warm start for hull projections from an active-set NNLS solve.

    The unit-sum constraint enters as a heavily weighted extra row, which
    identifies the optimal face; the simplex solver then finishes exactly.
    """
    n = data.shape[0]
    big = 1e3 * (1.0 + float(np.abs(data).max()))
    aug = np.vstack([data.T, np.full((1, n), big)])
    start = np.empty((n, points.shape[0]))
    for i, x in enumerate(points):
        start[:, i] = nnls(aug, np.append(x, big))[0]
    sums = start.sum(axis=0)
    start[:, sums <= 0] = 1.0 / n
    return start / np.where(sums > 0, sums, 1.0)


def hull_distance(x, data, A, tol=SOLVER_TOL, max_iter=20000):
    """Distance from ``x`` to the convex hull of the rows of ``data``.

    Also reports the gap between the archetype reconstruction of ``x`` and
    the nearest hull point.
    """
    data = _as_data_matrix(data)
    x = np.asarray(x, dtype=float)
    if x.shape != (data.shape[1],):
        raise ShapeError(f"x must have length {data.shape[1]}")
    sol = solve_simplex_lsq(x, data.T, tol, max_iter, init=_hull_start(x[None], data)[:, 0])
    witness = data.T @ sol.coeffs
    x_hat = reconstruct(A, project_point(x, A, tol))
    return HullDistanceResult(float(np.linalg.norm(x - witness)), witness,
                              float(np.linalg.norm(x_hat - witness)), sol.coeffs)


def hull_distance_batch(X, data, A, tol=SOLVER_TOL, max_iter=20000):
    """Vectorized :func:`hull_distance` over rows of ``X``.

    Returns (distances, witnesses (N x d), delta_gaps).
    """
    data = _as_data_matrix(data)
    X = np.asarray(X, dtype=float)
    lam, _ = solve_simplex_lsq_batch(X.T, data.T, tol, max_iter, init=_hull_start(X, data))
    witnesses = (data.T @ lam).T
    x_hat = project_points(X, A, tol) @ _basis(A).T
    return (np.linalg.norm(X - witnesses, axis=1), witnesses,
            np.linalg.norm(x_hat - witnesses, axis=1))
