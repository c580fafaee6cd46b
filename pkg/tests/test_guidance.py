import numpy as np
import pytest

from pgdm import nn
from pgdm.archetypal import ArchetypeSet, reconstruction_error
from pgdm.data import SequenceWindow
from pgdm.errors import InvalidInput, InvalidState, ShapeError
from pgdm.guidance import (PatternPredictor, PredictorConfig, check_theorem1, error_L_fA,
                           error_L_fG, guide, guide_batch, kl_to_targets, lift,
                           make_predictor, require_trained, train_pattern_predictor,
                           window_errors)
from pgdm.archetypal import project_points

TRI = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.2, 0.4, 0.9]])


def windows_from_coeffs(paths, A, T, H):
    out = []
    for k, c in enumerate(paths):
        x = c @ A.T
        for s in range(len(x) - T - H + 1):
            out.append(SequenceWindow(x[s:s + T], x[s + T:s + T + H], f"s{k}", s))
    return out


def window_kl(fA, A, windows):
    hist = np.stack([w.history for w in windows])
    hor = np.stack([w.horizon for w in windows])
    n, T, d = hist.shape
    hc = project_points(hist.reshape(-1, d), A).reshape(n, T, -1)
    tc = project_points(hor.reshape(-1, d), A).reshape(n, hor.shape[1], -1)
    return kl_to_targets(fA, hc, tc), tc


class CopyPredictor(PatternPredictor):
    """Repeats the last history coefficients over the horizon, exactly."""

    def predict_coeffs(self, hist_coeffs):
        c = np.asarray(hist_coeffs, dtype=float)
        last = c[..., -1:, :]
        return np.repeat(last, self.H, axis=-2)


def identity_predictor(p, H=1):
    base = make_predictor(1, H, p, hidden=())
    return CopyPredictor(base.net, 1, H, p, trained=True)


@pytest.fixture(scope="module")
def tri():
    return ArchetypeSet.from_archetypes(TRI)


def test_zero_predictor_gives_barycenter(tri):
    fA = make_predictor(2, 3, 3, zero=True)
    out = guide(fA, tri, np.zeros((2, 3)))
    np.testing.assert_allclose(out.predicted_pattern, np.repeat(TRI.mean(axis=1)[:, None], 3, 1))
    np.testing.assert_allclose(out.predicted_coeffs, 1 / 3)


def test_lift_vertex(tri):
    out = lift(tri, np.eye(3)[[1, 2]])
    np.testing.assert_allclose(out.predicted_pattern, TRI[:, [1, 2]])
    with pytest.raises(ShapeError):
        lift(tri, np.ones((2, 4)))


def test_guide_shape_checks(tri):
    fA = make_predictor(2, 3, 3)
    with pytest.raises(ShapeError):
        guide(fA, tri, np.zeros((3, 3)))
    pats = guide_batch(fA, tri, np.zeros((4, 2, 3)))
    assert pats.shape == (4, 3, 3)
    np.testing.assert_allclose(pats[0].T, guide(fA, tri, np.zeros((2, 3))).predicted_pattern)


def test_constant_sequences_learned(tri):
    rng = np.random.default_rng(0)
    paths = [np.repeat(rng.dirichlet(np.ones(3))[None], 6, axis=0) for _ in range(100)]
    wins = windows_from_coeffs(paths, TRI, 2, 2)
    train, val = wins[:240], wins[240:]
    cfg = PredictorConfig(hidden=(64, 64), lr=2e-3, max_epochs=800, patience=800)
    fA = train_pattern_predictor(train, tri, cfg, val_windows=val)
    kl, _ = window_kl(fA, tri, val)
    assert kl < 1e-3
    # identity-behaving predictor maps a vertex history to that vertex
    out = guide(fA, tri, np.repeat(TRI[:, [0]].T, 2, axis=0))
    np.testing.assert_allclose(out.predicted_pattern, np.repeat(TRI[:, [0]], 2, 1), atol=0.05)


def test_swap_oscillation_learned():
    A2 = ArchetypeSet.from_archetypes(np.array([[0.0, 1.0], [0.0, 0.5]]))
    rng = np.random.default_rng(1)
    paths = []
    for _ in range(40):
        a = rng.uniform()
        c0, c1 = np.array([a, 1 - a]), np.array([1 - a, a])
        paths.append(np.array([c0 if t % 2 == 0 else c1 for t in range(8)]))
    wins = windows_from_coeffs(paths, A2.archetypes, 2, 2)
    cfg = PredictorConfig(hidden=(32, 32), lr=3e-3, max_epochs=200, patience=30)
    fA = train_pattern_predictor(wins[:160], A2, cfg, val_windows=wins[160:])
    _, tc = window_kl(fA, A2, wins[160:])
    hist = np.stack([w.history for w in wins[160:]])
    hc = project_points(hist.reshape(-1, 2), A2).reshape(hist.shape[0], 2, 2)
    assert np.mean(np.abs(fA.predict_coeffs(hc) - tc)) < 0.05


def test_noise_not_better_than_constant(tri):
    rng = np.random.default_rng(2)
    paths = [rng.dirichlet(np.ones(3), size=8) for _ in range(60)]
    wins = windows_from_coeffs(paths, TRI, 2, 1)
    train, val = wins[:250], wins[250:]
    fA = train_pattern_predictor(train, tri, PredictorConfig(hidden=(16,), max_epochs=50),
                                 val_windows=val)
    kl_model, tc_val = window_kl(fA, tri, val)
    _, tc_train = window_kl(fA, tri, train)
    mean = tc_train.mean(axis=0)  # the best constant predictor for KL
    t = tc_val.reshape(len(val), -1)
    kl_const = float(np.mean(np.sum(t * (np.log(np.maximum(t, 1e-12)) - np.log(mean.ravel())),
                                    axis=1)))
    assert kl_model >= 0.95 * kl_const


def test_training_errors(tri):
    with pytest.raises(InvalidInput):
        train_pattern_predictor([], tri)
    with pytest.raises(InvalidState):
        require_trained(make_predictor(1, 1, 3))


def test_theorem1_examples(tri):
    rng = np.random.default_rng(3)
    fA = make_predictor(2, 3, 3, hidden=(8,), seed=4)
    for _ in range(50):
        w = SequenceWindow(rng.normal(size=(2, 3)), rng.normal(scale=2.0, size=(3, 3)))
        assert check_theorem1(fA, tri, w).holds
    # horizon in the hull and a perfect predictor: both sides vanish
    c = np.array([0.2, 0.3, 0.5])
    fA = identity_predictor(3, H=2)
    x = TRI @ c
    hist = x[None]
    w = SequenceWindow(hist, np.repeat(x[None], 2, axis=0))
    res = check_theorem1(fA, tri, w)
    assert res.holds and abs(res.lhs) < 1e-6 and abs(res.rhs) < 1e-6


def test_errors_reduce_to_reconstruction(tri):
    fA = identity_predictor(3, H=1)
    rng = np.random.default_rng(5)
    for _ in range(10):
        x_hist, x_next = rng.normal(size=3), rng.normal(size=3)
        w = SequenceWindow(x_hist[None], x_next[None])
        # a perfect coefficient copy makes L_fA the coefficient-to-coefficient gap
        ch = project_points(x_hist[None], tri)[0]
        cn = project_points(x_next[None], tri)[0]
        assert error_L_fA(fA, tri, w) == pytest.approx(np.linalg.norm(TRI @ (cn - ch)), abs=1e-6)
        same = SequenceWindow(x_next[None], x_next[None])
        assert error_L_fA(fA, tri, same) < 1e-6
        assert error_L_fG(fA, tri, same) == pytest.approx(reconstruction_error(x_next, tri),
                                                         abs=1e-6)


def test_window_errors_vectorized(tri):
    rng = np.random.default_rng(6)
    fA = make_predictor(2, 2, 3, hidden=(4,), seed=1)
    wins = [SequenceWindow(rng.normal(size=(2, 3)), rng.normal(size=(2, 3))) for _ in range(5)]
    e = window_errors(fA, tri, wins)
    for i, w in enumerate(wins):
        assert e.L_fG[i] == pytest.approx(error_L_fG(fA, tri, w))
        assert e.L_fA[i] == pytest.approx(error_L_fA(fA, tri, w))
    assert np.all(e.L_fG >= e.L_cA_horizon - e.L_fA - 1e-9)


def test_predictor_roundtrip():
    fA = make_predictor(2, 3, 4, seed=3)
    back = PatternPredictor.from_dict(fA.to_dict())
    c = np.random.default_rng(0).dirichlet(np.ones(4), size=(5, 2))
    np.testing.assert_array_equal(back.predict_coeffs(c), fA.predict_coeffs(c))
    out = fA.predict_coeffs(c)
    np.testing.assert_allclose(out.sum(axis=2), 1.0)
    assert isinstance(fA.net, nn.Mlp)
