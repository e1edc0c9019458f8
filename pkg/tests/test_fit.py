import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import ScalarAdam, central_difference
from uvapm import fit, render, synthetic
from uvapm.errors import ConfigError, EmptyMaskError, FitError, InvalidInputError, OptimizerError
from uvapm.uvcore import FaceMask


@pytest.fixture(scope="module")
def scene():
    return synthetic.closed_loop_scene(seed=11, size=64)


def make_problem(scene, config=None):
    return fit.FitProblem(scene["image"], scene["landmarks"], scene["mask"], scene["shape_model"],
                          scene["mesh"], scene["model"], scene["detail"], config)


def one_pixel_mask():
    return FaceMask.from_weights(np.ones((1, 1)))


def test_photometric_examples():
    img = np.random.default_rng(0).random((4, 4, 3))
    mask = FaceMask.from_weights(np.ones((4, 4)))
    assert fit.photometric_loss(img, img, mask)[0] == 0
    loss, _ = fit.photometric_loss(np.array([[[1.0, 0, 0]]]), np.zeros((1, 1, 3)), one_pixel_mask())
    assert loss == 1.0
    other = img[::-1]
    base = fit.photometric_loss(img, other, mask)[0]
    scaled = fit.photometric_loss(img, other, FaceMask(np.full((4, 4), 3.0), mask.skin))[0]
    assert np.isclose(scaled, 3 * base)
    with pytest.raises(EmptyMaskError):
        fit.photometric_loss(img, other, FaceMask(np.ones((4, 4)), np.zeros((4, 4))))


@pytest.mark.parametrize("squared", [False, True])
def test_photometric_gradient(squared):
    rng = np.random.default_rng(1)
    a, b = rng.random((2, 3, 3, 3))
    mask = FaceMask(rng.random((3, 3)), (rng.random((3, 3)) > 0.3).astype(float))
    _, g = fit.photometric_loss(a, b, mask, squared)
    fd = central_difference(lambda x: fit.photometric_loss(a, x.reshape(b.shape), mask, squared)[0], b.ravel())
    assert np.allclose(g.ravel(), fd, atol=1e-8)


def test_landmark_examples():
    k = np.random.default_rng(2).random((68, 2)) * 100
    w = np.ones(68)
    assert fit.landmark_loss(k, k, w)[0] == 0
    moved = k.copy()
    moved[10] += (3, 4)
    assert fit.landmark_loss(k, moved, w)[0] == 25.0
    assert fit.landmark_loss(k, moved, 2 * w)[0] == 50.0
    default = fit.LandmarkSet(k)
    assert np.all(default.weights[:17] == 0.5) and np.all(default.weights[17:] == 1)
    with pytest.raises(InvalidInputError):
        fit.LandmarkSet(k[:67])


def test_identity_loss_values():
    vecs = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([-1.0, 0.0])}

    def provider_for(x, y):
        return lambda img: vecs[x] if img is None else vecs[y]

    assert fit.identity_loss(provider_for("a", "a"), None, 1) == 0
    assert fit.identity_loss(provider_for("a", "b"), None, 1) == 1
    assert fit.identity_loss(provider_for("a", "c"), None, 1) == 2
    with pytest.raises(ConfigError):
        fit.identity_loss(None, None, None)


def test_reg_loss_examples():
    state = fit.FitState.zeros(2, 1, 3, 1)
    state.gamma = np.zeros((3, 9))
    w = {"beta": 0.5, "xi": 0.0, "gamma": 0.0, "alpha_c": 0.0, "alpha_d": 0.0}
    assert fit.reg_loss(state, w)[0] == 0
    state.beta = np.array([1.0, 1.0])
    assert fit.reg_loss(state, w)[0] == 1.0
    full = dict.fromkeys(w, 0.3)
    rng = np.random.default_rng(3)
    for g in ("beta", "xi", "alpha_c", "alpha_d"):
        setattr(state, g, rng.normal(size=getattr(state, g).shape))
    double = state.copy()
    for g in fit.GROUPS:
        setattr(double, g, 2 * getattr(state, g))
    assert np.isclose(fit.reg_loss(double, full)[0], 4 * fit.reg_loss(state, full)[0])


def test_adam_against_scalar_reference():
    state = fit.FitState.zeros(1, 1, 3, 1)
    assert fit.adam_step(state, {"beta": np.zeros(1)}, 0.1).beta[0] == 0.0
    ref = ScalarAdam(0.01)
    x = 0.0
    for g in (1.0, 1.0, -0.5, 2.0):
        x = ref.step(x, g)
        state = fit.adam_step(state, {"beta": np.array([g])}, 0.01)
        assert abs(state.beta[0] - x) <= 1e-12
    assert state.steps["beta"] == 4
    with pytest.raises(OptimizerError) as exc:
        fit.adam_step(state, {"xi": np.array([np.nan])}, 0.01)
    assert exc.value.group == "xi"


@given(st.floats(-10, 10), st.floats(1e-4, 1.0))
def test_adam_first_step_magnitude(g, lr):
    state = fit.adam_step(fit.FitState.zeros(1, 1, 3, 1), {"beta": np.array([g])}, lr)
    ref = ScalarAdam(lr).step(0.0, g)
    assert abs(state.beta[0] - ref) <= 1e-12


def test_config_validation(tmp_path):
    cfg = fit.FitConfig()
    assert cfg.iterations == (200, 200, 100) and cfg.refresh_every == 10
    assert fit.FitConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    for bad in ({"lambda_pho": -1}, {"iterations": (1, 2)}, {"reg_weights": {"nope": 1}},
                {"lr_schedule": "step"}):
        with pytest.raises(ConfigError):
            fit.FitConfig(**bad)
    with pytest.raises(ConfigError):
        fit.FitConfig.from_dict({"learning_rate": 1})
    (tmp_path / "c.json").write_text(json.dumps({"seed": 4, "iterations": [1, 2, 3]}))
    assert fit.FitConfig.load(tmp_path / "c.json").iterations == (1, 2, 3)


def test_total_loss_weight_switches(scene):
    off = fit.FitConfig(lambda_pho=0, lambda_lmk=0, lambda_reg=0)
    prob = make_problem(scene, off)
    state = scene["truth"].copy()
    state.pose = state.pose + 0.01
    prob.refresh(state)
    assert prob.evaluate(state)[0] == 0
    lmk_only = make_problem(scene, fit.FitConfig(lambda_pho=0, lambda_lmk=1, lambda_reg=0))
    total, _, parts = lmk_only.evaluate(state)
    k = lmk_only.projected_landmarks(state)
    assert total == fit.landmark_loss(scene["landmarks"], k, lmk_only.landmarks.weights)[0]


def test_landmark_loss_zero_at_truth(scene):
    prob = make_problem(scene)
    k = prob.projected_landmarks(scene["truth"])
    assert fit.landmark_loss(scene["landmarks"], k, np.ones(68))[0] <= 1e-10


def perturbed_state(scene, seed):
    rng = np.random.default_rng(seed)
    st_ = scene["truth"].copy()
    st_.pose = st_.pose + rng.normal(0, 0.01, 7)
    st_.beta = st_.beta + rng.normal(0, 0.05, st_.beta.size)
    st_.xi = st_.xi + rng.normal(0, 0.05, st_.xi.size)
    st_.gamma = st_.gamma + rng.normal(0, 0.05, (3, 9))
    st_.alpha_c = st_.alpha_c + rng.normal(0, 0.05, st_.alpha_c.size)
    st_.alpha_d = st_.alpha_d + rng.normal(0, 0.05, st_.alpha_d.size)
    return st_


def gradient_errors(prob, state, groups=fit.GROUPS, h=1e-4):
    """Relative error of each group's analytic gradient against central differences."""
    _, grads, _ = prob.evaluate(state)
    errs = {}
    for g in groups:
        base = np.asarray(state.get(g), dtype=np.float64)

        def f(x, g=g):
            s = state.copy()
            setattr(s, g, x.reshape(base.shape))
            return prob.evaluate(s, groups=())[0]

        fd = central_difference(f, base.ravel(), h)
        an = grads[g].ravel()
        errs[g] = np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-8)
    return errs


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_total_loss_gradient(scene, seed):
    prob = make_problem(scene)
    state = perturbed_state(scene, seed)
    prob.refresh(state)
    errs = gradient_errors(prob, state)
    assert all(e <= 1e-4 for e in errs.values()), errs


def test_squared_photometric_gradient(scene):
    prob = make_problem(scene, fit.FitConfig(squared_photometric=True))
    state = perturbed_state(scene, 5)
    prob.refresh(state)
    errs = gradient_errors(prob, state, ("gamma", "alpha_c", "alpha_d"))
    assert all(e <= 1e-4 for e in errs.values()), errs


def test_invisible_pixels_have_no_gradient(scene):
    prob = make_problem(scene)
    state = scene["truth"]
    prob.refresh(state)
    albedo, _, _ = prob.render(state)
    g = np.zeros(prob.image.shape)
    g[~prob.buffers.mask] = 1.0
    out = render.render_gradients(prob.buffers, g, albedo, state.gamma, prob.normal_map, prob.coverage)
    assert np.all(out["gamma"] == 0) and np.all(out["albedo"] == 0)


def test_mfc_swap_properties(scene):
    a = make_problem(scene)
    b = make_problem(scene)
    s = perturbed_state(scene, 3)
    a.refresh(s)
    single = a.evaluate(s, with_reg=False)[0]
    loss, gi, gj = fit.mfc_loss([a, b], [s, s.copy()], pair=(0, 1))
    assert np.isclose(loss, single)
    loss_self, _, _ = fit.mfc_loss([a, b], [s, s], pair=(0, 0))
    assert np.isclose(loss_self, single)
    assert set(gi) == {"pose", "gamma", "alpha_c", "alpha_d"} and set(gj) == {"beta", "xi"}
    truth = scene["truth"]
    other = truth.copy()
    other.pose = other.pose + np.array([0, 0.01, 0, 0, 0, 0.02, 0])
    loss_gt, _, _ = fit.mfc_loss([a, b], [truth, other], pair=(0, 1))
    a.refresh(truth)
    assert loss_gt <= a.evaluate(truth, with_reg=False)[0] + 1e-6
    i, j, _ = fit.mfc_swap([s, s, s], np.random.default_rng(0))
    assert i != j


def test_zero_iterations_returns_init(scene):
    cfg = fit.FitConfig(iterations=(0, 0, 0))
    init = perturbed_state(scene, 4)
    res = fit.fit(scene["image"], scene["landmarks"], scene["mask"], scene["shape_model"],
                  scene["mesh"], scene["model"], scene["detail"], cfg, init=init)
    for g in fit.GROUPS:
        assert np.array_equal(res.state.get(g), init.get(g))


def test_short_fit_histories_and_determinism(scene):
    cfg = fit.FitConfig(iterations=(15, 15, 10), seed=3)
    args = (scene["image"], scene["landmarks"], scene["mask"], scene["shape_model"],
            scene["mesh"], scene["model"], scene["detail"], cfg)
    a = fit.fit(*args)
    b = fit.fit(*args)
    for name, info in a.report["stages"].items():
        hist = np.asarray(info["loss"])
        assert np.all(np.isfinite(hist)) and info["best"] <= info["initial"]
    assert json.dumps(a.report, sort_keys=True) == json.dumps(b.report, sort_keys=True)
    assert a.rendered.shape == scene["image"].shape


def test_fit_errors(scene):
    empty = FaceMask(np.ones((64, 64)), np.zeros((64, 64)))
    with pytest.raises(EmptyMaskError):
        fit.fit(scene["image"], scene["landmarks"], empty, scene["shape_model"], scene["mesh"],
                scene["model"], scene["detail"])
    bad = perturbed_state(scene, 6)
    bad.alpha_c = bad.alpha_c * np.inf
    with pytest.raises((FitError, InvalidInputError)):
        fit.fit(scene["image"], scene["landmarks"], scene["mask"], scene["shape_model"], scene["mesh"],
                scene["model"], scene["detail"], fit.FitConfig(iterations=(0, 2, 0)), init=bad)


def test_similarity_and_landmark_init(scene):
    prob = make_problem(scene)
    s0 = fit.similarity_init(prob, prob.new_state())
    assert np.all(s0.pose[3:] == 0) and s0.pose[0] > 0
    s1 = fit.landmark_refine(prob, s0)
    l0 = fit.landmark_loss(scene["landmarks"], prob.projected_landmarks(s0), np.ones(68))[0]
    l1 = fit.landmark_loss(scene["landmarks"], prob.projected_landmarks(s1), np.ones(68))[0]
    assert l1 < 1e-3 * l0
