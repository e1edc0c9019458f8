"""Losses, Adam and the three-stage coefficient fitting loop.

Stage 1 recovers pose, identity, expression and SH lighting against the
mean albedo, stage 2 the coarse albedo coefficients and stage 3 the detail
coefficients. Photometric gradients use frozen rasterizer correspondence
that is refreshed every ``refresh_every`` iterations; pose and shape are
driven through the landmark term.
"""
from dataclasses import asdict, dataclass, field, fields
import json
import logging
from typing import Protocol

import numpy as np

from .albedo import AlbedoPipeline
from .errors import ConfigError, EmptyMaskError, FitError, InvalidInputError, OptimizerError
from .render import (N_LANDMARKS, assemble_shape, bake_normals_uv, euler_to_rotation,
                     neutral_gamma, project, projection_jacobian, rasterize_mesh,
                     render_gradients, sample_texture, shade, vertex_normals)
from .uvcore import FaceMask, check_image

log = logging.getLogger(__name__)

GROUPS = ("pose", "beta", "xi", "gamma", "alpha_c", "alpha_d")
STAGES = ("stage1", "stage2", "stage3")
CONTOUR = slice(0, 17)


# ---------------------------------------------------------------------------
# data types

@dataclass
class LandmarkSet:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (N_LANDMARKS, 2):
            raise InvalidInputError(f"expected {N_LANDMARKS} 2-D landmarks, got {self.points.shape}")
        if self.weights is None:
            self.weights = default_landmark_weights()
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.weights.size != N_LANDMARKS or np.any(self.weights < 0):
            raise InvalidInputError("landmark weights must be 68 non-negative values")


def default_landmark_weights():
    w = np.ones(N_LANDMARKS)
    w[CONTOUR] = 0.5
    return w


def load_landmarks(path):
    """JSON array of 68 ``[x, y]`` pixel pairs."""
    with open(path) as fh:
        pts = json.load(fh)
    return LandmarkSet(np.asarray(pts, dtype=np.float64))


def default_lr_scale():
    """Per-group multipliers on the base learning rate.

    Albedo coefficients live in orthonormal-basis units, where a step of
    ``lr`` changes a pixel by roughly ``lr / d``; they get larger steps.
    """
    return {"pose": 3.0, "beta": 5.0, "xi": 5.0, "gamma": 10.0, "alpha_c": 10.0, "alpha_d": 10.0}


def default_reg_weights():
    return {"beta": 1e-4, "xi": 1e-4, "gamma": 1e-5, "alpha_c": 1e-4, "alpha_d": 1e-3}


@dataclass
class FitConfig:
    lambda_pho: float = 1.0
    lambda_lmk: float = 2e-3
    lambda_id: float = 0.0
    lambda_mfc: float = 0.0
    lambda_reg: float = 1.0
    reg_weights: dict = field(default_factory=default_reg_weights)
    iterations: tuple = (200, 200, 100)
    lr: float = 1e-3
    lr_scale: dict = field(default_factory=default_lr_scale)
    lr_schedule: str = "cosine"
    lr_final_fraction: float = 0.01
    seed: int = 0
    image_size: int = 224
    refresh_every: int = 10
    squared_photometric: bool = False
    refine_coarse_in_detail: bool = True
    refine_light: bool = True
    landmark_init: bool = True

    def __post_init__(self):
        self.iterations = tuple(int(i) for i in self.iterations)
        weights = default_reg_weights()
        unknown = set(self.reg_weights) - set(weights)
        if unknown:
            raise ConfigError(f"unknown regularizer groups: {sorted(unknown)}")
        weights.update(self.reg_weights)
        self.reg_weights = {k: float(v) for k, v in weights.items()}
        scales = default_lr_scale()
        unknown = set(self.lr_scale) - set(scales)
        if unknown:
            raise ConfigError(f"unknown learning-rate groups: {sorted(unknown)}")
        scales.update(self.lr_scale)
        self.lr_scale = {k: float(v) for k, v in scales.items()}
        if any(v <= 0 for v in self.lr_scale.values()):
            raise ConfigError("learning-rate multipliers must be positive")
        for name in ("lambda_pho", "lambda_lmk", "lambda_id", "lambda_mfc", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if any(v < 0 for v in self.reg_weights.values()):
            raise ConfigError("regularizer weights must be non-negative")
        if len(self.iterations) != 3 or any(i < 0 for i in self.iterations):
            raise ConfigError("iterations must be three non-negative counts")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0 < self.lr_final_fraction <= 1:
            raise ConfigError("lr_final_fraction must be in (0, 1]")
        if self.lr <= 0 or self.refresh_every < 1:
            raise ConfigError("lr must be positive and refresh_every >= 1")

    def to_dict(self):
        d = asdict(self)
        d["iterations"] = list(self.iterations)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FitState:
    beta: np.ndarray
    xi: np.ndarray
    pose: np.ndarray
    gamma: np.ndarray
    alpha_c: np.ndarray
    alpha_d: np.ndarray
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    loss_history: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, n_id, n_exp, n_alpha_c, n_alpha_d):
        pose = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        return cls(np.zeros(n_id), np.zeros(n_exp), pose, neutral_gamma(),
                   np.zeros(n_alpha_c), np.zeros(n_alpha_d))

    def get(self, group):
        return getattr(self, group)

    def copy(self):
        return FitState(
            **{g: np.array(getattr(self, g), dtype=np.float64) for g in GROUPS},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            steps=dict(self.steps),
            loss_history={k: list(v) for k, v in self.loss_history.items()})

    def coefficients(self):
        return {g: np.asarray(getattr(self, g), dtype=np.float64).tolist() for g in GROUPS}

    def reset_optimizer(self):
        self.adam_m.clear()
        self.adam_v.clear()
        self.steps.clear()


class EmbeddingProvider(Protocol):
    """Maps an image to a unit-norm feature vector (e.g. a face recognition network)."""

    def __call__(self, image: np.ndarray) -> np.ndarray:
        ...


# ---------------------------------------------------------------------------
# losses

def photometric_loss(target, rendered, mask, squared=False):
    """Masked per-pixel colour distance and its gradient w.r.t. ``rendered``.

    ``sum(G * W * ||I - I_r||) / sum(G)``, with the per-pixel norm squared
    when ``squared`` is set.
    """
    target = np.asarray(target, dtype=np.float64)
    rendered = np.asarray(rendered, dtype=np.float64)
    if target.shape != rendered.shape or target.shape[:2] != mask.shape:
        raise InvalidInputError(
            f"shape mismatch: target {target.shape}, render {rendered.shape}, mask {mask.shape}")
    denom = mask.skin.sum()
    if denom <= 0:
        raise EmptyMaskError("photometric loss: skin mask is empty")
    gw = mask.skin * mask.weights
    diff = rendered - target
    if squared:
        per_pixel = np.sum(diff * diff, axis=-1)
        grad = 2.0 * diff * (gw / denom)[..., None]
    else:
        per_pixel = np.sqrt(np.sum(diff * diff, axis=-1))
        safe = np.where(per_pixel > 0, per_pixel, 1.0)
        grad = np.where((per_pixel > 0)[..., None], diff / safe[..., None], 0.0) * (gw / denom)[..., None]
    return float(np.sum(gw * per_pixel) / denom), grad


def landmark_loss(target, projected, weights):
    """``sum_i w_i ||k_gt_i - k_i||^2`` and its gradient w.r.t. ``projected``."""
    target = np.asarray(target, dtype=np.float64)
    projected = np.asarray(projected, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if target.shape != (N_LANDMARKS, 2) or projected.shape != target.shape or weights.size != N_LANDMARKS:
        raise InvalidInputError(
            f"landmark shapes must be ({N_LANDMARKS}, 2): got {target.shape}, {projected.shape}")
    diff = projected - target
    loss = float(np.sum(weights[:, None] * diff * diff))
    return loss, 2.0 * weights[:, None] * diff


def identity_loss(provider, image, rendered):
    """``1 - cos(F(I), F(I_r))``; reported only, no gradient."""
    if provider is None:
        raise ConfigError("identity loss requested without an embedding provider")
    a = np.asarray(provider(image), dtype=np.float64).reshape(-1)
    b = np.asarray(provider(rendered), dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInputError("embedding provider returned a zero vector")
    return float(1.0 - np.dot(a, b) / (na * nb))


def reg_loss(state, weights):
    """``sum_g w_g ||coeff_g||^2`` over the regularized groups, plus gradients."""
    total = 0.0
    grads = {}
    for g, w in weights.items():
        c = np.asarray(state.get(g), dtype=np.float64)
        total += w * float(np.sum(c * c))
        grads[g] = 2.0 * w * c
    return total, grads


# ---------------------------------------------------------------------------
# optimizer

def adam_step(state, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of the groups present in ``grads``.

    Each group keeps its own moments and step counter. ``lr`` is a scalar
    or a per-group mapping. Returns a new state.
    """
    new = state.copy()
    rates = lr if isinstance(lr, dict) else None
    for g, grad in grads.items():
        grad = np.asarray(grad, dtype=np.float64)
        param = np.asarray(new.get(g), dtype=np.float64)
        if grad.shape != param.shape:
            raise InvalidInputError(f"gradient for {g} has shape {grad.shape}, expected {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"non-finite gradient in group {g!r}", group=g)
        m = new.adam_m.get(g, np.zeros_like(param))
        v = new.adam_v.get(g, np.zeros_like(param))
        t = new.steps.get(g, 0) + 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        rate = rates[g] if rates is not None else lr
        param = param - rate * m_hat / (np.sqrt(v_hat) + eps)
        if g == "pose":
            param[0] = max(param[0], 1e-6)
        setattr(new, g, param)
        new.adam_m[g] = m
        new.adam_v[g] = v
        new.steps[g] = t
    return new


# ---------------------------------------------------------------------------
# problem evaluation

class FitProblem:
    """One target image with its assets; evaluates losses and gradients.

    Render correspondence (visibility, barycentrics, texel taps and the UV
    normal map) is computed by :meth:`refresh` and then held fixed.
    """

    def __init__(self, image, landmarks, mask, shape_model, mesh, model, detail=None,
                 config=None, provider=None):
        self.image = check_image(image, "target image").astype(np.float64)
        self.height, self.width = self.image.shape[:2]
        if not isinstance(landmarks, LandmarkSet):
            landmarks = LandmarkSet(landmarks)
        self.landmarks = landmarks
        if not isinstance(mask, FaceMask):
            mask = FaceMask.from_weights(mask)
        if mask.shape != (self.height, self.width):
            raise InvalidInputError(f"mask {mask.shape} does not match image {self.image.shape[:2]}")
        if mask.skin.sum() <= 0:
            raise EmptyMaskError("skin mask is empty")
        self.mask = mask
        self.shape_model = shape_model
        self.mesh = mesh
        if shape_model.n_vertices != mesh.n_vertices:
            raise InvalidInputError(
                f"shape model has {shape_model.n_vertices} vertices, mesh has {mesh.n_vertices}")
        self.albedo = AlbedoPipeline(model, detail)
        self.config = config or FitConfig()
        self.provider = provider
        if self.config.lambda_id > 0 and provider is None:
            raise ConfigError("lambda_id > 0 requires an embedding provider")
        self.texture_size = self.albedo.resolution
        lmk = mesh.landmarks
        rows = (3 * lmk[:, None] + np.arange(3)[None, :]).ravel()
        self._lmk_mean = shape_model.mean.astype(np.float64)[rows].reshape(-1, 3)
        self._lmk_id = shape_model.id_basis.astype(np.float64)[rows]
        self._lmk_exp = shape_model.exp_basis.astype(np.float64)[rows]
        self.buffers = None
        self.normal_map = None
        self.coverage = None

    def new_state(self):
        return FitState.zeros(self.shape_model.n_id, self.shape_model.n_exp,
                              self.albedo.k * 3, self.albedo.m)

    def vertices(self, state):
        return assemble_shape(self.shape_model, state.beta, state.xi)

    def landmark_vertices(self, state):
        return (self._lmk_mean.ravel() + self._lmk_id @ state.beta
                + self._lmk_exp @ state.xi).reshape(-1, 3)

    def refresh(self, state):
        verts = self.vertices(state)
        rot = euler_to_rotation(*state.pose[4:7])
        normals = vertex_normals(verts @ rot, self.mesh.triangles)
        self.normal_map, self.coverage, _ = bake_normals_uv(self.mesh, normals, self.texture_size)
        self.buffers = rasterize_mesh(verts, self.mesh, state.pose, self.width, self.height,
                                      self.texture_size)

    def render(self, state):
        """Albedo, shaded texture and rendered image for the current buffers."""
        if self.buffers is None:
            self.refresh(state)
        albedo = self.albedo.forward(state.alpha_c, state.alpha_d)
        texture = shade(albedo, state.gamma, self.normal_map, self.coverage)
        return albedo, texture, sample_texture(self.buffers, texture)

    def projected_landmarks(self, state):
        return project(self.landmark_vertices(state), state.pose, self.width, self.height)

    def evaluate(self, state, groups=GROUPS, weights=None, with_reg=True):
        """Total loss, per-group gradients and the individual loss terms.

        ``weights`` overrides the (lambda_pho, lambda_lmk) pair, e.g. to
        switch the landmark term off in later stages.
        """
        cfg = self.config
        lam_pho, lam_lmk = (cfg.lambda_pho, cfg.lambda_lmk) if weights is None else weights
        grads = {g: np.zeros_like(np.asarray(state.get(g), dtype=np.float64)) for g in groups}
        parts = {}
        total = 0.0

        need_pho = lam_pho > 0 or cfg.lambda_id > 0
        if need_pho:
            albedo, texture, rendered = self.render(state)
            l_pho, g_img = photometric_loss(self.image, rendered, self.mask,
                                            squared=cfg.squared_photometric)
            parts["photometric"] = l_pho
            total += lam_pho * l_pho
            if lam_pho > 0 and ({"gamma", "alpha_c", "alpha_d"} & set(groups)):
                rg = render_gradients(self.buffers, lam_pho * g_img, albedo, state.gamma,
                                      self.normal_map, self.coverage)
                if "gamma" in grads:
                    grads["gamma"] += rg["gamma"]
                if "alpha_c" in grads or "alpha_d" in grads:
                    g_c, g_d = self.albedo.backward(rg["albedo"])
                    if "alpha_c" in grads:
                        grads["alpha_c"] += g_c
                    if "alpha_d" in grads:
                        grads["alpha_d"] += g_d
            if cfg.lambda_id > 0:
                l_id = identity_loss(self.provider, self.image, rendered)
                parts["identity"] = l_id
                total += cfg.lambda_id * l_id

        if lam_lmk > 0:
            lv = self.landmark_vertices(state)
            k = project(lv, state.pose, self.width, self.height)
            l_lmk, g_k = landmark_loss(self.landmarks.points, k, self.landmarks.weights)
            parts["landmark"] = l_lmk
            total += lam_lmk * l_lmk
            g_k = lam_lmk * g_k
            if {"pose", "beta", "xi"} & set(groups):
                d_pose, d_vert = projection_jacobian(lv, state.pose, self.width, self.height)
                if "pose" in grads:
                    grads["pose"] += np.einsum("ij,ijk->k", g_k, d_pose)
                g_v = np.einsum("ij,ijk->ik", g_k, d_vert).ravel()
                if "beta" in grads:
                    grads["beta"] += self._lmk_id.T @ g_v
                if "xi" in grads:
                    grads["xi"] += self._lmk_exp.T @ g_v

        if with_reg and cfg.lambda_reg > 0:
            l_reg, g_reg = reg_loss(state, cfg.reg_weights)
            parts["regularization"] = l_reg
            total += cfg.lambda_reg * l_reg
            for g in groups:
                if g in g_reg:
                    grads[g] += cfg.lambda_reg * g_reg[g]

        parts["total"] = total
        return total, grads, parts


# ---------------------------------------------------------------------------
# multi-view swap

def swap_coefficients(state_i, state_j):
    """View i's pose, light and albedo with view j's identity and expression."""
    out = state_i.copy()
    out.beta = np.array(state_j.beta, dtype=np.float64)
    out.xi = np.array(state_j.xi, dtype=np.float64)
    return out


def mfc_swap(states, rng, pair=None):
    """Pick a random view pair ``(i, j)`` and return ``(i, j, swapped_state)``."""
    if len(states) < 2:
        raise InvalidInputError("multi-view swap needs at least two views")
    if pair is None:
        i, j = rng.choice(len(states), size=2, replace=False)
    else:
        i, j = pair
    return int(i), int(j), swap_coefficients(states[i], states[j])


def mfc_loss(problems, states, rng=None, pair=None):
    """Photometric + landmark loss of view i rendered with view j's shape coefficients.

    Returns ``(loss, grads_i, grads_j)``: gradients for view i's pose, light
    and albedo and for view j's identity and expression. Correspondence
    buffers of view i are refreshed for the swapped geometry.
    """
    if len(problems) != len(states):
        raise InvalidInputError("one fitting problem per view is required")
    rng = np.random.default_rng(0) if rng is None else rng
    i, j, swapped = mfc_swap(states, rng, pair)
    prob = problems[i]
    prob.refresh(swapped)
    loss, grads, _ = prob.evaluate(swapped, with_reg=False)
    grads_i = {g: grads[g] for g in ("pose", "gamma", "alpha_c", "alpha_d")}
    grads_j = {g: grads[g] for g in ("beta", "xi")}
    return loss, grads_i, grads_j


# ---------------------------------------------------------------------------
# fitting

def similarity_init(problem, state):
    """Closed-form scale and 2-D translation aligning mean-shape landmarks (no rotation)."""
    lv = problem._lmk_mean
    w = np.sqrt(problem.landmarks.weights)
    pts = problem.landmarks.points
    nx = 2.0 * pts[:, 0] / problem.width - 1.0
    ny = 1.0 - 2.0 * pts[:, 1] / problem.height
    rows = np.concatenate([np.stack([lv[:, 0], np.ones(68), np.zeros(68)], 1),
                           np.stack([lv[:, 1], np.zeros(68), np.ones(68)], 1)])
    rhs = np.concatenate([nx, ny])
    ww = np.concatenate([w, w])
    sol, *_ = np.linalg.lstsq(rows * ww[:, None], rhs * ww, rcond=None)
    new = state.copy()
    new.pose = np.array([max(sol[0], 1e-3), sol[1], sol[2], 0.0, 0.0, 0.0, 0.0])
    return new


def landmark_refine(problem, state, iterations=30, damping=1e-3):
    """Damped Gauss-Newton on the landmark and shape-regularization terms.

    Solves for pose, identity and expression jointly; lighting and albedo are
    untouched. Steps that do not lower the objective raise the damping.
    """
    cfg = problem.config
    lam = cfg.lambda_lmk
    w = np.sqrt(problem.landmarks.weights)
    reg = np.sqrt(cfg.lambda_reg * np.array([cfg.reg_weights["beta"]] * problem.shape_model.n_id
                                            + [cfg.reg_weights["xi"]] * problem.shape_model.n_exp))
    n_id = problem.shape_model.n_id

    def residual(st):
        k = problem.projected_landmarks(st)
        r = np.sqrt(lam) * (w[:, None] * (k - problem.landmarks.points)).ravel()
        return np.concatenate([r, reg * np.concatenate([st.beta, st.xi])])

    def jacobian(st):
        lv = problem.landmark_vertices(st)
        d_pose, d_vert = projection_jacobian(lv, st.pose, problem.width, problem.height)
        n = lv.shape[0]
        d_shape = np.einsum("nij,njk->nik", d_vert,
                            np.concatenate([problem._lmk_id, problem._lmk_exp], 1).reshape(n, 3, -1))
        top = np.sqrt(lam) * w[:, None, None] * np.concatenate([d_pose, d_shape], 2)
        top = top.reshape(2 * n, -1)
        bottom = np.concatenate([np.zeros((reg.size, 7)), np.diag(reg)], 1)
        return np.concatenate([top, bottom])

    state = state.copy()
    r = residual(state)
    cost = float(r @ r)
    mu = damping
    for _ in range(iterations):
        J = jacobian(state)
        A = J.T @ J
        g = J.T @ r
        step = -np.linalg.solve(A + mu * (np.diag(np.diag(A)) + 1e-12 * np.eye(A.shape[0])), g)
        trial = state.copy()
        trial.pose = state.pose + step[:7]
        trial.pose[0] = max(trial.pose[0], 1e-6)
        trial.beta = state.beta + step[7:7 + n_id]
        trial.xi = state.xi + step[7 + n_id:]
        r_new = residual(trial)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            state, r, mu = trial, r_new, mu * 0.3
            done = cost - cost_new <= 1e-15 * max(cost, 1e-300)
            cost = cost_new
            if done:
                break
        else:
            mu *= 10.0
            if mu > 1e12:
                break
    return state


@dataclass
class FitResult:
    state: FitState
    report: dict
    rendered: np.ndarray
    albedo: np.ndarray
    texture: np.ndarray


def _stage_plan(problem):
    cfg = problem.config
    light = ["gamma"] if cfg.refine_light else []
    s3 = (["alpha_d"] if problem.albedo.m else []) + (["alpha_c"] if cfg.refine_coarse_in_detail else [])
    return [
        ("stage1", ["pose", "beta", "xi", "gamma"], (cfg.lambda_pho, cfg.lambda_lmk)),
        ("stage2", ["alpha_c"] + light, (cfg.lambda_pho, 0.0)),
        ("stage3", s3 + light if s3 else [], (cfg.lambda_pho, 0.0)),
    ]


def learning_rate(cfg, it, iterations):
    """Base learning rate at iteration ``it`` of a stage (cosine decay or constant)."""
    if cfg.lr_schedule == "constant" or iterations <= 1:
        return cfg.lr
    frac = cfg.lr_final_fraction
    return cfg.lr * (frac + (1 - frac) * 0.5 * (1 + np.cos(np.pi * it / (iterations - 1))))


def _run_stage(problem, state, name, groups, weights, iterations):
    cfg = problem.config
    state = state.copy()
    state.reset_optimizer()
    history = []
    best_loss, best_state = np.inf, state.copy()
    if iterations == 0 or not groups:
        return state, {"loss": [], "best": None, "iterations": 0}
    for it in range(iterations + 1):
        if it % cfg.refresh_every == 0 and it < iterations:
            problem.refresh(state)
        loss, grads, parts = problem.evaluate(state, groups, weights)
        if not np.isfinite(loss):
            raise FitError("non-finite loss", stage=name, iteration=it)
        history.append(loss)
        if loss < best_loss:
            best_loss, best_state = loss, state.copy()
        if it == iterations:
            break
        try:
            lr = learning_rate(cfg, it, iterations)
            rates = {g: lr * cfg.lr_scale[g] for g in groups}
            state = adam_step(state, {g: grads[g] for g in groups}, rates)
        except OptimizerError as exc:
            raise FitError(str(exc), stage=name, iteration=it) from exc
    best_state.loss_history = state.loss_history
    best_state.loss_history[name] = history
    best_state.adam_m, best_state.adam_v, best_state.steps = state.adam_m, state.adam_v, state.steps
    return best_state, {"loss": history, "best": best_loss, "initial": history[0],
                        "iterations": iterations}


def fit(image, landmarks, mask, shape_model, mesh, model, detail=None, config=None,
        provider=None, init=None):
    """Recover pose, shape, lighting, coarse albedo and detail coefficients from one image.

    Returns a :class:`FitResult` whose report holds per-stage loss curves,
    the final loss terms and the coefficient vectors.
    """
    config = config or FitConfig()
    if config.lambda_mfc > 0:
        log.warning("lambda_mfc ignored: single-image fit has no second view (see mfc_loss)")
    problem = FitProblem(image, landmarks, mask, shape_model, mesh, model, detail, config, provider)
    if init is not None:
        state = init.copy()
    else:
        state = similarity_init(problem, problem.new_state())
        if config.landmark_init and config.lambda_lmk > 0:
            state = landmark_refine(problem, state)
    stages = {}
    for (name, groups, weights), iters in zip(_stage_plan(problem), config.iterations):
        state, info = _run_stage(problem, state, name, groups, weights, iters)
        stages[name] = info
        log.info("%s: %d iterations, best loss %s", name, iters, info.get("best"))
    problem.refresh(state)
    _, final_grads, parts = problem.evaluate(state)
    albedo, texture, rendered = problem.render(state)
    k = problem.projected_landmarks(state)
    report = {
        "config": config.to_dict(),
        "stages": stages,
        "final": {key: float(v) for key, v in parts.items()},
        "landmark_rmse_px": float(np.sqrt(np.mean(np.sum((k - problem.landmarks.points) ** 2, axis=1)))),
        "coefficients": state.coefficients(),
    }
    return FitResult(state, report, rendered, albedo, texture)
