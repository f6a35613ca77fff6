"""White-box attacks against a ZslModel over an explicit class space.

All attacks are pure functions of their arguments: the model and the
input image are never mutated. Perturbation norms are computed from
(adv_image - original) exactly as returned.
"""

import time
from dataclasses import dataclass

import numpy as np

from .model import (PipelineTrace, extract_features, loss_and_input_grad,
                    predict, _resolve_classes)
from .tensorops import pipeline_vjp

ATTACK_KINDS = ("fgsm", "deepfool", "cw_l2")
DEGENERATE_GRAD_NORM = 1e-12


class AttackError(RuntimeError):
    """Per-sample attack failure, annotated with the sample id."""


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = 0.01      # FGSM step size / DeepFool overshoot
    max_iter: int = 10
    top_k: int = 10            # DeepFool candidate boundaries
    c: float = 1.0             # C&W hinge weight
    lr: float = 0.01           # C&W step size
    kappa: float = 0.0         # C&W confidence margin
    clip: bool = True          # project into the [0,1] pixel box
    overshoot_mode: str = "additive"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"kind must be one of {ATTACK_KINDS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.overshoot_mode not in ("additive", "multiplicative"):
            raise ValueError("overshoot_mode must be additive or multiplicative")


# Table-style parameter grids used throughout the benchmark.
ATTACK_PRESETS = {
    "FGSM_1": AttackConfig(kind="fgsm", epsilon=0.001),
    "FGSM_2": AttackConfig(kind="fgsm", epsilon=0.01),
    "FGSM_3": AttackConfig(kind="fgsm", epsilon=0.1),
    "DEFO_1": AttackConfig(kind="deepfool", max_iter=3, epsilon=1e-6),
    "DEFO_2": AttackConfig(kind="deepfool", max_iter=3, epsilon=1e-5),
    "DEFO_3": AttackConfig(kind="deepfool", max_iter=10, epsilon=1e-6),
    "CaWa_1": AttackConfig(kind="cw_l2", max_iter=3),
    "CaWa_2": AttackConfig(kind="cw_l2", max_iter=6),
    "CaWa_3": AttackConfig(kind="cw_l2", max_iter=10),
}


@dataclass
class AdvResult:
    adv_image: np.ndarray
    perturbation_l2: float
    perturbation_linf: float
    iterations_used: int
    crossed_boundary: bool
    elapsed: float  # seconds


def _finish(original, adv, iterations, crossed, t0):
    delta = (adv - original).ravel()
    linf = float(np.max(np.abs(delta))) if delta.size else 0.0
    return AdvResult(
        adv_image=adv,
        perturbation_l2=float(np.linalg.norm(delta)),
        perturbation_linf=linf,
        iterations_used=int(iterations),
        crossed_boundary=bool(crossed),
        elapsed=time.perf_counter() - t0,
    )


def attack_fgsm(image, label, model, classes, cfg):
    """One-shot sign step: adv = clip(x + eps * sign(grad_x loss)).

    Exactly one gradient evaluation. crossed_boundary reports whether
    the prediction changed relative to the original prediction.
    """
    t0 = time.perf_counter()
    image = np.asarray(image, dtype=np.float64)
    ids = _resolve_classes(model, classes)
    orig_pred = predict(image, model, ids)
    _, grad = loss_and_input_grad(image, int(label), model, classes=ids)
    adv = image + cfg.epsilon * np.sign(grad)
    if cfg.clip:
        adv = np.clip(adv, 0.0, 1.0)
    crossed = predict(adv, model, ids) != orig_pred
    return _finish(image, adv, 1, crossed, t0)


def _score_pair_grad(x, model, ids, phis, idx_a, idx_b):
    """Gradient of (s_a - s_b) w.r.t. the image, and the current scores."""
    trace = PipelineTrace()
    f = extract_features(x, model.extractor, trace)
    scores = phis @ (model.weights.W.T @ f)
    upstream = model.weights.W @ (phis[idx_a] - phis[idx_b])
    grad = pipeline_vjp(trace, upstream).reshape(x.shape)
    return grad, scores


def attack_deepfool(image, model, classes, cfg):
    """Untargeted L2 DeepFool by iterative linearization.

    Each step linearizes the margins s_k - s_pred of the top_k
    non-predicted classes (ranked by current score, anchored at the
    original prediction), steps to the nearest linearized boundary, and
    stops once the prediction changes. The overshoot epsilon is additive
    inside each step by default; the multiplicative variant scales the
    accumulated perturbation by (1 + epsilon) at the end.
    """
    t0 = time.perf_counter()
    image = np.asarray(image, dtype=np.float64)
    ids = _resolve_classes(model, classes)
    if len(ids) < 2:
        raise ValueError("deepfool needs at least 2 classes")
    phis = model.phi_matrix(ids)
    orig_pred = predict(image, model, ids)
    pred_idx = ids.index(orig_pred)
    top_k = min(cfg.top_k, len(ids) - 1)

    r_total = np.zeros_like(image)
    x = image
    iterations = 0
    for _ in range(cfg.max_iter):
        iterations += 1
        f = extract_features(x, model.extractor)
        scores = phis @ (model.weights.W.T @ f)
        candidates = [k for k in np.argsort(-scores) if k != pred_idx][:top_k]
        best = None
        for k in candidates:
            grad, _ = _score_pair_grad(x, model, ids, phis, int(k), pred_idx)
            wn = float(np.linalg.norm(grad.ravel()))
            if wn < DEGENERATE_GRAD_NORM:
                continue
            f_k = float(scores[k] - scores[pred_idx])
            d = abs(f_k) / wn
            if best is None or d < best[0]:
                best = (d, f_k, wn, grad)
        if best is None:
            # every candidate boundary is flat here; nothing to step along
            return _finish(image, image.copy(), iterations, False, t0)
        _, f_k, wn, w = best
        if cfg.overshoot_mode == "additive":
            r_total = r_total + (abs(f_k) + cfg.epsilon) / wn ** 2 * w
        else:
            r_total = r_total + abs(f_k) / wn ** 2 * w
        x = image + r_total
        if predict(x, model, ids) != orig_pred:
            break

    adv = image + r_total
    if cfg.overshoot_mode == "multiplicative":
        adv = image + (1.0 + cfg.epsilon) * r_total
    if cfg.clip:
        adv = np.clip(adv, 0.0, 1.0)
    crossed = predict(adv, model, ids) != orig_pred
    return _finish(image, adv, iterations, crossed, t0)


def cw_objective(delta, margin, cfg):
    """||delta||_2^2 + c * max(margin, -kappa), the C&W-L2 objective."""
    return float(np.sum(delta * delta) + cfg.c * max(margin, -cfg.kappa))


def attack_cw_l2(image, label, model, classes, cfg, record_objective=None):
    """Carlini-Wagner L2 with fixed c and projection onto the pixel box.

    Minimizes ||delta||^2 + c * max(s_label - max_{i != label} s_i, -kappa)
    by gradient descent for max_iter steps of size lr. Returns the
    iterate with the smallest ||delta||_2 among those that misclassify
    (the starting delta = 0 counts), else the final iterate.
    crossed_boundary reports pred(adv) != label, the quantity the
    objective optimizes. `record_objective` (a list, if given) receives
    the objective value at delta = 0 and after every step.
    """
    t0 = time.perf_counter()
    image = np.asarray(image, dtype=np.float64)
    label = int(label)
    ids = _resolve_classes(model, classes)
    if label not in ids:
        raise ValueError(f"label {label} not in the search space")
    phis = model.phi_matrix(ids)
    label_idx = ids.index(label)
    other = np.asarray([i for i in range(len(ids)) if i != label_idx])

    def margin_at(x, trace=None):
        f = extract_features(x, model.extractor, trace)
        scores = phis @ (model.weights.W.T @ f)
        i_best = int(other[np.argmax(scores[other])])
        return float(scores[label_idx] - scores[i_best]), i_best, scores

    delta = np.zeros_like(image)
    margin0, _, scores0 = margin_at(image)
    best = None
    if int(ids[int(np.argmax(scores0))]) != label:
        best = (0.0, image.copy())
    if record_objective is not None:
        record_objective.append(cw_objective(delta, margin0, cfg))

    x = image.copy()
    for _ in range(cfg.max_iter):
        trace = PipelineTrace()
        margin, i_best, _ = margin_at(x, trace)
        if margin > -cfg.kappa:
            upstream = model.weights.W @ (phis[label_idx] - phis[i_best])
            hinge_grad = pipeline_vjp(trace, upstream).reshape(image.shape)
            grad = 2.0 * delta + cfg.c * hinge_grad
        else:
            grad = 2.0 * delta
        delta = delta - cfg.lr * grad
        x = image + delta
        if cfg.clip:
            x = np.clip(x, 0.0, 1.0)
            delta = x - image
        margin_new, _, scores_new = margin_at(x)
        if record_objective is not None:
            record_objective.append(cw_objective(delta, margin_new, cfg))
        if int(ids[int(np.argmax(scores_new))]) != label:
            norm = float(np.linalg.norm(delta.ravel()))
            if best is None or norm < best[0]:
                best = (norm, x.copy())

    if best is not None:
        return _finish(image, best[1], cfg.max_iter, True, t0)
    crossed = predict(x, model, ids) != label
    return _finish(image, x, cfg.max_iter, crossed, t0)


def run_attack(image, label, model, classes, cfg):
    """Dispatch one attack by cfg.kind (DeepFool ignores the label)."""
    if cfg.kind == "fgsm":
        return attack_fgsm(image, label, model, classes, cfg)
    if cfg.kind == "deepfool":
        return attack_deepfool(image, model, classes, cfg)
    return attack_cw_l2(image, label, model, classes, cfg)


def attack_batch(bundle, indices, model, classes, cfg, mode="all"):
    """Attack the given samples; returns (sample_id, AdvResult) pairs.

    mode="only_correct" keeps only samples whose original prediction
    over `classes` equals their true label. Results are ordered by
    sample id, so output never depends on traversal order.
    """
    if mode not in ("all", "only_correct"):
        raise ValueError("mode must be 'all' or 'only_correct'")
    ids = _resolve_classes(model, classes)
    results = []
    for i in sorted(int(v) for v in indices):
        image = bundle.images[i]
        label = int(bundle.labels[i])
        if mode == "only_correct" and predict(image, model, ids) != label:
            continue
        try:
            results.append((i, run_attack(image, label, model, ids, cfg)))
        except Exception as exc:
            raise AttackError(f"sample {i}: {exc}") from exc
    return results
