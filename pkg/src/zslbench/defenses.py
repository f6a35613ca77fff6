"""Blind input-transformation defenses, applied before model inference.

Both defenses map [0,1] images to [0,1] images and know nothing about
whether or how an input was attacked. Label smoothing is a
training-time defense: it has no input transform, so the harness swaps
in a model retrained with smoothed targets; its preset lives here as a
marker object.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .seeding import derive_seed

DEFENSE_KINDS = ("spatial_smoothing", "tvm")
TVM_STEP = 0.05  # fixed projected-gradient step size


@dataclass(frozen=True)
class DefenseConfig:
    kind: str
    window: int = 3          # median filter window (odd)
    keep_prob: float = 0.5   # TVM Bernoulli keep probability
    lambda_tv: float = 0.3   # TVM total-variation weight
    max_iter: int = 3        # TVM projected-gradient steps
    seed: int = 0            # TVM mask seed

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"kind must be one of {DEFENSE_KINDS}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must be in (0, 1]")
        if self.lambda_tv <= 0:
            raise ValueError("lambda_tv must be > 0")


@dataclass(frozen=True)
class LabelSmoothingDefense:
    """Training-time defense marker: retrain with smoothed targets."""
    smoothing: float = 0.9


DEFENSE_PRESETS = {
    "SpS": DefenseConfig(kind="spatial_smoothing", window=3),
    "TVM": DefenseConfig(kind="tvm", max_iter=3),
    "LbS": LabelSmoothingDefense(smoothing=0.9),
}


def defend_median(image, window):
    """Per-channel sliding-window median with symmetric edge padding.

    Symmetric padding repeats the edge sample, which is what makes the
    1x3 row [0,1,0] filter to [0,0,0] under a window of 3.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 1")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("image must be (H, W, C)")
    if window == 1:
        return image.copy()
    half = window // 2
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        padded = np.pad(image[:, :, c], half, mode="symmetric")
        windows = sliding_window_view(padded, (window, window))
        out[:, :, c] = np.median(windows, axis=(2, 3))
    return out


def tv_measure(image):
    """Anisotropic total variation: sum of |horizontal| + |vertical| diffs."""
    image = np.asarray(image, dtype=np.float64)
    dh = image[:, 1:, :] - image[:, :-1, :]
    dv = image[1:, :, :] - image[:-1, :, :]
    return float(np.sum(np.abs(dh)) + np.sum(np.abs(dv)))


def tvm_objective(z, image, mask, lambda_tv):
    """Masked data term plus weighted total variation."""
    diff = (z - image) * mask[:, :, None]
    return float(np.sum(diff * diff)) + lambda_tv * tv_measure(z)


def defend_tvm(image, cfg, seed_override=None, record_objective=None):
    """Total-variance minimization from a Bernoulli-kept pixel subset.

    Draws a per-pixel keep mask (shared across channels) from the seeded
    generator, then runs cfg.max_iter projected subgradient steps on
    sum_mask (z - x)^2 + lambda * TV(z) starting at z = x, clipping to
    [0,1] after each step. Ties in the TV term get subgradient 0, so a
    constant image is an exact fixed point. `record_objective` (a list,
    if given) receives the objective at z = x and after every step.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("image must be (H, W, C)")
    seed = cfg.seed if seed_override is None else seed_override
    rng = np.random.default_rng(seed)
    h, w, _ = image.shape
    mask = (rng.random((h, w)) < cfg.keep_prob).astype(np.float64)
    lam = cfg.lambda_tv

    z = image.copy()
    if record_objective is not None:
        record_objective.append(tvm_objective(z, image, mask, lam))
    for _ in range(cfg.max_iter):
        grad = 2.0 * mask[:, :, None] * (z - image)
        dh = np.sign(z[:, 1:, :] - z[:, :-1, :])
        grad[:, 1:, :] += lam * dh
        grad[:, :-1, :] -= lam * dh
        dv = np.sign(z[1:, :, :] - z[:-1, :, :])
        grad[1:, :, :] += lam * dv
        grad[:-1, :, :] -= lam * dv
        z = np.clip(z - TVM_STEP * grad, 0.0, 1.0)
        if record_objective is not None:
            record_objective.append(tvm_objective(z, image, mask, lam))
    return z


def defend_one(image, cfg, seed_override=None):
    if cfg.kind == "spatial_smoothing":
        return defend_median(image, cfg.window)
    return defend_tvm(image, cfg, seed_override=seed_override)


def defend_batch(images, cfg, mode="all", sample_ids=None, selected=None):
    """Apply the defense per image; returns a list of defended images.

    TVM mask seeds are derived per sample id from cfg.seed, so results
    do not depend on batch composition or traversal order; the median
    filter is seed-free. mode="only_attacked_correct" defends only the
    images flagged in `selected` (a boolean sequence) and passes the
    rest through unchanged.
    """
    if mode not in ("all", "only_attacked_correct"):
        raise ValueError("mode must be 'all' or 'only_attacked_correct'")
    if sample_ids is None:
        sample_ids = list(range(len(images)))
    if len(sample_ids) != len(images):
        raise ValueError("sample_ids length must match images")
    if mode == "only_attacked_correct":
        if selected is None or len(selected) != len(images):
            raise ValueError(
                "only_attacked_correct needs a `selected` flag per image"
            )
    out = []
    for pos, (sid, image) in enumerate(zip(sample_ids, images)):
        if mode == "only_attacked_correct" and not selected[pos]:
            out.append(np.asarray(image, dtype=np.float64).copy())
            continue
        seed = derive_seed(cfg.seed, "tvm", int(sid))
        out.append(defend_one(image, cfg, seed_override=seed))
    return out
