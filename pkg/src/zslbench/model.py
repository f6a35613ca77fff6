"""Attribute label-embedding classifier: score(x, y) = theta(x)^T W phi(y).

theta is a frozen stack of affine/tanh layers over the flattened image;
only the D x A compatibility matrix W is trained. Prediction takes an
explicit class search space, so one model serves both the ZSL protocol
(unseen classes only) and the GZSL protocol (seen union unseen).
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .seeding import derive_seed
from .tensorops import (PipelineTrace, ShapeError, affine_forward,
                        pipeline_vjp, tanh_forward)

TRAIN_LOSSES = ("weighted_ranking", "structured_hinge", "cross_entropy")
DEFAULT_LAYER_DIMS = (32,)


class TrainingError(RuntimeError):
    """Training produced a non-finite W (diverged learning rate)."""


class FeatureExtractor:
    """Frozen affine/tanh stack mapping flattened images to features."""

    def __init__(self, input_dim, layers, descriptor=None):
        self.input_dim = int(input_dim)
        self.layers = []
        dim = self.input_dim
        for layer in layers:
            if layer[0] == "affine":
                _, A, b = layer
                A = np.asarray(A, dtype=np.float64)
                b = np.asarray(b, dtype=np.float64)
                if A.shape != (b.shape[0], dim):
                    raise ShapeError(
                        f"affine layer {A.shape} does not follow dim {dim}"
                    )
                A.setflags(write=False)
                b.setflags(write=False)
                self.layers.append(("affine", A, b))
                dim = A.shape[0]
            elif layer[0] == "tanh":
                self.layers.append(("tanh",))
            else:
                raise ValueError(f"unknown layer kind {layer[0]!r}")
        self.feature_dim = dim
        self.descriptor = descriptor if descriptor is not None else {
            "kind": "explicit",
            "input_dim": self.input_dim,
            "layers": [
                {"op": "affine", "A": lay[1].tolist(), "b": lay[2].tolist()}
                if lay[0] == "affine" else {"op": "tanh"}
                for lay in self.layers
            ],
        }

    @classmethod
    def seeded(cls, input_dim, layer_dims, seed):
        """Random extractor: affine(prev -> dim) + tanh per entry of layer_dims.

        Affine weights are N(0, 1/sqrt(prev)) and biases N(0, 0.1), drawn
        in a fixed order from default_rng(seed), so the same descriptor
        always rebuilds the identical extractor.
        """
        rng = np.random.default_rng(seed)
        layers = []
        prev = int(input_dim)
        for dim in layer_dims:
            A = rng.normal(0.0, 1.0 / np.sqrt(prev), size=(int(dim), prev))
            b = rng.normal(0.0, 0.1, size=int(dim))
            layers.append(("affine", A, b))
            layers.append(("tanh",))
            prev = int(dim)
        desc = {"kind": "seeded", "input_dim": int(input_dim),
                "layer_dims": [int(d) for d in layer_dims], "seed": int(seed)}
        return cls(input_dim, layers, descriptor=desc)

    @classmethod
    def identity(cls, input_dim):
        """theta(x) = flattened pixels (single identity affine)."""
        n = int(input_dim)
        layers = [("affine", np.eye(n), np.zeros(n))]
        return cls(n, layers, descriptor={"kind": "identity", "input_dim": n})

    @classmethod
    def from_descriptor(cls, desc):
        kind = desc.get("kind")
        if kind == "seeded":
            return cls.seeded(desc["input_dim"], desc["layer_dims"], desc["seed"])
        if kind == "identity":
            return cls.identity(desc["input_dim"])
        if kind == "explicit":
            layers = []
            for lay in desc["layers"]:
                if lay["op"] == "affine":
                    layers.append(("affine", lay["A"], lay["b"]))
                else:
                    layers.append(("tanh",))
            return cls(desc["input_dim"], layers, descriptor=desc)
        raise ValueError(f"unknown extractor descriptor kind {kind!r}")


@dataclass
class AleWeights:
    W: np.ndarray  # (D, A)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ShapeError("W must be a D x A matrix")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("W contains NaN or Inf")


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.45
    margin: float = 1.0
    loss: str = "weighted_ranking"
    label_smoothing: float = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in TRAIN_LOSSES:
            raise ValueError(f"loss must be one of {TRAIN_LOSSES}")


@dataclass
class ZslModel:
    extractor: FeatureExtractor
    weights: AleWeights
    embeddings: dict  # class id -> phi vector
    train_config: TrainConfig

    def class_ids(self):
        return sorted(self.embeddings)

    def phi_matrix(self, class_ids):
        rows = []
        for cid in class_ids:
            if cid not in self.embeddings:
                raise ValueError(f"unknown class id {cid}")
            rows.append(self.embeddings[cid])
        return np.asarray(rows, dtype=np.float64)


def extract_features(image, extractor, trace=None):
    """theta(x) for a single image, recording into `trace` if given."""
    x = np.asarray(image, dtype=np.float64).reshape(-1)
    if x.shape[0] != extractor.input_dim:
        raise ShapeError(
            f"image has {x.shape[0]} pixels, extractor expects "
            f"{extractor.input_dim}"
        )
    v = x
    for lay in extractor.layers:
        if lay[0] == "affine":
            v = affine_forward(v, lay[1], lay[2], trace)
        else:
            v = tanh_forward(v, trace)
    return v


def compatibility_scores(features, weights, phis):
    """score_i = features^T W phi_i for every row phi_i of `phis`."""
    W = weights.W if isinstance(weights, AleWeights) else np.asarray(weights)
    f = np.asarray(features, dtype=np.float64)
    phis = np.asarray(phis, dtype=np.float64)
    if f.shape[0] != W.shape[0] or phis.shape[1] != W.shape[1]:
        raise ShapeError(
            f"dims do not conform: features {f.shape}, W {W.shape}, "
            f"phis {phis.shape}"
        )
    return phis @ (W.T @ f)


def _resolve_classes(model, classes):
    ids = sorted(int(c) for c in (model.class_ids() if classes is None
                                  else classes))
    if not ids:
        raise ValueError("class set is empty")
    return ids


def scores_for_features(features, model, classes=None):
    ids = _resolve_classes(model, classes)
    return ids, compatibility_scores(features, model.weights,
                                     model.phi_matrix(ids))


def predict_from_features(features, model, classes=None):
    """Argmax over the class set; exact ties go to the smallest class id."""
    ids, scores = scores_for_features(features, model, classes)
    return int(ids[int(np.argmax(scores))])


def predict(image, model, classes=None):
    return predict_from_features(extract_features(image, model.extractor),
                                 model, classes)


def _target(ids, true_class, smoothing):
    k = len(ids)
    if true_class not in ids:
        raise ValueError(f"class {true_class} not in the search space")
    t = np.zeros(k)
    if smoothing is None:
        t[ids.index(true_class)] = 1.0
    else:
        if not 1.0 / k < smoothing <= 1.0:
            raise ValueError(
                f"label smoothing {smoothing} outside (1/{k}, 1]"
            )
        t[:] = (1.0 - smoothing) / (k - 1) if k > 1 else 0.0
        t[ids.index(true_class)] = smoothing
    return t


def loss_and_input_grad(image, true_class, model, smoothing=None,
                        classes=None):
    """Softmax cross-entropy over compatibility scores and its input grad.

    The loss is computed against the (possibly smoothed) target over the
    given class search space; the gradient w.r.t. the raw image flows
    through W and the extractor via the pipeline VJP. This is the
    attack-facing loss regardless of the training objective.
    """
    ids = _resolve_classes(model, classes)
    true_class = int(true_class)
    target = _target(ids, true_class, smoothing)
    trace = PipelineTrace()
    f = extract_features(image, model.extractor, trace)
    phis = model.phi_matrix(ids)
    scores = compatibility_scores(f, model.weights, phis)
    m = scores.max()
    lse = m + np.log(np.sum(np.exp(scores - m)))
    loss = float(lse - target @ scores)
    p = np.exp(scores - lse)
    df = model.weights.W @ (phis.T @ (p - target))
    grad = pipeline_vjp(trace, df).reshape(np.asarray(image).shape)
    return loss, grad


def class_score_input_grad(image, class_id, model):
    """Gradient of the single class score w.r.t. the raw image."""
    class_id = int(class_id)
    if class_id not in model.embeddings:
        raise ValueError(f"unknown class id {class_id}")
    trace = PipelineTrace()
    extract_features(image, model.extractor, trace)
    upstream = model.weights.W @ model.embeddings[class_id]
    return pipeline_vjp(trace, upstream).reshape(np.asarray(image).shape)


def _harmonic(r):
    return float(np.sum(1.0 / np.arange(1, r + 1))) if r >= 1 else 0.0


def train_ale(bundle, cfg, extractor=None):
    """Train W by sequential SGD over the train split (seen classes only).

    The objective follows cfg.loss: the weighted approximate-ranking
    hinge (sampled violator, rank weights beta_r = sum_{j<=r} 1/j), the
    structured hinge (argmax of margin + score), or softmax
    cross-entropy. Setting cfg.label_smoothing switches the objective to
    cross-entropy against the smoothed target (mass cfg.label_smoothing
    on the ground truth, the rest uniform over other seen classes).
    Deterministic in cfg.seed; epochs=0 returns the Gaussian init of W.
    """
    if cfg.seed is None:
        raise ValueError("TrainConfig.seed must be a concrete integer")
    if extractor is None:
        extractor = FeatureExtractor.seeded(
            bundle.input_dim, DEFAULT_LAYER_DIMS,
            derive_seed(cfg.seed, "extractor"))
    seen = sorted(int(c) for c in bundle.split.seen_classes)
    k_seen = len(seen)
    emb = bundle.embedding_dict()
    phis = np.asarray([emb[c] for c in seen])
    if cfg.label_smoothing is not None and not (
            1.0 / k_seen < cfg.label_smoothing <= 1.0):
        raise ValueError(
            f"label smoothing {cfg.label_smoothing} outside (1/{k_seen}, 1]"
        )

    d = extractor.feature_dim
    rng = np.random.default_rng(cfg.seed)
    W = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, bundle.meta.attr_dim))

    train_idx = list(bundle.split.train_indices)
    feats = np.asarray([extract_features(bundle.images[i], extractor)
                        for i in train_idx])
    y_pos = np.asarray([seen.index(int(bundle.labels[i])) for i in train_idx])

    smoothed = cfg.label_smoothing is not None
    use_ce = smoothed or cfg.loss == "cross_entropy"
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_idx))
        for i in order:
            f = feats[i]
            yi = int(y_pos[i])
            sv = phis @ (W.T @ f)
            if use_ce:
                if smoothed:
                    t = np.full(k_seen, (1.0 - cfg.label_smoothing) / (k_seen - 1))
                    t[yi] = cfg.label_smoothing
                else:
                    t = np.zeros(k_seen)
                    t[yi] = 1.0
                m = sv.max()
                p = np.exp(sv - m)
                p /= p.sum()
                W -= lr * np.outer(f, phis.T @ (p - t))
            elif cfg.loss == "weighted_ranking":
                violator = None
                draws = 0
                for _ in range(k_seen - 1):
                    cand = int(rng.integers(k_seen - 1))
                    if cand >= yi:
                        cand += 1
                    draws += 1
                    if cfg.margin + sv[cand] - sv[yi] > 0:
                        violator = cand
                        break
                if violator is not None:
                    rank = (k_seen - 1) // draws
                    beta = _harmonic(rank)
                    W += lr * beta * np.outer(f, phis[yi] - phis[violator])
            else:  # structured_hinge
                aug = sv + cfg.margin
                aug[yi] = sv[yi]
                j = int(np.argmax(aug))
                if j != yi and aug[j] > sv[yi]:
                    W += lr * np.outer(f, phis[yi] - phis[j])
        if not np.all(np.isfinite(W)):
            raise TrainingError(f"non-finite W after epoch {epoch}")
    return ZslModel(extractor, AleWeights(W), emb, cfg)


def save_model(model, path):
    """Write a checkpoint: one JSON header line, then W rows as CSV.

    Floats go through repr, so load_model restores W bit-exactly.
    """
    header = {
        "input_dim": model.extractor.input_dim,
        "feature_dim": model.extractor.feature_dim,
        "attr_dim": int(model.weights.W.shape[1]),
        "extractor": model.extractor.descriptor,
        "train_config": asdict(model.train_config),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True))
        fh.write("\n")
        for row in model.weights.W:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_model(path, bundle):
    """Read a checkpoint and bind the bundle's class embeddings."""
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows = [[float(tok) for tok in line.strip().split(",")]
                for line in fh if line.strip()]
    W = np.asarray(rows, dtype=np.float64)
    if W.shape != (header["feature_dim"], header["attr_dim"]):
        raise ShapeError(
            f"checkpoint W is {W.shape}, header says "
            f"{(header['feature_dim'], header['attr_dim'])}"
        )
    extractor = FeatureExtractor.from_descriptor(header["extractor"])
    cfg = TrainConfig(**header["train_config"])
    return ZslModel(extractor, AleWeights(W), bundle.embedding_dict(), cfg)
