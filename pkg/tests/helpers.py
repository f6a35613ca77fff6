"""Shared builders for the test suite."""

import numpy as np

from zslbench import AleWeights, FeatureExtractor, TrainConfig, ZslModel
from zslbench.dataset import (BundleMeta, ClassEmbedding, DatasetBundle,
                              SplitSpec)


def linear_model(weights, phis, ids=None):
    """Identity-extractor model: score_i = x . (W phi_i) on flattened x."""
    W = np.asarray(weights, dtype=np.float64)
    phis = np.asarray(phis, dtype=np.float64)
    if ids is None:
        ids = list(range(1, phis.shape[0] + 1))
    emb = {int(c): phis[i].astype(np.float64) for i, c in enumerate(ids)}
    ext = FeatureExtractor.identity(W.shape[0])
    return ZslModel(ext, AleWeights(W), emb, TrainConfig())


def random_linear_model(rng, input_dim, attr_dim, n_classes):
    W = rng.normal(0.0, 1.0, size=(input_dim, attr_dim))
    phis = rng.normal(0.0, 1.0, size=(n_classes, attr_dim))
    phis /= np.linalg.norm(phis, axis=1, keepdims=True)
    return linear_model(W, phis)


def random_deep_model(rng, input_dim, layer_dims, attr_dim, n_classes):
    """Seeded tanh-stack extractor with a random ALE table on top."""
    ext = FeatureExtractor.seeded(input_dim, tuple(layer_dims),
                                  int(rng.integers(0, 2 ** 31)))
    W = rng.normal(0.0, 1.0, size=(layer_dims[-1], attr_dim))
    phis = rng.normal(0.0, 1.0, size=(n_classes, attr_dim))
    phis /= np.linalg.norm(phis, axis=1, keepdims=True)
    emb = {c + 1: phis[c] for c in range(n_classes)}
    return ZslModel(ext, AleWeights(W), emb, TrainConfig())


def hand_bundle(images, labels, phis, seen, unseen, train_idx,
                test_seen_idx, test_unseen_idx, name="hand"):
    """Bundle from explicit arrays; phis is {class_id: vector} (normalized)."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w, c = images.shape
    emb = []
    attr_dim = None
    for cid in sorted(phis):
        v = np.asarray(phis[cid], dtype=np.float64)
        v = v / np.linalg.norm(v)
        attr_dim = v.size
        emb.append(ClassEmbedding(int(cid), v))
    split = SplitSpec(tuple(seen), tuple(unseen), tuple(train_idx),
                      tuple(test_seen_idx), tuple(test_unseen_idx))
    meta = BundleMeta(name, h, w, c, attr_dim)
    return DatasetBundle(images, np.asarray(labels, dtype=np.int64),
                         emb, split, meta)


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at flat array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g
