"""Dataset bundles: images, labels, class attribute embeddings, splits.

On disk a bundle is a directory holding manifest.json, images.csv (one
flattened row-major sample per row), attributes.csv (class_id followed
by the attribute vector) and splits.json (seen/unseen class ids, index
lists, and the per-sample labels array). CSV files carry no header, use
'.' as the decimal separator, UTF-8 and LF line endings. Floats are
written with repr so that save -> load round-trips bit-exactly.
"""

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np


class DatasetError(Exception):
    """Base class for bundle construction and I/O problems."""


class FormatError(DatasetError):
    """Malformed manifest, CSV or JSON content."""


class DimensionError(DatasetError):
    """Array extents disagree with the manifest or with each other."""


class SplitError(DatasetError):
    """Index lists violate the seen/unseen split contract."""


@dataclass
class ClassEmbedding:
    class_id: int
    phi: np.ndarray  # attribute vector, shape (A,)


@dataclass
class SplitSpec:
    seen_classes: tuple
    unseen_classes: tuple
    train_indices: tuple
    test_seen_indices: tuple
    test_unseen_indices: tuple


@dataclass
class BundleMeta:
    name: str
    height: int
    width: int
    channels: int
    attr_dim: int


@dataclass
class DatasetBundle:
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    embeddings: list  # of ClassEmbedding, one per class
    split: SplitSpec
    meta: BundleMeta

    @property
    def n_samples(self):
        return int(self.images.shape[0])

    @property
    def n_classes(self):
        return len(self.embeddings)

    @property
    def input_dim(self):
        return self.meta.height * self.meta.width * self.meta.channels

    def phi(self, class_id):
        for emb in self.embeddings:
            if emb.class_id == class_id:
                return emb.phi
        raise KeyError(f"unknown class id {class_id}")

    def embedding_dict(self):
        return {emb.class_id: emb.phi for emb in self.embeddings}


def validate_bundle(bundle, warn_empty_unseen=True):
    """Check every DatasetBundle invariant; raise a typed error on breach."""
    images, labels, meta = bundle.images, bundle.labels, bundle.meta
    if images.ndim != 4:
        raise DimensionError(f"images must be (N,H,W,C), got ndim {images.ndim}")
    n, h, w, c = images.shape
    if (h, w, c) != (meta.height, meta.width, meta.channels):
        raise DimensionError(
            f"image dims {(h, w, c)} disagree with manifest "
            f"{(meta.height, meta.width, meta.channels)}"
        )
    if labels.shape != (n,):
        raise DimensionError(f"{n} images but {labels.shape[0]} labels")
    if not np.all(np.isfinite(images)):
        raise FormatError("images contain NaN or Inf")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise FormatError("pixel values outside [0, 1]")

    ids = [emb.class_id for emb in bundle.embeddings]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate class id in embeddings")
    for emb in bundle.embeddings:
        if emb.phi.shape != (meta.attr_dim,):
            raise DimensionError(
                f"class {emb.class_id} embedding has length {emb.phi.shape[0]}, "
                f"expected {meta.attr_dim}"
            )
    known = set(ids)
    for lab in set(int(v) for v in labels):
        if lab not in known:
            raise FormatError(f"class {lab} has no attribute embedding")

    sp = bundle.split
    seen, unseen = set(sp.seen_classes), set(sp.unseen_classes)
    if seen & unseen:
        raise SplitError(f"classes both seen and unseen: {sorted(seen & unseen)}")
    for name, indices, allowed in (
        ("train_indices", sp.train_indices, seen),
        ("test_seen_indices", sp.test_seen_indices, seen),
        ("test_unseen_indices", sp.test_unseen_indices, unseen),
    ):
        for i in indices:
            if not 0 <= i < n:
                raise SplitError(f"{name} entry {i} out of range for {n} samples")
            if int(labels[i]) not in allowed:
                raise SplitError(
                    f"{name} entry {i} has label {int(labels[i])}, "
                    f"outside its allowed class group"
                )
    if warn_empty_unseen and len(sp.test_unseen_indices) == 0:
        warnings.warn("bundle has no test_unseen samples", stacklevel=2)


def bundles_equal(a, b):
    """Exact (bitwise) equality of two bundles; used by round-trip tests."""
    if a.meta != b.meta:
        return False
    if not np.array_equal(a.images, b.images):
        return False
    if not np.array_equal(a.labels, b.labels):
        return False
    if len(a.embeddings) != len(b.embeddings):
        return False
    for ea, eb in zip(a.embeddings, b.embeddings):
        if ea.class_id != eb.class_id or not np.array_equal(ea.phi, eb.phi):
            return False
    return a.split == b.split


def _fmt(value):
    return repr(float(value))


def save_bundle(bundle, out_dir):
    """Write a bundle to `out_dir`; load_bundle reads it back bit-exactly."""
    validate_bundle(bundle, warn_empty_unseen=False)
    os.makedirs(out_dir, exist_ok=True)
    meta = bundle.meta
    manifest = {
        "name": meta.name,
        "height": meta.height,
        "width": meta.width,
        "channels": meta.channels,
        "attr_dim": meta.attr_dim,
        "n_samples": bundle.n_samples,
        "n_classes": bundle.n_classes,
        "files": {
            "images": "images.csv",
            "attributes": "attributes.csv",
            "splits": "splits.json",
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    flat = bundle.images.reshape(bundle.n_samples, -1)
    with open(os.path.join(out_dir, "images.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        for row in flat:
            fh.write(",".join(_fmt(v) for v in row))
            fh.write("\n")
    with open(os.path.join(out_dir, "attributes.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        for emb in bundle.embeddings:
            fh.write(str(int(emb.class_id)))
            for v in emb.phi:
                fh.write("," + _fmt(v))
            fh.write("\n")
    splits = {
        "seen_classes": [int(c) for c in bundle.split.seen_classes],
        "unseen_classes": [int(c) for c in bundle.split.unseen_classes],
        "train_indices": [int(i) for i in bundle.split.train_indices],
        "test_seen_indices": [int(i) for i in bundle.split.test_seen_indices],
        "test_unseen_indices": [int(i) for i in bundle.split.test_unseen_indices],
        "labels": [int(v) for v in bundle.labels],
    }
    with open(os.path.join(out_dir, "splits.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(splits, fh, indent=2, sort_keys=True)
        fh.write("\n")


_MANIFEST_KEYS = ("name", "height", "width", "channels", "attr_dim",
                  "n_samples", "n_classes", "files")
_SPLIT_KEYS = ("seen_classes", "unseen_classes", "train_indices",
               "test_seen_indices", "test_unseen_indices", "labels")


def load_bundle(manifest_path, normalize=True):
    """Load a bundle from a manifest file (or its directory).

    Class embeddings are L2-normalized at load unless `normalize` is
    False; vectors already within 1e-9 of unit norm are left untouched,
    which makes loading idempotent and keeps load(save(b)) bit-exact.
    """
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    base = os.path.dirname(manifest_path)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    for key in _MANIFEST_KEYS:
        if key not in manifest:
            raise FormatError(f"manifest missing key '{key}'")
    for key in ("images", "attributes", "splits"):
        if key not in manifest["files"]:
            raise FormatError(f"manifest files map missing '{key}'")

    height = int(manifest["height"])
    width = int(manifest["width"])
    channels = int(manifest["channels"])
    attr_dim = int(manifest["attr_dim"])
    n_samples = int(manifest["n_samples"])
    n_classes = int(manifest["n_classes"])
    pixels = height * width * channels

    def _resolve(name):
        path = os.path.join(base, manifest["files"][name])
        if not os.path.isfile(path):
            raise FileNotFoundError(f"bundle file not found: {path}")
        return path

    rows = []
    with open(_resolve("images"), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise FormatError(f"images.csv line {lineno}: {exc}") from exc
            if len(row) != pixels:
                raise DimensionError(
                    f"images.csv line {lineno} has {len(row)} values, "
                    f"expected {pixels}"
                )
            rows.append(row)
    if len(rows) != n_samples:
        raise DimensionError(
            f"images.csv has {len(rows)} rows, manifest says {n_samples}"
        )
    images = np.asarray(rows, dtype=np.float64).reshape(
        n_samples, height, width, channels
    )

    embeddings = []
    with open(_resolve("attributes"), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            try:
                class_id = int(toks[0])
                phi = np.asarray([float(t) for t in toks[1:]], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"attributes.csv line {lineno}: {exc}") from exc
            if phi.shape[0] != attr_dim:
                raise DimensionError(
                    f"attributes.csv line {lineno} has {phi.shape[0]} attribute "
                    f"values, expected {attr_dim}"
                )
            if normalize:
                norm = float(np.linalg.norm(phi))
                if norm == 0.0:
                    raise FormatError(
                        f"class {class_id} embedding has zero norm"
                    )
                if abs(norm - 1.0) > 1e-9:
                    phi = phi / norm
            embeddings.append(ClassEmbedding(class_id, phi))
    if len(embeddings) != n_classes:
        raise DimensionError(
            f"attributes.csv has {len(embeddings)} classes, "
            f"manifest says {n_classes}"
        )

    try:
        with open(_resolve("splits"), encoding="utf-8") as fh:
            raw_split = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"splits.json is not valid JSON: {exc}") from exc
    for key in _SPLIT_KEYS:
        if key not in raw_split:
            raise FormatError(f"splits.json missing key '{key}'")
    labels = np.asarray([int(v) for v in raw_split["labels"]], dtype=np.int64)
    if labels.shape[0] != n_samples:
        raise DimensionError(
            f"splits.json has {labels.shape[0]} labels, expected {n_samples}"
        )
    split = SplitSpec(
        seen_classes=tuple(int(c) for c in raw_split["seen_classes"]),
        unseen_classes=tuple(int(c) for c in raw_split["unseen_classes"]),
        train_indices=tuple(int(i) for i in raw_split["train_indices"]),
        test_seen_indices=tuple(int(i) for i in raw_split["test_seen_indices"]),
        test_unseen_indices=tuple(int(i) for i in raw_split["test_unseen_indices"]),
    )
    meta = BundleMeta(str(manifest["name"]), height, width, channels, attr_dim)
    bundle = DatasetBundle(images, labels, embeddings, split, meta)
    validate_bundle(bundle)
    return bundle


@dataclass
class SynthConfig:
    n_classes: int
    n_seen: int
    samples_per_class: int
    height: int = 8
    width: int = 8
    channels: int = 1
    attr_dim: int = 12
    class_separation: float = 1.0
    noise_sigma: float = 0.05
    name: str = "synthetic"


SYNTH_PRESETS = {
    # many classes, few samples per class
    "cub_like": SynthConfig(n_classes=10, n_seen=7, samples_per_class=30,
                            height=8, width=8, channels=1, attr_dim=12,
                            class_separation=1.0, noise_sigma=0.05,
                            name="cub_like"),
    # few classes, many samples per class
    "awa_like": SynthConfig(n_classes=6, n_seen=4, samples_per_class=75,
                            height=8, width=8, channels=1, attr_dim=10,
                            class_separation=1.0, noise_sigma=0.05,
                            name="awa_like"),
}


def generate_synthetic(cfg, seed):
    """Generate a seeded synthetic bundle.

    Each class gets a random unit attribute vector phi(y) and a class
    prototype image through one fixed linear lift of phi(y). The lift
    maps every attribute to a random low-frequency cosine field, so
    prototypes are spatially smooth: class signal lives below the
    Nyquist band of a 3x3 neighborhood and survives local smoothing,
    while i.i.d. pixel noise does not. Samples are the prototype plus
    Gaussian pixel noise, clipped to [0, 1]. The first n_seen class ids
    are seen; inside each seen class a seeded shuffle assigns 80% of
    samples to train and the rest to test_seen. All unseen-class
    samples land in test_unseen.
    """
    if not 1 <= cfg.n_seen < cfg.n_classes:
        raise ValueError("need 1 <= n_seen < n_classes")
    if cfg.samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if cfg.attr_dim < 1:
        raise ValueError("attr_dim must be >= 1")
    if cfg.noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    pixels = cfg.height * cfg.width * cfg.channels

    phi = rng.normal(size=(cfg.n_classes, cfg.attr_dim))
    phi /= np.linalg.norm(phi, axis=1, keepdims=True)

    # Orthonormal DCT-II dictionary, lowest spatial frequencies first.
    # Orthonormal attribute coefficients over it make the lift a scaled
    # partial isometry, so class geometry transfers to pixel space
    # exactly while every prototype stays spatially smooth.
    ys = (np.arange(cfg.height) + 0.5) / cfg.height
    xs = (np.arange(cfg.width) + 0.5) / cfg.width
    uv = sorted(((u, v) for u in range(cfg.height) for v in range(cfg.width)),
                key=lambda p: (p[0] + p[1], p[0]))
    n_modes = min(-(-cfg.attr_dim // cfg.channels), cfg.height * cfg.width)
    basis = np.empty((n_modes, cfg.height * cfg.width))
    for m, (u, v) in enumerate(uv[:n_modes]):
        field = np.outer(np.cos(np.pi * u * ys), np.cos(np.pi * v * xs))
        basis[m] = field.ravel() / np.linalg.norm(field)
    coef = rng.normal(size=(n_modes * cfg.channels, cfg.attr_dim))
    if coef.shape[0] >= cfg.attr_dim:
        coef = np.linalg.qr(coef)[0]
    else:
        coef /= np.linalg.norm(coef, axis=0, keepdims=True)
    planes = np.einsum("mca,mp->acp",
                       coef.reshape(n_modes, cfg.channels, cfg.attr_dim),
                       basis)
    lift = np.moveaxis(
        planes.reshape(cfg.attr_dim, cfg.channels, cfg.height, cfg.width),
        (2, 3, 1), (0, 1, 2)).reshape(pixels, cfg.attr_dim)
    lift *= np.sqrt(pixels)
    prototypes = 0.5 + 0.25 * cfg.class_separation * (phi @ lift.T)

    images = np.empty((cfg.n_classes * cfg.samples_per_class, pixels))
    labels = np.empty(cfg.n_classes * cfg.samples_per_class, dtype=np.int64)
    for c in range(cfg.n_classes):
        noise = rng.normal(0.0, cfg.noise_sigma,
                           size=(cfg.samples_per_class, pixels))
        lo = c * cfg.samples_per_class
        images[lo:lo + cfg.samples_per_class] = np.clip(
            prototypes[c] + noise, 0.0, 1.0
        )
        labels[lo:lo + cfg.samples_per_class] = c

    seen = tuple(range(cfg.n_seen))
    unseen = tuple(range(cfg.n_seen, cfg.n_classes))
    train, test_seen, test_unseen = [], [], []
    for c in range(cfg.n_classes):
        lo = c * cfg.samples_per_class
        if c in seen:
            perm = rng.permutation(cfg.samples_per_class)
            n_train = int(round(0.8 * cfg.samples_per_class))
            train.extend(int(lo + i) for i in perm[:n_train])
            test_seen.extend(int(lo + i) for i in perm[n_train:])
        else:
            test_unseen.extend(range(lo, lo + cfg.samples_per_class))

    bundle = DatasetBundle(
        images=images.reshape(-1, cfg.height, cfg.width, cfg.channels),
        labels=labels,
        embeddings=[ClassEmbedding(c, phi[c]) for c in range(cfg.n_classes)],
        split=SplitSpec(seen, unseen, tuple(sorted(train)),
                        tuple(sorted(test_seen)), tuple(sorted(test_unseen))),
        meta=BundleMeta(cfg.name, cfg.height, cfg.width, cfg.channels,
                        cfg.attr_dim),
    )
    validate_bundle(bundle, warn_empty_unseen=False)
    return bundle
