"""Synthetic train/meta/test scenarios with ground-truth group tags.

Three families, all Gaussian blobs in a low-dimensional feature space:

* :func:`gen_imbalanced`    - binary task, heavily skewed train set, balanced meta/test;
* :func:`gen_label_noise`   - K-class task, a fixed fraction of train labels flipped;
* :func:`gen_domain_mixture` - binary task, train pooled from an aligned domain and
  off-target domains whose class boundary points elsewhere.

Tags only describe training points (meta and test reuse the tag column for
their own bookkeeping: class for imbalance, ``clean`` for noise, domain for
the mixture).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .nn import rng_stream


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if not len(self.x) == len(self.y) == len(self.tags):
            raise ValidationError("features, labels and tags must have the same length")

    def __len__(self):
        return len(self.y)

    def tag_counts(self) -> dict:
        tags, counts = np.unique(self.tags, return_counts=True)
        return {int(t): int(c) for t, c in zip(tags, counts)}


@dataclass
class Scenario:
    name: str
    train: Split
    meta: Split
    test: Split
    num_classes: int
    tag_legend: dict = field(default_factory=dict)

    @property
    def loss(self) -> str:
        return "logistic" if self.num_classes == 2 else "softmax"

    @property
    def dim(self) -> int:
        return self.train.x.shape[1]


def _positive(**counts):
    for name, v in counts.items():
        if int(v) < 1:
            raise ValidationError(f"{name} must be >= 1, got {v}")


def _blob(rng, mean, n):
    return mean + rng.standard_normal((n, len(mean)))


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _shuffled(rng, x, y, tags) -> Split:
    order = rng.permutation(len(y))
    return Split(x[order], np.asarray(y)[order], np.asarray(tags)[order])


def gen_imbalanced(
    seed: int,
    n_major: int = 995,
    n_minor: int = 5,
    n_meta_per_class: int = 5,
    separation: float = 4.0,
    dim: int = 8,
    n_test: int = 2000,
) -> Scenario:
    """Two unit-variance blobs ``separation`` apart; label 1 is the minority class."""
    _positive(n_major=n_major, n_minor=n_minor, n_meta_per_class=n_meta_per_class, n_test=n_test)
    if not 2 <= dim <= 16:
        raise ValidationError("dim must be in [2, 16]")
    rng = rng_stream(seed, "imbalanced")
    u = _unit(rng, dim)
    means = [-0.5 * separation * u, 0.5 * separation * u]

    def draw(n0, n1):
        x = np.vstack([_blob(rng, means[0], n0), _blob(rng, means[1], n1)])
        y = np.r_[np.zeros(n0, dtype=int), np.ones(n1, dtype=int)]
        return _shuffled(rng, x, y, y)

    train = draw(n_major, n_minor)
    meta = draw(n_meta_per_class, n_meta_per_class)
    test = draw(n_test // 2, n_test - n_test // 2)
    return Scenario("imbalanced", train, meta, test, 2, {0: "majority", 1: "minority"})


def class_means(rng, num_classes, dim, separation):
    """Class centres roughly ``separation`` apart (exactly, when ``K <= dim``)."""
    if num_classes <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        return q.T * (separation / np.sqrt(2.0))
    dirs = rng.standard_normal((num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (separation / np.sqrt(2.0))


def _balanced_labels(n, k):
    return np.arange(n) % k


def flip_labels(rng, y, num_classes, noise_rate, mode):
    """Flip exactly ``floor(noise_rate * n)`` labels; returns ``(labels, noisy_mask)``."""
    n = len(y)
    n_noisy = int(np.floor(noise_rate * n))
    noisy = np.zeros(n, dtype=bool)
    noisy[rng.choice(n, size=n_noisy, replace=False)] = True
    out = np.array(y, copy=True)
    if mode == "symmetric":
        # uniform over the other classes
        shift = rng.integers(1, num_classes, size=n_noisy)
        out[noisy] = (y[noisy] + shift) % num_classes
    else:
        out[noisy] = (y[noisy] + 1) % num_classes
    return out, noisy


def gen_label_noise(
    seed: int,
    n_train: int = 2000,
    num_classes: int = 10,
    noise_rate: float = 0.5,
    mode: str = "symmetric",
    separation: float = 4.0,
    dim: int = 8,
    n_meta_per_class: int = 10,
    n_test: int = 2000,
) -> Scenario:
    """Class-conditional blobs with a noisy train set; tags are 0=clean, 1=noisy."""
    if not 0.0 <= noise_rate < 1.0:
        raise ValidationError("noise_rate must be in [0, 1)")
    if mode not in ("symmetric", "asymmetric"):
        raise ValidationError("mode must be 'symmetric' or 'asymmetric'")
    if num_classes < 2:
        raise ValidationError("need at least two classes")
    _positive(n_train=n_train, n_meta_per_class=n_meta_per_class, n_test=n_test)
    rng = rng_stream(seed, "label-noise")
    means = class_means(rng, num_classes, dim, separation)

    def draw(n):
        y = _balanced_labels(n, num_classes)
        return means[y] + rng.standard_normal((n, dim)), y

    x, y_true = draw(n_train)
    y_obs, noisy = flip_labels(rng, y_true, num_classes, noise_rate, mode)
    train = _shuffled(rng, x, y_obs, noisy.astype(int))
    mx, my = draw(n_meta_per_class * num_classes)
    meta = _shuffled(rng, mx, my, np.zeros(len(my), dtype=int))
    tx, ty = draw(n_test)
    test = _shuffled(rng, tx, ty, np.zeros(len(ty), dtype=int))
    return Scenario("label_noise", train, meta, test, num_classes, {0: "clean", 1: "noisy"})


def gen_domain_mixture(
    seed: int,
    domains_train: int = 2,
    domains_meta: int = 1,
    n_per_domain: int = 500,
    n_meta_per_domain: int = 30,
    rotation: float = 1.0,
    separation: float = 4.0,
    shift: float = 3.0,
    dim: int = 8,
    n_test: int = 2000,
) -> Scenario:
    """Binary task whose target domains share one discriminative direction ``u``.

    Train domain 0 ("aligned") uses ``u`` with a shifted centre. Every other
    train domain rotates its discriminative direction away from ``u`` by
    ``rotation * 90`` degrees, so at ``rotation=1`` its labels carry no
    information about the target boundary and at ``rotation=0`` it coincides
    with the aligned domain. Tags are train-domain indices.
    """
    if int(domains_train) < 2:
        raise ValidationError("need at least 2 train domains")
    _positive(domains_meta=domains_meta, n_per_domain=n_per_domain,
              n_meta_per_domain=n_meta_per_domain, n_test=n_test)
    if dim < 3:
        raise ValidationError("dim must be >= 3")
    rng = rng_stream(seed, "domain-mixture")
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    u = basis[:, 0]
    angle = 0.5 * np.pi * float(rotation)
    # column layout: 0 target boundary, 1 train-domain centre axis,
    # 2 meta-domain centre axis, 3.. rotated boundaries for off domains
    free = max(dim - 3, 1)

    def domain(direction, centre, n):
        y = _balanced_labels(n, 2)
        sign = 2.0 * y - 1.0
        x = centre + 0.5 * separation * sign[:, None] * direction + rng.standard_normal((n, dim))
        return x, y

    aligned_centre = shift * basis[:, 1]
    xs, ys, ts = [], [], []
    for d in range(int(domains_train)):
        direction, centre = u, aligned_centre
        if d:
            other = basis[:, 3 + (d - 1) % free] if dim > 3 else basis[:, 2]
            direction = np.cos(angle) * u + np.sin(angle) * other
            centre = aligned_centre - np.sin(angle) * shift * basis[:, 1] * (1 + (d - 1) // free)
        x, y = domain(direction, centre, int(n_per_domain))
        xs.append(x)
        ys.append(y)
        ts.append(np.full(len(y), d))
    train = _shuffled(rng, np.vstack(xs), np.concatenate(ys), np.concatenate(ts))

    def target(n_each, count):
        xs, ys, ts = [], [], []
        for k in range(count):
            x, y = domain(u, shift * k * basis[:, 2], n_each)
            xs.append(x)
            ys.append(y)
            ts.append(np.full(len(y), k))
        return _shuffled(rng, np.vstack(xs), np.concatenate(ys), np.concatenate(ts))

    meta = target(int(n_meta_per_domain), int(domains_meta))
    test = target(max(1, int(n_test) // int(domains_meta)), int(domains_meta))
    legend = {0: "aligned"}
    legend.update({d: f"off-{d}" for d in range(1, int(domains_train))})
    return Scenario("domain_mixture", train, meta, test, 2, legend)


# CSV bundle ---------------------------------------------------------------

SPLITS = ("train", "meta", "test")


def _fmt(v: float) -> str:
    return repr(float(v))


def save_scenario(scn: Scenario, out_dir) -> list:
    """Write ``train.csv``, ``meta.csv``, ``test.csv`` and ``scenario.json``.

    Each CSV has a header ``id,tag,label,f0,...`` and one row per example;
    floats are written with ``repr`` so a reload is exact.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in SPLITS:
        split = getattr(scn, name)
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "tag", "label"] + [f"f{j}" for j in range(split.x.shape[1])])
            for i in range(len(split)):
                w.writerow([i, int(split.tags[i]), int(split.y[i])] + [_fmt(v) for v in split.x[i]])
        paths.append(path)
    meta_path = os.path.join(out_dir, "scenario.json")
    with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {"name": scn.name, "num_classes": scn.num_classes,
             "tag_legend": {str(k): v for k, v in sorted(scn.tag_legend.items())}},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    paths.append(meta_path)
    return paths


def _read_split(path) -> Split:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:3] != ["id", "tag", "label"]:
        raise ValidationError(f"{path}: unexpected header {header[:3]}")
    d = len(header) - 3
    if not body:
        return Split(np.zeros((0, d)), np.zeros(0), np.zeros(0))
    arr = np.array([[float(v) for v in r] for r in body])
    return Split(arr[:, 3:], arr[:, 2].astype(int), arr[:, 1].astype(int))


def load_scenario(in_dir) -> Scenario:
    with open(os.path.join(in_dir, "scenario.json"), encoding="utf-8") as fh:
        info = json.load(fh)
    splits = {name: _read_split(os.path.join(in_dir, f"{name}.csv")) for name in SPLITS}
    legend = {int(k): v for k, v in info["tag_legend"].items()}
    return Scenario(info["name"], splits["train"], splits["meta"], splits["test"],
                    int(info["num_classes"]), legend)


GENERATORS = {
    "imbalanced": gen_imbalanced,
    "label_noise": gen_label_noise,
    "domain_mixture": gen_domain_mixture,
}
