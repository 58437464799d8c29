"""Vertically partitioned datasets: synthetic generators, CSV ingestion, batching."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InputError, ParseError
from .rng import stream


@dataclass(frozen=True)
class VerticalDataset:
    """Row-aligned per-party feature blocks plus the active party's labels.

    Row ``i`` of every block and ``labels[i]`` describe the same sample.
    """

    party_features: tuple[np.ndarray, ...]
    labels: np.ndarray
    n_classes: int
    boundaries: tuple[int, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        n = self.labels.shape[0]
        for k, x in enumerate(self.party_features):
            if x.ndim != 2 or x.shape[0] != n:
                raise InputError(f"party {k + 1} block has {x.shape[0]} rows, expected {n}")
            x.setflags(write=False)
        self.labels.setflags(write=False)
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise InputError("train and test indices overlap")

    @property
    def n_parties(self) -> int:
        return len(self.party_features)

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(x.shape[1] for x in self.party_features)

    def split(self, which: str) -> np.ndarray:
        if which == "train":
            return self.train_idx
        if which == "test":
            return self.test_idx
        raise InputError(f"unknown split {which!r}")

    def rows(self, idx) -> tuple[list[np.ndarray], np.ndarray]:
        return [x[idx] for x in self.party_features], self.labels[idx]

    def only(self, parties: Sequence[int]) -> "VerticalDataset":
        """View restricted to the given 1-based party ids (first becomes party 1)."""
        blocks = tuple(self.party_features[k - 1] for k in parties)
        bounds = tuple(np.cumsum([b.shape[1] for b in blocks]).tolist())
        return VerticalDataset(blocks, self.labels, self.n_classes, bounds, self.train_idx, self.test_idx)

    def digest(self) -> str:
        """Content digest of features, labels and split (sha256, hex)."""
        h = hashlib.sha256()
        for x in self.party_features:
            h.update(np.ascontiguousarray(x).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(np.ascontiguousarray(self.train_idx).tobytes())
        h.update(np.ascontiguousarray(self.test_idx).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian blob generator.

    Party ``k``'s block has ``dims[k]`` class columns holding
    ``class_separation * q_k * mu_k[y] + noise``, with unit class means
    ``mu_k`` and ``q_k = informativeness[k]``. When ``synergy > 0`` it also
    gets ``synergy_dims`` key columns holding ``synergy * key_k[s_k] + noise``,
    where the keys ``s_k`` are uniform on ``{0..synergy_levels-1}`` subject to
    ``sum_k s_k = y (mod synergy_levels)``: any strict subset of the keys is
    independent of ``y``, all of them together pin ``y mod synergy_levels``.
    Parties in ``coarse_parties`` (1-based) get class means for the coarse
    label ``y // synergy_levels`` only.

    When ``confound > 0`` a label-independent latent ``z ~ N(0, I)`` of
    ``confound_dims`` dimensions leaks into party 1's class columns as
    ``confound * z @ P`` (``P`` has unit rows), and every other party observes
    it in its own ``confound_dims`` columns holding
    ``confound_visibility * z + noise``.
    Party 1 alone sees ``z`` only as extra noise; with another party's block a
    model can subtract it. ``nuisance_dims`` pure-noise columns close every
    block.
    """

    n: int = 4000
    n_classes: int = 10
    dims: tuple[int, ...] = (8, 8)
    informativeness: tuple[float, ...] = (1.0, 1.0)
    class_separation: float = 8.0
    noise_std: float = 1.0
    synergy: float = 0.0
    synergy_levels: int = 2
    synergy_dims: int = 2
    nuisance_dims: int = 0
    coarse_parties: tuple[int, ...] = (2,)
    confound: float = 3.0
    confound_dims: int = 8
    confound_visibility: float = 6.0
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if len(self.dims) != len(self.informativeness):
            raise InputError("dims and informativeness must have one entry per party")
        if len(self.dims) < 1:
            raise InputError("need at least one party")
        if any(d < 1 for d in self.dims):
            raise InputError("every party needs at least one feature column")
        if any(not 0.0 <= q <= 1.0 for q in self.informativeness):
            raise InputError("informativeness values must lie in [0, 1]")
        if self.n_classes < 2 or self.n < self.n_classes:
            raise InputError("need n >= n_classes >= 2")
        if self.class_separation <= 0 or self.noise_std < 0 or self.synergy < 0:
            raise InputError("class_separation must be positive; noise_std, synergy nonnegative")
        if self.confound < 0 or self.confound_visibility < 0 or self.confound_dims < 1:
            raise InputError("confound and confound_visibility must be nonnegative, confound_dims >= 1")
        if self.synergy_levels < 1 or self.synergy_dims < 1 or self.nuisance_dims < 0:
            raise InputError("synergy_levels, synergy_dims must be >= 1 and nuisance_dims >= 0")
        if any(not 1 <= k <= len(self.dims) for k in self.coarse_parties):
            raise InputError("coarse_parties must be 1-based party ids")
        if not 0.0 < self.test_fraction < 1.0:
            raise InputError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class GeneratorParams:
    """The means the generator drew; exposed for closed-form reference checks."""

    class_means: tuple[np.ndarray, ...]   # per party, (C, d_k), already scaled
    key_means: tuple[np.ndarray, ...]     # per party, (M, d_k), already scaled


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _key_rows(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    """Orthonormal key directions when ``d >= m``, random unit rows otherwise."""
    if d >= m:
        q, _ = np.linalg.qr(rng.standard_normal((d, m)))
        return q.T
    return _unit_rows(rng, m, d)


def _train_test(n: int, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def generate_synthetic_with_params(spec: SyntheticSpec) -> tuple[VerticalDataset, GeneratorParams]:
    spec.validate()
    rng = stream(spec.seed, "synthetic")
    n, c, m = spec.n, spec.n_classes, spec.synergy_levels
    labels = rng.permutation(np.arange(n) % c)

    keys = np.zeros((len(spec.dims), n), dtype=np.int64)
    if len(spec.dims) > 1:
        keys[1:] = rng.integers(0, m, size=(len(spec.dims) - 1, n))
    keys[0] = (labels - keys[1:].sum(axis=0)) % m

    rd = spec.confound_dims if spec.confound > 0 else 0
    z = rng.standard_normal((n, rd))

    blocks, cmeans, kmeans = [], [], []
    for k, (d, q) in enumerate(zip(spec.dims, spec.informativeness)):
        mu = spec.class_separation * q * _unit_rows(rng, c, d)
        if k + 1 in spec.coarse_parties:
            mu = mu[np.arange(c) // m]
        kd = spec.synergy_dims if spec.synergy > 0 else 0
        kappa = spec.synergy * _key_rows(rng, m, kd) if kd else np.zeros((m, 0))
        zd = rd if k > 0 else 0
        width = d + kd + zd + spec.nuisance_dims
        means = np.zeros((c, width))
        means[:, :d] = mu
        keymeans = np.zeros((m, width))
        keymeans[:, d:d + kd] = kappa
        x = means[labels] + keymeans[keys[k]] + spec.noise_std * rng.standard_normal((n, width))
        if rd and k == 0:
            x[:, :d] += spec.confound * z @ _unit_rows(rng, rd, d)
        elif rd:
            x[:, d + kd:d + kd + rd] += spec.confound_visibility * z
        blocks.append(x)
        cmeans.append(means)
        kmeans.append(keymeans)

    train, test = _train_test(n, spec.test_fraction, rng)
    bounds = tuple(np.cumsum([b.shape[1] for b in blocks]).tolist())
    ds = VerticalDataset(tuple(blocks), labels.astype(np.int64), c, bounds, train, test)
    return ds, GeneratorParams(tuple(cmeans), tuple(kmeans))


def generate_synthetic(spec: SyntheticSpec) -> VerticalDataset:
    return generate_synthetic_with_params(spec)[0]


def class_mean_accuracy(ds: VerticalDataset, params: GeneratorParams, party: int,
                        split: str = "test") -> float:
    """Accuracy of the nearest-class-mean rule on one party's block.

    Uses the generator's true class means (key offsets are marginalized by
    taking the nearest over all key values), so no learning is involved.
    """
    idx = ds.split(split)
    x = ds.party_features[party - 1][idx]
    mu = params.class_means[party - 1]
    kappa = params.key_means[party - 1]
    # distance to every (class, key) centre, min over keys
    centres = mu[:, None, :] + kappa[None, :, :]
    d2 = ((x[:, None, None, :] - centres[None]) ** 2).sum(axis=-1).min(axis=2)
    return float((d2.argmin(axis=1) == ds.labels[idx]).mean())


def vertical_split(features, boundaries: Sequence[int]) -> list[np.ndarray]:
    """Split columns into contiguous blocks ending at each boundary."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("features must be 2-D")
    b = list(boundaries)
    if not b or b[-1] != x.shape[1] or any(b2 <= b1 for b1, b2 in zip([0] + b, b)):
        raise InputError(f"boundaries {b} must be strictly increasing and end at {x.shape[1]}")
    starts = [0] + b[:-1]
    return [x[:, s:e].copy() for s, e in zip(starts, b)]


def load_tabular(path, label_column: str, boundaries: Sequence[int], *,
                 test_fraction: float = 0.25, seed: int = 0) -> VerticalDataset:
    """Read a comma-delimited numeric file with a header row.

    Feature columns keep their file order with the label column removed;
    ``boundaries`` index into that reduced column list. Labels may be any
    integers; they are remapped to ``0..C-1`` in sorted order. Columns are
    standardized with train-split statistics.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        if label_column not in header:
            raise ParseError(f"label column {label_column!r} not in header", row=1)
        rows = []
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(rec)}", row=r)
            vals = []
            for col, cell in enumerate(rec, start=1):
                cell = cell.strip()
                if not cell:
                    raise ParseError("missing value", row=r, col=col)
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=r, col=col) from None
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows")
    table = np.array(rows)
    li = header.index(label_column)
    raw_labels = table[:, li]
    if not np.all(raw_labels == np.round(raw_labels)):
        raise ParseError(f"label column {label_column!r} must hold integers")
    classes, labels = np.unique(raw_labels.astype(np.int64), return_inverse=True)
    feats = np.delete(table, li, axis=1)

    train, test = _train_test(len(rows), test_fraction, stream(seed, "tabular-split"))
    mean = feats[train].mean(axis=0)
    std = feats[train].std(axis=0)
    std[std == 0] = 1.0
    feats = (feats - mean) / std
    blocks = vertical_split(feats, boundaries)
    return VerticalDataset(tuple(blocks), labels.astype(np.int64), int(len(classes)),
                           tuple(boundaries), train, test)


@dataclass
class Batch:
    parties: list[np.ndarray]
    labels: np.ndarray
    indices: np.ndarray


def batches(ds: VerticalDataset, which: str, batch_size: int, seed: int, epoch: int,
            shuffle: bool = True) -> Iterator[Batch]:
    """Yield aligned mini-batches over one epoch; the short final batch is kept."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    idx = ds.split(which)
    if shuffle:
        idx = stream(seed, "batches", which, epoch).permutation(idx)
    for s in range(0, len(idx), batch_size):
        sel = idx[s:s + batch_size]
        parts, y = ds.rows(sel)
        yield Batch(parts, y, sel)
