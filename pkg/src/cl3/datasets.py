"""Cohort synthesis, CSV loading, hold-out splitting, and increment schedules.

The synthetic cohort stands in for per-hospital image embeddings: two
Gaussian class clusters separated along a seeded direction, with a small
per-hospital mean offset as the non-IID knob. `noise_scale` is the expected
norm of a sample's noise vector (per-dimension sigma is noise/sqrt(dim)),
which keeps "separation >= 3 * noise" comfortably linearly separable at any
feature dimension.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .rng import Xoshiro256, derive
from .validation import check_features, check_fraction, check_labels

# Default per-hospital (healthy, covid) sample counts for the five-hospital
# cohort, plus a disjoint public pretraining shard and a 30-sample global
# test pool.
DEFAULT_HOSPITAL_COUNTS: tuple[tuple[int, int], ...] = (
    (216, 237),
    (220, 213),
    (258, 198),
    (265, 237),
    (219, 237),
)

DRIFT_MEAN_SHIFT = "mean_shift"
DRIFT_LABEL_FLIP = "label_flip"

# Substream tags for deriving independent generators from the cohort seed.
_TAG_DIRECTION = 1
_TAG_OFFSET = 2
_TAG_HOSPITAL = 3
_TAG_PUBLIC = 4
_TAG_TEST = 5


@dataclass(frozen=True)
class DatasetShard:
    """Labeled feature vectors belonging to one participant."""

    hospital_id: int
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64; 0 healthy, 1 covid

    def __post_init__(self):
        X = check_features(self.features, allow_empty=True)
        y = check_labels(self.labels, n_samples=X.shape[0])
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "DatasetShard":
        idx = np.asarray(indices, dtype=np.int64)
        return DatasetShard(self.hospital_id, self.features[idx].copy(), self.labels[idx].copy())


@dataclass(frozen=True)
class DriftInjection:
    """Distribution change applied to one hospital's deliveries from a given increment on."""

    hospital_id: int
    increment: int
    kind: str = DRIFT_MEAN_SHIFT
    magnitude: float = 3.0

    def __post_init__(self):
        if self.kind not in (DRIFT_MEAN_SHIFT, DRIFT_LABEL_FLIP):
            raise ValidationError(f"unknown drift kind {self.kind!r}")
        if self.increment < 1:
            raise ValidationError("drift increment must be >= 1")
        if self.kind == DRIFT_MEAN_SHIFT and self.magnitude <= 0:
            raise ValidationError("mean-shift magnitude must be positive")


@dataclass(frozen=True)
class CohortSpec:
    """Generator parameters for the synthetic multi-hospital cohort."""

    hospital_counts: tuple[tuple[int, int], ...] = DEFAULT_HOSPITAL_COUNTS
    feature_dim: int = 32
    class_separation: float = 3.0
    hospital_offset_scale: float = 0.5
    noise_scale: float = 1.0
    public_count: int = 400
    test_count: int = 30
    seed: int = 0
    drift: DriftInjection | None = None

    def __post_init__(self):
        counts = tuple((int(h), int(c)) for h, c in self.hospital_counts)
        object.__setattr__(self, "hospital_counts", counts)
        if not counts:
            raise ValidationError("cohort needs at least one hospital")
        if any(h < 0 or c < 0 for h, c in counts):
            raise ValidationError("per-class counts must be non-negative")
        if all(h + c == 0 for h, c in counts):
            raise ValidationError("cohort has zero total samples")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.class_separation <= 0:
            raise ValidationError("class_separation must be positive")
        if self.noise_scale <= 0:
            raise ValidationError("noise_scale must be positive")
        if self.hospital_offset_scale < 0:
            raise ValidationError("hospital_offset_scale must be non-negative")
        if self.public_count < 0 or self.test_count < 0:
            raise ValidationError("public_count and test_count must be non-negative")

    def to_dict(self) -> dict:
        out = {
            "hospital_counts": [list(pair) for pair in self.hospital_counts],
            "feature_dim": self.feature_dim,
            "class_separation": self.class_separation,
            "hospital_offset_scale": self.hospital_offset_scale,
            "noise_scale": self.noise_scale,
            "public_count": self.public_count,
            "test_count": self.test_count,
            "data_seed": self.seed,
        }
        if self.drift is not None:
            out.update(
                {
                    "drift_hospital": self.drift.hospital_id,
                    "drift_increment": self.drift.increment,
                    "drift_kind": self.drift.kind,
                    "drift_magnitude": self.drift.magnitude,
                }
            )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CohortSpec":
        data = dict(data)
        drift = None
        if data.get("drift_hospital") is not None:
            drift = DriftInjection(
                hospital_id=int(data.pop("drift_hospital")),
                increment=int(data.pop("drift_increment")),
                kind=data.pop("drift_kind", DRIFT_MEAN_SHIFT),
                magnitude=float(data.pop("drift_magnitude", 3.0)),
            )
        else:
            for key in ("drift_hospital", "drift_increment", "drift_kind", "drift_magnitude"):
                data.pop(key, None)
        kwargs = {}
        rename = {"data_seed": "seed"}
        fields = {
            "hospital_counts",
            "feature_dim",
            "class_separation",
            "hospital_offset_scale",
            "noise_scale",
            "public_count",
            "test_count",
            "seed",
        }
        for key, value in data.items():
            name = rename.get(key, key)
            if name not in fields:
                raise ValidationError(f"unknown cohort key {key!r}")
            if name == "hospital_counts":
                value = tuple(tuple(int(x) for x in pair) for pair in value)
            kwargs[name] = value
        return cls(drift=drift, **kwargs)


@dataclass(frozen=True)
class Cohort:
    """Synthesized or loaded data: hospital shards, public shard, global test set."""

    hospitals: tuple[DatasetShard, ...]
    public: DatasetShard
    test: DatasetShard
    spec: CohortSpec | None = None
    drift_shift: np.ndarray | None = None

    def hospital(self, hospital_id: int) -> DatasetShard:
        for shard in self.hospitals:
            if shard.hospital_id == hospital_id:
                return shard
        raise ValidationError(f"no hospital with id {hospital_id}")


@dataclass(frozen=True)
class IncrementSchedule:
    """Disjoint index sets partitioning a shard, one per arriving increment."""

    parts: tuple[np.ndarray, ...]

    @property
    def increment_count(self) -> int:
        return len(self.parts)


def _sample_block(gen: Xoshiro256, n: int, center: np.ndarray, sigma: float) -> np.ndarray:
    d = center.shape[0]
    rows = np.empty((n, d), dtype=np.float64)
    for i in range(n):
        rows[i] = center + sigma * gen.normals(d)
    return rows


def _unit_vector(gen: Xoshiro256, d: int) -> np.ndarray:
    v = gen.normals(d)
    norm = float(np.linalg.norm(v))
    while norm < 1e-12:  # vanishing draws are astronomically unlikely
        v = gen.normals(d)
        norm = float(np.linalg.norm(v))
    return v / norm


def _make_shard(
    gen: Xoshiro256,
    hospital_id: int,
    healthy: int,
    covid: int,
    mu0: np.ndarray,
    mu1: np.ndarray,
    sigma: float,
) -> DatasetShard:
    X = np.vstack(
        [
            _sample_block(gen, healthy, mu0, sigma),
            _sample_block(gen, covid, mu1, sigma),
        ]
    )
    y = np.concatenate([np.zeros(healthy, dtype=np.int64), np.ones(covid, dtype=np.int64)])
    order = gen.permutation(healthy + covid)
    return DatasetShard(hospital_id, X[order], y[order])


def synthesize_cohort(spec: CohortSpec) -> Cohort:
    """Generate hospital shards, a disjoint public shard, and the global test pool."""
    d = spec.feature_dim
    sigma = spec.noise_scale / math.sqrt(d)
    direction = _unit_vector(Xoshiro256(derive(spec.seed, _TAG_DIRECTION)), d)
    mu0 = -0.5 * spec.class_separation * direction
    mu1 = +0.5 * spec.class_separation * direction

    hospitals = []
    for idx, (healthy, covid) in enumerate(spec.hospital_counts):
        hid = idx + 1
        offset_gen = Xoshiro256(derive(spec.seed, _TAG_OFFSET, hid))
        offset = spec.hospital_offset_scale * _unit_vector(offset_gen, d)
        gen = Xoshiro256(derive(spec.seed, _TAG_HOSPITAL, hid))
        hospitals.append(_make_shard(gen, hid, healthy, covid, mu0 + offset, mu1 + offset, sigma))

    public_gen = Xoshiro256(derive(spec.seed, _TAG_PUBLIC))
    pub_covid = spec.public_count // 2
    public = _make_shard(public_gen, 0, spec.public_count - pub_covid, pub_covid, mu0, mu1, sigma)

    test_gen = Xoshiro256(derive(spec.seed, _TAG_TEST))
    test_covid = spec.test_count // 2
    test = _make_shard(test_gen, 0, spec.test_count - test_covid, test_covid, mu0, mu1, sigma)

    drift_shift = None
    if spec.drift is not None and spec.drift.kind == DRIFT_MEAN_SHIFT:
        # Shift along the class-separation axis: the direction that actually
        # moves samples relative to the learned decision boundary.
        drift_shift = spec.drift.magnitude * spec.noise_scale * direction
    return Cohort(tuple(hospitals), public, test, spec, drift_shift)


def delivered_increment(
    cohort: Cohort, shard: DatasetShard, schedule: IncrementSchedule, increment: int
) -> tuple[np.ndarray, np.ndarray]:
    """Feature/label arrays for one arriving increment, drift applied if configured."""
    if not 1 <= increment <= schedule.increment_count:
        raise ValidationError(
            f"increment {increment} out of range 1..{schedule.increment_count}"
        )
    idx = schedule.parts[increment - 1]
    X = shard.features[idx].copy()
    y = shard.labels[idx].copy()
    drift = cohort.spec.drift if cohort.spec is not None else None
    if (
        drift is not None
        and drift.hospital_id == shard.hospital_id
        and increment >= drift.increment
    ):
        if drift.kind == DRIFT_MEAN_SHIFT:
            X = X + cohort.drift_shift
        else:
            y = 1 - y
    return X, y


def split_holdout(shard: DatasetShard, test_fraction: float, seed: int) -> tuple[DatasetShard, DatasetShard]:
    """Seeded, class-stratified train/test split.

    Per-class test counts follow the largest-remainder rule so the total
    matches round(n * fraction) and each class stays within one sample of
    its exact proportion.
    """
    check_fraction("test_fraction", test_fraction)
    n = len(shard)
    if n < 2:
        raise ValidationError(f"need at least 2 samples to split, got {n}")
    gen = Xoshiro256(seed)
    class_indices = [np.where(shard.labels == c)[0] for c in (0, 1)]
    total_test = int(math.floor(n * test_fraction + 0.5))
    total_test = min(max(total_test, 1), n - 1)
    exact = [len(idx) * test_fraction for idx in class_indices]
    counts = [int(math.floor(x)) for x in exact]
    remainders = [x - c for x, c in zip(exact, counts)]
    while sum(counts) < total_test:
        # Ties break toward the lower class index.
        c = max(range(len(counts)), key=lambda i: (remainders[i], -i))
        counts[c] += 1
        remainders[c] = -1.0
    while sum(counts) > total_test:
        candidates = [i for i in range(len(counts)) if counts[i] > 0]
        c = min(candidates, key=lambda i: (remainders[i], -i))
        counts[c] -= 1
        remainders[c] = 2.0
    test_idx: list[int] = []
    for idx, k in zip(class_indices, counts):
        if k > len(idx):
            raise ValidationError("test fraction leaves a class without training samples")
        pool = list(idx)
        gen.shuffle(pool)
        test_idx.extend(pool[:k])
    test_set = set(test_idx)
    train_idx = [i for i in range(n) if i not in test_set]
    if not train_idx or not test_idx:
        raise ValidationError("degenerate split: empty train or test side")
    return shard.subset(sorted(train_idx)), shard.subset(sorted(test_idx))


def schedule_increments(shard: DatasetShard, n: int, seed: int) -> IncrementSchedule:
    """Seeded partition of a shard into n near-equal disjoint increments."""
    if n < 1:
        raise ValidationError(f"increment count must be >= 1, got {n}")
    size = len(shard)
    if n > size:
        raise ValidationError(f"cannot split {size} samples into {n} increments")
    gen = Xoshiro256(seed)
    perm = gen.permutation(size)
    base, extra = divmod(size, n)
    parts = []
    offset = 0
    for i in range(n):
        take = base + (1 if i < extra else 0)
        part = np.sort(perm[offset : offset + take])
        parts.append(part)
        offset += take
    return IncrementSchedule(tuple(parts))


# -- CSV interchange ---------------------------------------------------------

def save_csv(shard: DatasetShard, path) -> None:
    """Write a shard with header label,f0,...,f{d-1}; floats keep full precision."""
    d = shard.feature_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(d)])
        for label, row in zip(shard.labels, shard.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, hospital_id: int = 0) -> DatasetShard:
    """Parse a shard CSV; malformed rows are reported with their line number."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, expected a header row") from None
        if not header or header[0] != "label" or len(header) < 2:
            raise ValidationError(f"{path}: header must be label,f0,...,f{{d-1}}")
        d = len(header) - 1
        expected = ["label"] + [f"f{i}" for i in range(d)]
        if header != expected:
            raise ValidationError(f"{path}: header must be label,f0,...,f{d - 1}")
        features: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValidationError(
                    f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}"
                )
            if row[0] not in ("0", "1"):
                raise ValidationError(
                    f"{path}: line {lineno}: label must be 0 or 1, got {row[0]!r}"
                )
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{path}: line {lineno}: non-finite feature value")
            labels.append(int(row[0]))
            features.append(values)
    if not features:
        raise ValidationError(f"{path}: no data rows")
    return DatasetShard(
        hospital_id, np.array(features, dtype=np.float64), np.array(labels, dtype=np.int64)
    )


def save_cohort_dir(cohort: Cohort, out_dir) -> list[Path]:
    """Write hospital_<id>.csv, public.csv, and test.csv into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for shard in cohort.hospitals:
        p = out / f"hospital_{shard.hospital_id}.csv"
        save_csv(shard, p)
        written.append(p)
    for name, shard in (("public.csv", cohort.public), ("test.csv", cohort.test)):
        p = out / name
        save_csv(shard, p)
        written.append(p)
    if cohort.spec is not None:
        p = out / "cohort.json"
        p.write_text(json.dumps(cohort.spec.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written


def load_cohort_dir(data_dir) -> Cohort:
    """Load a cohort previously written by save_cohort_dir."""
    root = Path(data_dir)
    if not root.is_dir():
        raise ValidationError(f"{root}: not a directory")
    hospital_files = sorted(root.glob("hospital_*.csv"))
    if not hospital_files:
        raise ValidationError(f"{root}: no hospital_<id>.csv files found")
    hospitals = []
    for p in hospital_files:
        stem = p.stem.split("_", 1)[1]
        try:
            hid = int(stem)
        except ValueError:
            raise ValidationError(f"{p}: hospital file name must be hospital_<id>.csv") from None
        hospitals.append(load_csv(p, hospital_id=hid))
    hospitals.sort(key=lambda s: s.hospital_id)
    public = load_csv(root / "public.csv", hospital_id=0)
    test = load_csv(root / "test.csv", hospital_id=0)
    dims = {s.feature_dim for s in hospitals} | {public.feature_dim, test.feature_dim}
    if len(dims) != 1:
        raise ValidationError(f"{root}: inconsistent feature dims across files: {sorted(dims)}")
    return Cohort(tuple(hospitals), public, test, None, None)
