"""Dataset bundles: on-disk format, validation, the synthetic generator,
and split management.

A bundle directory holds four UTF-8 / LF files:
  features.csv  one node per row, comma-separated decimals
  labels.csv    one integer class per row
  split.json    {"train": [...], "val": [...], "test": [...]}
  edges.tsv     optional, two tab-separated 0-based indices per line
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError


@dataclass
class DatasetBundle:
    name: str
    x: np.ndarray          # N x D features
    y: np.ndarray          # N class indices in [0, C)
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    edges: np.ndarray | None = None   # E x 2 or None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.size else 0

    def validate(self) -> "DatasetBundle":
        n = self.n
        if self.y.shape != (n,):
            raise IngestionError(f"{self.name}: {n} feature rows but {self.y.shape[0]} labels")
        if self.y.size and self.y.min() < 0:
            raise IngestionError(f"{self.name}: negative label at row {int(np.argmin(self.y))}")
        if self.train.size == 0:
            raise IngestionError(f"{self.name}: train split is empty")
        for part_name, part in (("train", self.train), ("val", self.val), ("test", self.test)):
            if part.size and (part.min() < 0 or part.max() >= n):
                raise IngestionError(f"{self.name}: {part_name} split index out of range")
            if np.unique(part).size != part.size:
                raise IngestionError(f"{self.name}: {part_name} split has duplicate indices")
        combined = np.concatenate([self.train, self.val, self.test])
        if np.unique(combined).size != combined.size:
            raise IngestionError(f"{self.name}: splits overlap")
        missing = set(range(self.num_classes)) - set(self.y[self.train].tolist())
        if missing:
            raise IngestionError(
                f"{self.name}: classes {sorted(missing)} absent from the train split"
            )
        if self.edges is not None and self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise IngestionError(f"{self.name}: edge endpoint out of range")
        return self


@dataclass
class SyntheticSpec:
    classes: int = 4
    per_class: int = 1000
    dim: int = 200
    labeled_per_class: int = 4
    separation: float = 4.0
    seed: int = 0
    val_per_class: int = field(default=100, repr=False)

    def __post_init__(self):
        if self.labeled_per_class < 1:
            raise ConfigError("labeled_per_class must be >= 1")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.dim < self.classes:
            raise ConfigError(
                f"dim={self.dim} too small to place {self.classes} orthogonal class means"
            )
        if self.per_class < self.labeled_per_class + self.val_per_class:
            raise ConfigError(
                f"per_class={self.per_class} cannot cover {self.labeled_per_class} train"
                f" + {self.val_per_class} val rows"
            )


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Isotropic Gaussian blobs, one class mean per coordinate axis.

    Class c is N(separation * e_c, I).  Per class the first
    labeled_per_class rows are train, the next val_per_class are val, the
    remainder test.  No edges: the prior falls back to all-ones.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.classes * spec.per_class
    x = rng.standard_normal((n, spec.dim))
    y = np.repeat(np.arange(spec.classes), spec.per_class)
    for c in range(spec.classes):
        x[y == c, c] += spec.separation
    train, val, test = [], [], []
    for c in range(spec.classes):
        rows = np.arange(c * spec.per_class, (c + 1) * spec.per_class)
        train.extend(rows[: spec.labeled_per_class])
        val.extend(rows[spec.labeled_per_class : spec.labeled_per_class + spec.val_per_class])
        test.extend(rows[spec.labeled_per_class + spec.val_per_class :])
    return DatasetBundle(
        name=f"synthetic-{spec.classes}x{spec.per_class}",
        x=x,
        y=y,
        train=np.array(train, dtype=np.int64),
        val=np.array(val, dtype=np.int64),
        test=np.array(test, dtype=np.int64),
        edges=None,
    ).validate()


def row_normalize_features(x: np.ndarray) -> np.ndarray:
    """Divide each row by its L1 norm; zero rows pass through unchanged."""
    norms = np.abs(x).sum(axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None]


def nearest_class_mean_accuracy(x: np.ndarray, y: np.ndarray) -> float:
    """Fully supervised nearest-class-mean score, the separability oracle."""
    classes = np.unique(y)
    means = np.stack([x[y == c].mean(axis=0) for c in classes])
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d2, axis=1)]
    return float((pred == y).mean())


def subsample_splits(
    bundle: DatasetBundle, train_n: int, val_n: int, test_n: int, seed: int
) -> DatasetBundle:
    """Fresh class-balanced splits of the requested sizes (within one per
    class), drawn without replacement over the whole node set."""
    if train_n + val_n + test_n > bundle.n:
        raise ConfigError(
            f"requested {train_n + val_n + test_n} split rows but bundle has {bundle.n}"
        )
    c = bundle.num_classes
    rng = np.random.default_rng(seed)
    per_class = {k: rng.permutation(np.flatnonzero(bundle.y == k)) for k in range(c)}
    cursor = {k: 0 for k in range(c)}

    def quotas(total: int) -> list[int]:
        base, rem = divmod(total, c)
        return [base + (1 if k < rem else 0) for k in range(c)]

    def draw(total: int) -> np.ndarray:
        out = []
        for k, q in enumerate(quotas(total)):
            pool = per_class[k]
            if cursor[k] + q > pool.size:
                raise ConfigError(
                    f"class {k} has {pool.size} rows, cannot satisfy balanced splits"
                )
            out.append(pool[cursor[k] : cursor[k] + q])
            cursor[k] += q
        return np.sort(np.concatenate(out))

    train, val, test = draw(train_n), draw(val_n), draw(test_n)
    return DatasetBundle(
        name=bundle.name, x=bundle.x, y=bundle.y,
        train=train, val=val, test=test, edges=bundle.edges,
    ).validate()


# ---------------------------------------------------------------------------
# on-disk format


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    text = path.read_text(encoding="utf-8")
    return [ln for ln in text.split("\n") if ln != ""]


def load_bundle(directory) -> DatasetBundle:
    """Parse and validate a bundle directory; row i of features.csv is node i."""
    directory = Path(directory)
    feat_path = directory / "features.csv"
    rows = []
    width = None
    for lineno, line in enumerate(_read_lines(feat_path), start=1):
        parts = line.split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise IngestionError(
                f"{feat_path}:{lineno}: expected {width} columns, found {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise IngestionError(f"{feat_path}:{lineno}: {exc}") from exc
    x = np.array(rows)

    label_path = directory / "labels.csv"
    labels = []
    for lineno, line in enumerate(_read_lines(label_path), start=1):
        try:
            labels.append(int(line.strip()))
        except ValueError as exc:
            raise IngestionError(f"{label_path}:{lineno}: {exc}") from exc
    y = np.array(labels, dtype=np.int64)

    split_path = directory / "split.json"
    if not split_path.is_file():
        raise IngestionError(f"missing file: {split_path}")
    try:
        split = json.loads(split_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{split_path}: {exc}") from exc
    for key in ("train", "val", "test"):
        if key not in split:
            raise IngestionError(f"{split_path}: missing key {key!r}")

    edge_path = directory / "edges.tsv"
    edges = None
    if edge_path.is_file():
        pairs = []
        for lineno, line in enumerate(_read_lines(edge_path), start=1):
            parts = line.split("\t")
            if len(parts) != 2:
                raise IngestionError(f"{edge_path}:{lineno}: expected two columns")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise IngestionError(f"{edge_path}:{lineno}: {exc}") from exc
        edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    return DatasetBundle(
        name=directory.name,
        x=x,
        y=y,
        train=np.array(split["train"], dtype=np.int64),
        val=np.array(split["val"], dtype=np.int64),
        test=np.array(split["test"], dtype=np.int64),
        edges=edges,
    ).validate()


def save_bundle(bundle: DatasetBundle, directory) -> None:
    """Write the four bundle files.  Floats use shortest round-trip repr so
    save -> load is the identity."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in bundle.x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(directory / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        for v in bundle.y:
            fh.write(f"{int(v)}\n")
    split = {
        "train": bundle.train.tolist(),
        "val": bundle.val.tolist(),
        "test": bundle.test.tolist(),
    }
    with open(directory / "split.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(split, fh)
        fh.write("\n")
    if bundle.edges is not None:
        with open(directory / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for i, j in bundle.edges:
                fh.write(f"{int(i)}\t{int(j)}\n")
