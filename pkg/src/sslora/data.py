"""Synthetic multi-domain classification data and its on-disk format.

Every domain shares the same class means; domain ``i`` sees them through its
own orthogonal map and offset::

    x = Q_i (mu_c + eps) + b_i,    eps ~ N(0, sigma^2 I)
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SsloraError
from .persist import atomic_write_text, save_json


class DatasetFormatError(SsloraError, ValueError):
    pass


class DatasetHeaderError(DatasetFormatError):
    pass


class DatasetDimensionError(DatasetFormatError):
    pass


@dataclass
class DomainDatasetSpec:
    num_domains: int = 3
    num_classes: int = 5
    input_dim: int = 64
    n_train: int = 100
    n_val: int = 50
    noise_std: float = 1.5
    mean_scale: float = 1.0
    bias_scale: float = 1.0
    identity_transforms: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ConfigurationError("noise_std must be positive")
        if min(self.num_domains, self.num_classes, self.input_dim) < 1:
            raise ConfigurationError("num_domains, num_classes and input_dim must be >= 1")
        if self.n_train < 0 or self.n_val < 0:
            raise ConfigurationError("sample counts must be non-negative")


@dataclass
class Dataset:
    """Samples of one domain, stored as rows (n x input_dim)."""

    domain: int
    x: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class SyntheticTask:
    spec: DomainDatasetSpec
    means: np.ndarray          # C x input_dim
    rotations: list[np.ndarray]
    biases: list[np.ndarray]
    train: list[Dataset]
    val: list[Dataset]


def _stream(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """QR of a Gaussian matrix with the diagonal of R forced positive."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate(spec: DomainDatasetSpec) -> SyntheticTask:
    dim = spec.input_dim
    means = _stream(spec.seed, 0).standard_normal((spec.num_classes, dim)) * spec.mean_scale
    rotations, biases = [], []
    for i in range(spec.num_domains):
        if spec.identity_transforms:
            rotations.append(np.eye(dim))
            biases.append(np.zeros(dim))
        else:
            rng = _stream(spec.seed, 1, i)
            rotations.append(random_orthogonal(rng, dim))
            biases.append(rng.standard_normal(dim) * spec.bias_scale)

    def sample(domain: int, split: int, n_per_class: int) -> Dataset:
        labels = np.repeat(np.arange(spec.num_classes), n_per_class)
        rng = _stream(spec.seed, 2, domain, split)
        eps = rng.standard_normal((labels.size, dim)) * spec.noise_std
        x = (means[labels] + eps) @ rotations[domain].T + biases[domain]
        return Dataset(domain=domain, x=x, labels=labels)

    train = [sample(i, 0, spec.n_train) for i in range(spec.num_domains)]
    val = [sample(i, 1, spec.n_val) for i in range(spec.num_domains)]
    return SyntheticTask(spec, means, rotations, biases, train, val)


def _csv_name(domain: int, split: str) -> str:
    return f"domain{domain}_{split}.csv"


def _csv_text(ds: Dataset) -> str:
    dim = ds.x.shape[1]
    lines = [",".join(["domain", "label"] + [f"f{j}" for j in range(dim)])]
    for label, row in zip(ds.labels, ds.x):
        lines.append(",".join([str(ds.domain), str(int(label))]
                              + [format(float(v), ".17g") for v in row]))
    return "\n".join(lines) + "\n"


def save_task(task: SyntheticTask, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    spec = task.spec
    manifest = {
        "D": spec.num_domains,
        "C": spec.num_classes,
        "input_dim": spec.input_dim,
        "counts": {"train": spec.n_train, "val": spec.n_val},
        "seed": spec.seed,
        "sigma": spec.noise_std,
        "generator": asdict(spec),
    }
    for split, sets in (("train", task.train), ("val", task.val)):
        for ds in sets:
            atomic_write_text(out_dir / _csv_name(ds.domain, split), _csv_text(ds))
    save_json(out_dir / "manifest.json", manifest)


def _read_csv(path: Path, domain: int, dim: int, num_classes: int) -> Dataset:
    expected = ["domain", "label"] + [f"f{j}" for j in range(dim)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DatasetHeaderError(f"{path.name}: malformed header")
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(expected):
                raise DatasetDimensionError(
                    f"{path.name}:{lineno}: expected {len(expected)} fields, got {len(rec)}")
            try:
                dom, label = int(rec[0]), int(rec[1])
                feats = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: {exc}") from exc
            if dom != domain:
                raise DatasetFormatError(f"{path.name}:{lineno}: domain {dom} != {domain}")
            if not 0 <= label < num_classes:
                raise DatasetFormatError(f"{path.name}:{lineno}: label {label} out of range")
            labels.append(label)
            rows.append(feats)
    x = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return Dataset(domain=domain, x=x, labels=np.array(labels, dtype=np.int64))


def load_task(data_dir: str | Path) -> tuple[dict, list[Dataset], list[Dataset]]:
    """Read ``manifest.json`` and all split CSVs, cross-checking sample counts.

    Returns:
        ``(manifest, train_sets, val_sets)``.
    """
    data_dir = Path(data_dir)
    try:
        manifest = json.loads((data_dir / "manifest.json").read_text())
        n_dom, n_cls, dim = manifest["D"], manifest["C"], manifest["input_dim"]
        counts = manifest["counts"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetHeaderError(f"unreadable manifest in {data_dir}: {exc}") from exc
    sets = {}
    for split in ("train", "val"):
        sets[split] = []
        for i in range(n_dom):
            path = data_dir / _csv_name(i, split)
            if not path.exists():
                raise DatasetFormatError(f"missing {path}")
            ds = _read_csv(path, i, dim, n_cls)
            want = n_cls * counts[split]
            if len(ds) != want:
                raise DatasetDimensionError(f"{path.name}: {len(ds)} rows, manifest says {want}")
            per_class = np.bincount(ds.labels, minlength=n_cls)
            if np.any(per_class != counts[split]):
                raise DatasetDimensionError(f"{path.name}: unbalanced classes {per_class.tolist()}")
            sets[split].append(ds)
    return manifest, sets["train"], sets["val"]
