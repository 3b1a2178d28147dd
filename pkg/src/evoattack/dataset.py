"""Labelled PPM datasets: ``labels.csv`` plus the images it references."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .errors import DatasetError
from .ppm import read_ppm
from .tensors import ImageTensor, argmax

LABELS_FILE = "labels.csv"


@dataclass(frozen=True)
class Entry:
    filename: str
    image: ImageTensor
    true_class: int
    target_class: Optional[int] = None


@dataclass(frozen=True)
class Dataset:
    root: Path
    entries: tuple
    num_classes: int

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def image_shape(self):
        return self.entries[0].image.shape if self.entries else None

    def check_classes(self, num_classes):
        """Verify every label and target fits a ``num_classes``-way classifier."""
        for entry in self.entries:
            for name, value in (("label", entry.true_class), ("target", entry.target_class)):
                if value is not None and value >= num_classes:
                    raise DatasetError(
                        f"{entry.filename}: {name} {value} out of range for a {num_classes}-class model"
                    )
        return self


def _parse_class(text, what, where):
    try:
        value = int(text)
    except ValueError:
        raise DatasetError(f"{where}: {what} {text!r} is not an integer") from None
    if value < 0:
        raise DatasetError(f"{where}: {what} {value} is negative")
    return value


def load_dataset(root, num_classes=None):
    """Read ``root/labels.csv`` (header ``filename,label[,target]``) and every image it names."""
    root = Path(root)
    labels_path = root / LABELS_FILE
    try:
        text = labels_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {labels_path}: {exc}") from exc

    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] not in (["filename", "label"], ["filename", "label", "target"]):
        raise DatasetError(f"{labels_path}:1: header must be 'filename,label[,target]'")
    has_target = len(rows[0]) == 3

    entries = []
    shape = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        where = f"{labels_path}:{lineno}"
        if len(row) != len(rows[0]):
            raise DatasetError(f"{where}: expected {len(rows[0])} fields, got {len(row)}")
        filename = row[0].strip()
        label = _parse_class(row[1].strip(), "label", where)
        target = None
        if has_target and row[2].strip():
            target = _parse_class(row[2].strip(), "target", where)
            if target == label:
                raise DatasetError(f"{where}: target equals true label ({label})")
        image_path = root / filename
        if not image_path.is_file():
            raise DatasetError(f"{where}: missing image file {image_path}")
        image = read_ppm(image_path)
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise DatasetError(f"{where}: image shape {image.shape} differs from {shape}")
        entries.append(Entry(filename, image, label, target))

    inferred = 1 + max((max(e.true_class, e.target_class or 0) for e in entries), default=0)
    dataset = Dataset(root, tuple(entries), num_classes if num_classes is not None else inferred)
    if num_classes is not None:
        dataset.check_classes(num_classes)
    return dataset


def filter_correctly_classified(dataset, oracle):
    """Keep the entries the oracle already labels correctly, in order.

    These classification calls are bookkeeping and are not charged to any
    attack's query budget.
    """
    kept = tuple(e for e in dataset.entries if argmax(oracle.classify(e.image)) == e.true_class)
    return replace(dataset, entries=kept)


def write_labels(root, rows):
    """Write ``labels.csv`` from ``(filename, label, target)`` tuples."""
    path = Path(root) / LABELS_FILE
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label", "target"])
        for filename, label, target in rows:
            writer.writerow([filename, label, "" if target is None else target])
    return path
