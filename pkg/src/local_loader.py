# src/local_loader.py
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, Optional, Tuple

import numpy as np

from .save_data import CheckpointError, read_dataset_file, write_dataset_file

IMAGE_MAGIC: int = 2051
LABEL_MAGIC: int = 2049
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
SYNTHETIC_FILES = {"train": "train.nvcd", "test": "test.nvcd"}


class DataMissingError(FileNotFoundError): pass


class DataFormatError(ValueError): pass


class IdxFormatError(DataFormatError): pass


class IdxMagicError(IdxFormatError): pass


class IdxTruncatedError(IdxFormatError): pass


class IdxCountMismatchError(IdxFormatError): pass


class BatchSizeError(ValueError): pass


@dataclass
class Dataset:
    """
    Samples (n×input_dim, float32) with optional integer labels.

    Labels are carried for evaluation only; the training losses never read them
    (except the explicit supervised metric variant).
    """
    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    split: str = "train"
    kind: str = "mnist"

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ValueError(f"dataset samples must be a non-empty n×k matrix, got shape {self.samples.shape}")
        if self.labels is not None and len(self.labels) != self.samples.shape[0]:
            raise IdxCountMismatchError(
                f"{self.samples.shape[0]} samples but {len(self.labels)} labels in split '{self.split}'")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]


def _open(path: Path) -> BinaryIO:
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _resolve(path: Path) -> Path:
    """Accepts the plain file name or its ``.gz`` variant."""
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise DataMissingError(f"Datei '{path}' (oder '{gz.name}') nicht gefunden.")


def _read_idx(path: Path, expected_magic: int) -> Tuple[Tuple[int, ...], bytes]:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxTruncatedError(f"'{path.name}': header truncated ({len(raw)} bytes)")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise IdxMagicError(f"'{path.name}': wrong magic {magic:#010x}, expected {expected_magic:#010x}")
    ndims = magic & 0xFF
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise IdxTruncatedError(f"'{path.name}': dimension header truncated")
    dims = (count,) + struct.unpack(f">{ndims - 1}I", raw[8:header])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = raw[header:]
    if len(payload) < expected:
        raise IdxTruncatedError(f"'{path.name}': payload truncated ({len(payload)} of {expected} bytes)")
    return dims, payload[:expected]


def load_idx(images_path: Path, labels_path: Path, split: str = "train") -> Dataset:
    """
    Loads an MNIST image/label pair in IDX format.

    Pixels are scaled to [0, 1] by /255 and flattened to ``n×(rows*cols)``. Files whose
    name ends in ``.gz`` are decompressed transparently.

    :param images_path: IDX3 image file (magic 2051).
    :type images_path: Path
    :param labels_path: IDX1 label file (magic 2049).
    :type labels_path: Path
    :param split: ``train`` or ``test``.
    :type split: str
    :raises DataMissingError: If a file does not exist.
    :raises IdxMagicError: On a wrong magic number.
    :raises IdxTruncatedError: If a file ends before its declared payload.
    :raises IdxCountMismatchError: If image and label counts differ.
    :return: The loaded dataset.
    :rtype: Dataset
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    for path in (images_path, labels_path):
        if not path.exists():
            raise DataMissingError(f"Datei '{path}' nicht gefunden.")
    print(f"Lade IDX-Daten ({split}) aus '{images_path.name}' und '{labels_path.name}'...")
    image_dims, pixels = _read_idx(images_path, IMAGE_MAGIC)
    label_dims, label_bytes = _read_idx(labels_path, LABEL_MAGIC)
    if image_dims[0] != label_dims[0]:
        raise IdxCountMismatchError(f"{image_dims[0]} images but {label_dims[0]} labels")

    n = image_dims[0]
    width = int(np.prod(image_dims[1:], dtype=np.int64))
    samples = (np.frombuffer(pixels, dtype=np.uint8).reshape(n, width) / 255.0).astype(np.float32)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    print(f"{n} Samples mit {width} Merkmalen geladen.")
    return Dataset(samples, labels, split, "mnist")


def save_dataset(dataset: Dataset, path: Path):
    """Writes a dataset in the tensor-section container (magic ``NVCD``)."""
    meta = f"split = {dataset.split}\nkind = {dataset.kind}\n"
    write_dataset_file(Path(path), dataset.samples, dataset.labels, meta)


def load_dataset(path: Path, split: Optional[str] = None) -> Dataset:
    """
    Loads a dataset file written by :func:`save_dataset`.

    :param path: ``.nvcd`` file.
    :type path: Path
    :param split: Overrides the split stored in the file.
    :type split: Optional[str]
    :raises DataMissingError: If the file does not exist.
    :raises DataFormatError: If the container is corrupt.
    :rtype: Dataset
    """
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"Datei '{path}' nicht gefunden.")
    try:
        samples, labels, meta = read_dataset_file(path)
    except CheckpointError as e:
        raise DataFormatError(f"corrupt dataset file: {e}")
    fields = dict(line.split(" = ", 1) for line in meta.splitlines() if " = " in line)
    return Dataset(samples, labels, split or fields.get("split", "train"), fields.get("kind", "synthetic"))


def load_dataset_dir(data_dir: Path) -> Tuple[Dataset, Dataset]:
    """
    Resolves the train and test split of a data directory.

    ``train.nvcd``/``test.nvcd`` take precedence; otherwise the four MNIST IDX files
    (each optionally ``.gz``) are loaded.

    :param data_dir: Directory holding the dataset files.
    :type data_dir: Path
    :raises DataMissingError: If neither layout is complete.
    :return: ``(train, test)``
    :rtype: Tuple[Dataset, Dataset]
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataMissingError(f"Datenverzeichnis '{data_dir}' nicht gefunden.")
    synthetic = {split: data_dir / name for split, name in SYNTHETIC_FILES.items()}
    if all(p.exists() for p in synthetic.values()):
        print(f"Lade synthetische Daten aus '{data_dir}'...")
        return load_dataset(synthetic["train"], "train"), load_dataset(synthetic["test"], "test")

    splits = []
    for split, (images, labels) in MNIST_FILES.items():
        splits.append(load_idx(_resolve(data_dir / images), _resolve(data_dir / labels), split))
    return splits[0], splits[1]


class BatchIterator:
    """
    One epoch of mini-batches in a seeded order.

    The permutation depends only on ``(seed, epoch)``; the last short batch is kept.
    """

    def __init__(self, dataset: Dataset, batch_size: int, epoch: int, seed: int, metric_learning: bool = False):
        if batch_size < 1:
            raise BatchSizeError(f"batch_size must be >= 1, got {batch_size}")
        if metric_learning and batch_size < 2:
            raise BatchSizeError(f"metric learning needs batch_size >= 2 (pairs), got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.epoch = epoch
        self.seed = seed
        self.order = np.random.default_rng([seed, 3, epoch]).permutation(len(dataset))

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, Optional[np.ndarray]]]:
        for start in range(0, len(self.order), self.batch_size):
            index = self.order[start:start + self.batch_size]
            labels = None if self.dataset.labels is None else self.dataset.labels[index]
            yield self.dataset.samples[index], labels


def batches(dataset: Dataset, batch_size: int, epoch: int, seed: int,
            metric_learning: bool = False) -> BatchIterator:
    return BatchIterator(dataset, batch_size, epoch, seed, metric_learning)
