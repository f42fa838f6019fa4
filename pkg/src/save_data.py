# src/save_data.py
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

CHECKPOINT_MAGIC: bytes = b"NVCK"
DATASET_MAGIC: bytes = b"NVCD"
FORMAT_VERSION: int = 1


class CheckpointError(Exception): pass


@dataclass
class Checkpoint:
    """Decoded container: the config snapshot plus the named tensor sections in file order."""
    config_text: str
    sections: Dict[str, np.ndarray] = field(default_factory=dict)


class _Reader:
    """
    Cursor over the raw bytes.

    Every truncation reads "unexpected end of section"; ``where`` says which part (header,
    config snapshot or a tensor section) was cut off.
    """

    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, where: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"unexpected end of section ({where}) at byte {len(self.raw)}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, where: str) -> int:
        return struct.unpack("<I", self.take(4, where))[0]


class TensorArchive:
    """
    Writes the binary tensor-section container used for checkpoints and dataset files.

    Layout (all integers little-endian u32): 4-byte magic, format version, config text
    (length + UTF-8), section count, then per section name length, name, rank, dims and the
    float32 payload. Sections are collected in memory and the file is replaced atomically
    when the ``with`` block exits without an error, so an interrupted write never leaves
    a partial file behind.
    """

    def __init__(self, path: Path, magic: bytes = CHECKPOINT_MAGIC, config_text: str = ""):
        """Initializes an empty archive for ``path``."""
        if len(magic) != 4:
            raise CheckpointError(f"magic must be 4 bytes, got {magic!r}")
        self.path = Path(path)
        self.magic = magic
        self.config_text = config_text
        self.sections: List[Tuple[str, np.ndarray]] = []

    def add(self, name: str, array) -> "TensorArchive":
        """
        Appends a named tensor section.

        :param name: Unique section name.
        :type name: str
        :param array: Values stored as little-endian float32.
        :raises CheckpointError: On a duplicate name or non-finite values.
        """
        if any(existing == name for existing, _ in self.sections):
            raise CheckpointError(f"duplicate section '{name}'")
        values = np.asarray(array, dtype="<f4")
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"section '{name}' contains non-finite values")
        self.sections.append((name, values))
        return self

    def to_bytes(self) -> bytes:
        config = self.config_text.encode("utf-8")
        parts = [self.magic, struct.pack("<II", FORMAT_VERSION, len(config)), config,
                 struct.pack("<I", len(self.sections))]
        for name, values in self.sections:
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<I", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape))
            parts.append(np.ascontiguousarray(values).tobytes())
        return b"".join(parts)

    def write(self):
        """Writes the archive to a temporary file and moves it over ``path``."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        try:
            with open(tmp, "wb") as f:
                f.write(self.to_bytes())
            os.replace(tmp, self.path)
        except OSError as e:
            if tmp.exists():
                tmp.unlink()
            raise CheckpointError(f"could not write '{self.path}': {e}")

    def __enter__(self):
        """Enables use of the 'with' statement."""
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Writes the file only if the block completed without an exception."""
        if exc_type is None:
            self.write()


def decode_archive(raw: bytes, magic: bytes = CHECKPOINT_MAGIC) -> Checkpoint:
    """
    Parses the container bytes.

    :param raw: File contents.
    :type raw: bytes
    :param magic: Expected 4-byte magic.
    :type magic: bytes
    :raises CheckpointError: On bad magic, unsupported version, truncation or trailing bytes.
    :rtype: Checkpoint
    """
    reader = _Reader(raw)
    found = reader.take(4, "header")
    if found != magic:
        raise CheckpointError(f"bad magic {found!r}, expected {magic!r}")
    version = reader.u32("header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (this build reads version {FORMAT_VERSION})")
    try:
        config_text = reader.take(reader.u32("header"), "config").decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"config snapshot is not valid UTF-8: {e}")

    checkpoint = Checkpoint(config_text)
    count = reader.u32("header")
    for _ in range(count):
        name = reader.take(reader.u32("tensor"), "tensor").decode("utf-8", errors="replace")
        rank = reader.u32("tensor")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank, "tensor"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = reader.take(4 * size, "tensor")
        if name in checkpoint.sections:
            raise CheckpointError(f"duplicate section '{name}'")
        checkpoint.sections[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if reader.pos != len(raw):
        raise CheckpointError(f"{len(raw) - reader.pos} trailing bytes after the last section")
    return checkpoint


def read_archive(path: Path, magic: bytes = CHECKPOINT_MAGIC) -> Checkpoint:
    """
    Reads and parses a container file; error messages are prefixed with the file name.

    :param path: Checkpoint or dataset file.
    :type path: Path
    :param magic: Expected 4-byte magic.
    :type magic: bytes
    :raises CheckpointError: If the file cannot be read or fails to parse.
    :rtype: Checkpoint
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"could not read '{path}': {e}")
    try:
        return decode_archive(raw, magic)
    except CheckpointError as e:
        raise CheckpointError(f"'{path.name}': {e}")


def save_checkpoint(path: Path, config_text: str, sections: Mapping[str, np.ndarray]):
    """
    Saves model weights, anchors and optimizer state together with the resolved config.

    :param path: Target file (replaced atomically).
    :type path: Path
    :param config_text: Config snapshot in ConfigFile format.
    :type config_text: str
    :param sections: Named arrays in the order they should appear in the file.
    :type sections: Mapping[str, np.ndarray]
    """
    with TensorArchive(path, CHECKPOINT_MAGIC, config_text) as archive:
        for name, values in sections.items():
            archive.add(name, values)


def load_checkpoint(path: Path) -> Checkpoint:
    return read_archive(path, CHECKPOINT_MAGIC)


def write_dataset_file(path: Path, samples: np.ndarray, labels: Optional[np.ndarray], meta_text: str = ""):
    """Stores ``samples`` and (optionally) ``labels`` under the dataset magic ``NVCD``."""
    with TensorArchive(path, DATASET_MAGIC, meta_text) as archive:
        archive.add("samples", samples)
        if labels is not None:
            archive.add("labels", labels)
    print(f"Dataset with {len(samples)} samples written to '{path}'.")


def read_dataset_file(path: Path) -> Tuple[np.ndarray, Optional[np.ndarray], str]:
    archive = read_archive(path, DATASET_MAGIC)
    if "samples" not in archive.sections:
        raise CheckpointError(f"'{Path(path).name}': dataset file has no 'samples' section")
    labels = archive.sections.get("labels")
    return archive.sections["samples"], None if labels is None else labels.astype(np.int64), archive.config_text
