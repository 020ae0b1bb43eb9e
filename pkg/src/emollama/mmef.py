"""MMEF tensor files, tensor containers and the tab-separated sample manifest.

Tensor block layout (little-endian)::

    b"MMEF" | u32 version=1 | u32 ndim | ndim x u32 dims | prod(dims) x f32

A container is ``u32 count`` followed by ``count`` entries of
``u32 name_len | utf-8 name | tensor block``.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

MAGIC = b"MMEF"
VERSION = 1

MANIFEST_FIELDS = (
    "id",
    "audio_path",
    "video_path",
    "global_path",
    "transcript",
    "label",
    "task",
    "split",
    "reasoning_target",
)


class FormatError(ValueError):
    """Raised when a file does not follow the MMEF or manifest layout."""


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if x.ndim == 0 or any(s < 1 for s in x.shape):
        raise FormatError(f"{name}: dims must be positive, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{name}: non-finite values")
    return x


def _write_block(fh: BinaryIO, x: np.ndarray) -> None:
    x = np.asarray(x)
    check_tensor(x)
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, x.ndim))
    fh.write(struct.pack(f"<{x.ndim}I", *x.shape))
    fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated file")
    return buf


def _read_block(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad magic")
    version, ndim = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if ndim == 0:
        raise FormatError("zero-dimensional tensor")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(dims))
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    return check_tensor(data.reshape(dims).astype(np.float32))


def dumps_tensor(x: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _write_block(buf, x)
    return buf.getvalue()


def loads_tensor(data: bytes) -> np.ndarray:
    fh = io.BytesIO(data)
    x = _read_block(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after tensor")
    return x


def save_tensor(path: str | os.PathLike, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_block(fh, x)


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        x = _read_block(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor")
    return x


def save_container(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named tensors in insertion order."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(tensors)))
        for name, x in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            try:
                _write_block(fh, x)
            except FormatError as exc:
                raise FormatError(f"{name}: {exc}") from None


def load_container(path: str | os.PathLike) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, n).decode("utf-8")
            if name in out:
                raise FormatError(f"duplicate tensor name {name!r}")
            out[name] = _read_block(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after container")
    return out


def container_manifest(path: str | os.PathLike) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, dims, byte offset of the tensor block) for every entry."""
    entries = []
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, n).decode("utf-8")
            offset = fh.tell()
            x = _read_block(fh)
            entries.append((name, x.shape, offset))
    return entries


@dataclass
class SampleRecord:
    id: str
    audio_path: str
    video_path: str
    global_path: str
    transcript: str
    label: str
    task: str = "recognition"
    split: str = "train"
    reasoning_target: str = ""
    root: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def labels(self) -> list[str]:
        return [s.strip() for s in self.label.split(",") if s.strip()]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    @property
    def au_path(self) -> Path:
        """Per-frame AU intensity table stored next to the video features."""
        video = self.resolve(self.video_path)
        return video.with_name(video.name.removesuffix(".mmef") + ".au.tsv")


def _check_field(name: str, value: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise FormatError(f"manifest field {name!r} contains a tab or newline")
    return value


def format_record(rec: SampleRecord) -> str:
    return "\t".join(_check_field(f, getattr(rec, f)) for f in MANIFEST_FIELDS)


def write_manifest(path: str | os.PathLike, records: Iterable[SampleRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def parse_record(line: str, root: Path = Path(".")) -> SampleRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) == len(MANIFEST_FIELDS) - 1:
        parts.append("")
    if len(parts) != len(MANIFEST_FIELDS):
        raise FormatError(f"expected {len(MANIFEST_FIELDS)} fields, got {len(parts)}")
    rec = SampleRecord(*parts, root=root)
    if not rec.id:
        raise FormatError("empty sample id")
    return rec


def read_manifest(path: str | os.PathLike) -> list[SampleRecord]:
    root = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line, root))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return records
