"""
Binary tensor dumps and checkpoints.

Tensor dump (little-endian)::

    rank: u32 | extents: u32 * rank | dtype tag: u32 | raw row-major data

Checkpoint::

    b"AVCK" | version: u32 | manifest_len: u64 | manifest (UTF-8 JSON, sorted keys)
    | concatenated tensor dumps

The manifest lists every entry (name, kind, shape, dtype, offset, nbytes) plus a
metadata block. Nothing time-dependent is stored, so equal states give equal bytes.
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Tuple, Union

import numpy as np

from avconf.core.errors import InputError, ManifestMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"AVCK"
VERSION = 1
KINDS = ("param", "buffer", "optim")

DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}

PathLike = Union[str, Path]


def _u32(values) -> bytes:
    return np.asarray(values, dtype="<u4").tobytes()


def dump_tensor(array: np.ndarray, stream: BinaryIO) -> int:
    """
    Write one tensor dump.

    Returns:
        Number of bytes written
    """
    array = np.asarray(array)
    if array.dtype not in DTYPE_TAGS:
        raise InputError(f"cannot dump dtype {array.dtype}; supported: float32, float64, int64")
    little = array.astype(array.dtype.newbyteorder("<"), copy=False)
    payload = (
        _u32([array.ndim])
        + _u32(list(array.shape))
        + _u32([DTYPE_TAGS[array.dtype]])
        + np.ascontiguousarray(little).tobytes()
    )
    stream.write(payload)
    return len(payload)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise InputError(f"truncated tensor dump: wanted {n} bytes, got {len(data)}")
    return data


def load_tensor(stream: BinaryIO) -> np.ndarray:
    """Read one tensor dump."""
    rank = int(np.frombuffer(_read_exact(stream, 4), dtype="<u4")[0])
    shape = tuple(int(v) for v in np.frombuffer(_read_exact(stream, 4 * rank), dtype="<u4"))
    tag = int(np.frombuffer(_read_exact(stream, 4), dtype="<u4")[0])
    if tag not in TAG_DTYPES:
        raise InputError(f"unknown dtype tag {tag}")
    dtype = TAG_DTYPES[tag]
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(stream, count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)


def save_tensor(path: PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as handle:
        dump_tensor(array, handle)


def read_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as handle:
        return load_tensor(handle)


class Checkpoint:
    """Named tensors with a kind each, plus training metadata."""

    def __init__(
        self,
        tensors: Optional[Dict[str, Tuple[str, np.ndarray]]] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize checkpoint.

        Args:
            tensors: Name -> (kind, array), kind one of ``param``, ``buffer``, ``optim``
            metadata: JSON-serializable metadata (config_hash, step, optimizer, thread_count)
        """
        self.tensors: Dict[str, Tuple[str, np.ndarray]] = dict(tensors or {})
        self.metadata: Dict[str, Any] = dict(metadata or {})
        for name, (kind, _) in self.tensors.items():
            if kind not in KINDS:
                raise InputError(f"tensor {name!r} has unknown kind {kind!r}")

    def names(self, kind: Optional[str] = None) -> List[str]:
        return sorted(n for n, (k, _) in self.tensors.items() if kind is None or k == kind)

    def arrays(self, kind: str) -> Dict[str, np.ndarray]:
        return {n: a for n, (k, a) in self.tensors.items() if k == kind}

    def manifest(self) -> Dict[str, Any]:
        """Manifest as written to disk (offsets relative to the first dump)."""
        entries = []
        offset = 0
        for name in sorted(self.tensors):
            kind, array = self.tensors[name]
            nbytes = 4 * (array.ndim + 2) + array.nbytes
            entries.append(
                {
                    "name": name,
                    "kind": kind,
                    "shape": list(array.shape),
                    "dtype": str(array.dtype),
                    "offset": offset,
                    "nbytes": nbytes,
                }
            )
            offset += nbytes
        return {"entries": entries, "metadata": self.metadata}

    def to_bytes(self) -> bytes:
        manifest = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()
        body = io.BytesIO()
        for name in sorted(self.tensors):
            dump_tensor(self.tensors[name][1], body)
        header = MAGIC + _u32([VERSION]) + np.asarray([len(manifest)], dtype="<u8").tobytes()
        return header + manifest + body.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise InputError("not a checkpoint file (bad magic)")
        version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
        if version != VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        manifest_len = int(np.frombuffer(blob[8:16], dtype="<u8")[0])
        manifest = json.loads(blob[16 : 16 + manifest_len].decode())
        body = 16 + manifest_len
        tensors = {}
        for entry in manifest["entries"]:
            start = body + entry["offset"]
            array = load_tensor(io.BytesIO(blob[start : start + entry["nbytes"]]))
            tensors[entry["name"]] = (entry["kind"], array)
        return cls(tensors, manifest.get("metadata", {}))

    def save(self, path: PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())
        logger.info("checkpoint written path=%s tensors=%d", path, len(self.tensors))

    @classmethod
    def load(cls, path: PathLike) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise InputError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())


def compare_manifests(reference: Dict[str, Tuple[int, ...]], other: Dict[str, Tuple[int, ...]]):
    """
    Raise if two name -> shape maps differ.

    Raises:
        ManifestMismatchError: listing every differing name, sorted
    """
    differing = []
    for name in sorted(set(reference) | set(other)):
        if name not in reference or name not in other:
            differing.append(name)
        elif tuple(reference[name]) != tuple(other[name]):
            differing.append(name)
    if differing:
        raise ManifestMismatchError(
            f"manifests differ in {len(differing)} tensor(s), first: {differing[0]}", differing
        )
