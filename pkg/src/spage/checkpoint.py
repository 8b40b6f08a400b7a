"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"SPAGECKP"
    version    u32
    header_len u64
    header     JSON: config, vocabularies, embedding vocabulary
    tensors    repeated: name_len u32, name utf-8, rank u32, dims u64 * rank,
               values f64 * prod(dims)
    digest     32 bytes SHA-256 of everything above

Values are written raw, so a round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .encoder import EmbeddingTable
from .model import ModelConfig, SPageModel

MAGIC = b"SPAGECKP"
FORMAT_VERSION = 1
_DIGEST = 32
_TABLE = "encoder.table"


class CheckpointError(ValueError):
    """The file is not a valid checkpoint (truncated, corrupted, wrong magic)."""


class CheckpointVersionError(CheckpointError):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def dumps(model: SPageModel) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "labels": model.vocab.labels,
        "speakers": model.vocab.speakers,
    }
    tensors = dict(model.state_dict())
    if model.table is not None:
        inv = sorted(model.table.vocab.items(), key=lambda kv: kv[1])
        header["tokens"] = [tok for tok, _ in inv]
        header["oov_policy"] = model.table.oov_policy
        tensors[_TABLE] = model.table.vectors
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes
    body += b"".join(_pack_tensor(k, tensors[k]) for k in sorted(tensors))
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: SPageModel, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> SPageModel:
    if len(buf) < len(MAGIC) + 12 + _DIGEST:
        raise CheckpointError(f"checkpoint too short ({len(buf)} bytes)")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        kind = "newer" if version > FORMAT_VERSION else "older"
        raise CheckpointVersionError(
            f"checkpoint format version {version} is {kind} than supported version {FORMAT_VERSION}")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint integrity check failed (checksum mismatch)")

    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    while r.pos < len(body):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)

    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary(header["labels"], header["speakers"])
    table = None
    if "tokens" in header:
        vectors = tensors.pop(_TABLE)
        table = EmbeddingTable({t: i for i, t in enumerate(header["tokens"])}, vectors,
                               header.get("oov_policy", "zero"))
    model = SPageModel(config, vocab, table)
    model.load_state_dict(tensors)
    return model


def load_checkpoint(path: str | Path) -> SPageModel:
    return loads(Path(path).read_bytes())
