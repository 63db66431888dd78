"""Binary checkpoint serialization.

Layout (all integers little-endian):

    bytes 0..3   magic ``VCLS``
    bytes 4..7   u32 format version (currently 1)
    bytes 8..11  u32 header length in bytes
    header       canonical JSON (sorted keys, no whitespace)
    blobs        one little-endian float32 blob per parameter

The header records the encoder configuration, the training configuration
used to produce the weights, a vocabulary hash, the global step counter,
an ordered ``params`` manifest of (name, shape) pairs, and an ``extra``
object for task metadata.  Blobs follow in manifest order, each holding
the row-major elements of its parameter, so a checkpoint is self
describing and a save/load/save cycle is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .errors import FormatError

__all__ = ["Checkpoint", "FORMAT_VERSION", "MAGIC", "load_checkpoint", "save_checkpoint"]

MAGIC = b"VCLS"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Encoder weights plus the configuration needed to reuse them."""

    encoder_config: EncoderConfig
    pretrain_config: dict | None
    vocab_hash: str
    step: int
    params: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "encoder_config": ckpt.encoder_config.to_dict(),
        "pretrain_config": ckpt.pretrain_config,
        "vocab_hash": ckpt.vocab_hash,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "params": [[name, list(array.shape)] for name, array in ckpt.params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", ckpt.version, len(header_bytes)))
        fh.write(header_bytes)
        for array in ckpt.params.values():
            fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read and validate a checkpoint; malformed or truncated files load nothing."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if len(blob) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    try:
        manifest = [(str(name), tuple(int(n) for n in shape)) for name, shape in header["params"]]
        encoder_config = EncoderConfig(**header["encoder_config"])
        pretrain_config = header["pretrain_config"]
        vocab_hash = str(header["vocab_hash"])
        step = int(header["step"])
        extra = dict(header["extra"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid header contents ({exc})") from exc
    expected = 12 + header_len + sum(4 * int(np.prod(shape)) for _, shape in manifest)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    params: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for name, shape in manifest:
        count = int(np.prod(shape))
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[name] = flat.reshape(shape).astype(np.float32)
        offset += 4 * count
    return Checkpoint(
        encoder_config=encoder_config,
        pretrain_config=pretrain_config,
        vocab_hash=vocab_hash,
        step=step,
        params=params,
        extra=extra,
        version=version,
    )
