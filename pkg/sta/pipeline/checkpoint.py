"""
STAK checkpoint files.

All integers are little-endian uint32 unless noted.

    magic       4 bytes  b"STAK"
    version     uint32
    stage       length-prefixed UTF-8
    digest      length-prefixed ASCII (config digest of the stage)
    meta        length-prefixed UTF-8 JSON (epoch, losses, RNG state, schedule, ...)
    count       number of tensors
    per tensor: length-prefixed UTF-8 name, ndim, ndim dims,
                row-major little-endian binary32 payload
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import sta

logger = logging.getLogger(__name__)

MAGIC = b"STAK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
	stage: str
	digest: str
	tensors: dict
	meta: dict = field(default_factory=dict)


def to_binary32(value):
	"""The float64 value a tensor holds after a save/load round trip"""
	return np.asarray(value, dtype="<f4").astype(np.float64)


def _pack_text(text):
	raw = text.encode("utf-8")
	return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(checkpoint):
	parts = [
		MAGIC,
		struct.pack("<I", FORMAT_VERSION),
		_pack_text(checkpoint.stage),
		_pack_text(checkpoint.digest),
		_pack_text(json.dumps(checkpoint.meta, sort_keys=True)),
		struct.pack("<I", len(checkpoint.tensors)),
	]
	for name in sorted(checkpoint.tensors):
		array = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f4")
		if not np.all(np.isfinite(array)):
			raise sta.NumericalError(f"Tensor '{name}' holds non-finite values and cannot be checkpointed")
		parts.append(_pack_text(name))
		parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
		parts.append(array.tobytes())
	return b"".join(parts)


class _Reader:
	def __init__(self, raw, source):
		self.raw = raw
		self.offset = 0
		self.source = source

	def take(self, n):
		if self.offset + n > len(self.raw):
			raise sta.ChecksumError(f"{self.source}: truncated checkpoint")
		chunk = self.raw[self.offset : self.offset + n]
		self.offset += n
		return chunk

	def uint(self):
		return struct.unpack("<I", self.take(4))[0]

	def text(self):
		return self.take(self.uint()).decode("utf-8")


def decode_checkpoint(raw, source="<bytes>"):
	reader = _Reader(raw, source)
	magic = reader.take(4)
	if magic != MAGIC:
		raise sta.ChecksumError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
	version = reader.uint()
	if version != FORMAT_VERSION:
		raise sta.ChecksumError(f"{source}: unsupported checkpoint version {version}")
	stage = reader.text()
	digest = reader.text()
	meta = json.loads(reader.text())
	tensors = {}
	for _ in range(reader.uint()):
		name = reader.text()
		ndim = reader.uint()
		shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
		count = int(np.prod(shape, dtype=np.int64))
		data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
		tensors[name] = data.astype(np.float64)
	if reader.offset != len(raw):
		raise sta.ChecksumError(f"{source}: {len(raw) - reader.offset} trailing bytes")
	return Checkpoint(stage=stage, digest=digest, tensors=tensors, meta=meta)


def save_checkpoint(path, checkpoint):
	"""Write atomically: a partial file never replaces a good checkpoint"""
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	tmp = path.with_suffix(path.suffix + ".tmp")
	tmp.write_bytes(encode_checkpoint(checkpoint))
	tmp.replace(path)
	return path


def load_checkpoint(path, stage=None, digest=None, allow_mismatch=False):
	"""
	Read a checkpoint, checking its stage tag and config digest when given.

	A digest mismatch raises ChecksumError unless `allow_mismatch`, in which
	case it is logged.
	"""
	path = Path(path)
	if not path.exists():
		raise sta.DoesNotExistError(f"No checkpoint at {path}")
	checkpoint = decode_checkpoint(path.read_bytes(), source=str(path))
	if stage is not None and checkpoint.stage != stage:
		raise sta.ChecksumError(f"{path} holds stage '{checkpoint.stage}', expected '{stage}'")
	if digest is not None and checkpoint.digest != digest:
		message = (
			f"{path} was trained under config digest {checkpoint.digest[:12]}, "
			f"current config gives {digest[:12]}"
		)
		if not allow_mismatch:
			raise sta.ChecksumError(message + ". Retrain the stage or pass --allow-mismatch.")
		logger.warning(message)
	return checkpoint
