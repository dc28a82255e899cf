"""
On-disk formats for corpus artifacts.

Caption matrix (.stac): 8-byte header (magic b"STAC", uint32 version),
then uint32 rows, uint32 cols, then rows*cols little-endian binary32
values in row-major order.
Images: 8-bit RGB PNG.
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image

import sta

CAPTION_MAGIC = b"STAC"
CAPTION_VERSION = 1


def write_caption(path, frames):
	frames = np.asarray(frames)
	if frames.ndim != 2 or frames.shape[0] < 1:
		raise sta.ValidationError(f"Caption must be a non-empty (L, d_frame) matrix, got shape {frames.shape}")
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
	with open(path, "wb") as f:
		f.write(CAPTION_MAGIC + struct.pack("<I", CAPTION_VERSION))
		f.write(struct.pack("<II", *frames.shape))
		f.write(payload)


def read_caption(path):
	data = Path(path).read_bytes()
	if len(data) < 16 or data[:4] != CAPTION_MAGIC:
		raise sta.ChecksumError(f"{path} is not a caption file (bad magic)")
	(version,) = struct.unpack("<I", data[4:8])
	if version != CAPTION_VERSION:
		raise sta.ValidationError(f"{path}: unsupported caption version {version}")
	rows, cols = struct.unpack("<II", data[8:16])
	expected = 16 + rows * cols * 4
	if len(data) != expected:
		raise sta.ValidationError(f"{path}: truncated caption ({len(data)} bytes, expected {expected})")
	return np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).astype(np.float64)


def to_uint8(image):
	return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	Image.fromarray(to_uint8(image)).save(path, format="PNG")


def read_png(path):
	with Image.open(path) as img:
		return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def contact_sheet(images, columns=None, pad=1):
	"""Tile equally sized (H, W, 3) images into one grid image"""
	if not images:
		raise sta.ValidationError("contact_sheet needs at least one image")
	n = len(images)
	columns = columns or int(np.ceil(np.sqrt(n)))
	rows = int(np.ceil(n / columns))
	h, w, c = np.asarray(images[0]).shape
	sheet = np.ones((rows * (h + pad) + pad, columns * (w + pad) + pad, c))
	for i, image in enumerate(images):
		r, col = divmod(i, columns)
		top, left = pad + r * (h + pad), pad + col * (w + pad)
		sheet[top : top + h, left : left + w] = image
	return sheet
