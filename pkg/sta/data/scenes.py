import itertools
from dataclasses import dataclass

import numpy as np

import sta
from sta.hooks import SCENE_COLORS, SCENE_POSITIONS, SCENE_SHAPES, SCENE_SIZES

BACKGROUND = (24, 24, 24)
PALETTE = {
	"red": (220, 40, 40),
	"green": (40, 190, 70),
	"blue": (50, 90, 230),
	"yellow": (235, 210, 40),
}
# shape radius as a fraction of the image side
RADIUS = {"small": 0.12, "large": 0.2}


@dataclass(frozen=True)
class SceneSpec:
	shape: str
	color: str
	size: str
	position: int

	def __post_init__(self):
		if self.shape not in SCENE_SHAPES:
			raise sta.ValidationError(f"Unknown shape '{self.shape}'. Expected one of {SCENE_SHAPES}")
		if self.color not in SCENE_COLORS:
			raise sta.ValidationError(f"Unknown color '{self.color}'. Expected one of {SCENE_COLORS}")
		if self.size not in SCENE_SIZES:
			raise sta.ValidationError(f"Unknown size '{self.size}'. Expected one of {SCENE_SIZES}")
		if self.position not in SCENE_POSITIONS:
			raise sta.ValidationError(f"Position must be a cell index in 0..8, got {self.position}")

	@property
	def key(self):
		return f"{self.shape}-{self.color}-{self.size}-{self.position}"

	@property
	def row(self):
		return self.position // 3

	@property
	def col(self):
		return self.position % 3

	def attribute_indices(self):
		return {
			"shape": SCENE_SHAPES.index(self.shape),
			"color": SCENE_COLORS.index(self.color),
			"size": SCENE_SIZES.index(self.size),
			"position": self.position,
		}

	def as_dict(self):
		return {"shape": self.shape, "color": self.color, "size": self.size, "position": self.position}

	@classmethod
	def from_dict(cls, d):
		return cls(shape=d["shape"], color=d["color"], size=d["size"], position=int(d["position"]))

	@classmethod
	def parse(cls, text):
		"""
		Parse `shape=circle,color=red,size=small,position=4`
		(the form accepted by `sta sample --scene`)
		"""
		fields = {}
		for part in text.split(","):
			if "=" not in part:
				raise sta.ValidationError(f"Scene field '{part}' is not key=value")
			k, v = part.split("=", 1)
			fields[k.strip()] = v.strip()
		missing = {"shape", "color", "size", "position"} - set(fields)
		if missing:
			raise sta.ValidationError(f"Scene spec is missing {sorted(missing)}")
		return cls.from_dict(fields)

	@classmethod
	def from_key(cls, key):
		"""Inverse of `key`"""
		parts = str(key).split("-")
		if len(parts) != 4 or not parts[3].isdigit():
			raise sta.ValidationError(f"'{key}' is not a scene key of the form shape-color-size-position")
		return cls(shape=parts[0], color=parts[1], size=parts[2], position=int(parts[3]))


def all_scenes():
	"""Every attribute combination, in canonical order"""
	return [
		SceneSpec(shape, color, size, position)
		for shape, color, size, position in itertools.product(
			SCENE_SHAPES, SCENE_COLORS, SCENE_SIZES, SCENE_POSITIONS
		)
	]


def shape_mask(spec, image_size):
	"""Boolean (H, W) mask of the pixels covered by the shape"""
	cell = image_size / 3.0
	cx = (spec.col + 0.5) * cell
	cy = (spec.row + 0.5) * cell
	r = RADIUS[spec.size] * image_size

	centers = np.arange(image_size) + 0.5
	y, x = np.meshgrid(centers, centers, indexing="ij")
	dx, dy = x - cx, y - cy

	if spec.shape == "circle":
		return dx * dx + dy * dy <= r * r
	if spec.shape == "square":
		half = 0.8 * r
		return (np.abs(dx) <= half) & (np.abs(dy) <= half)
	# triangle, apex up: half-width grows linearly from 0 at the apex to r at the base
	depth = dy + r
	return (depth >= 0) & (depth <= 2 * r) & (np.abs(dx) <= depth / 2)


def render(spec, image_size=16):
	"""
	Rasterize a scene to an (H, W, 3) float image in [0, 1].

	No anti-aliasing: every pixel is either background or the palette
	color, so the image is an exact function of the SceneSpec and survives
	an 8-bit PNG round trip bit-for-bit.
	"""
	canvas = np.empty((image_size, image_size, 3), dtype=np.uint8)
	canvas[:] = BACKGROUND
	canvas[shape_mask(spec, image_size)] = PALETTE[spec.color]
	return canvas.astype(np.float64) / 255.0
