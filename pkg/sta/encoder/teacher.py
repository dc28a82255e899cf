import hashlib

import numpy as np

import sta
from sta.data.formats import to_uint8
from sta.data.scenes import all_scenes, render
from sta.hooks import SCENE_COLORS, SCENE_POSITIONS, SCENE_SHAPES, SCENE_SIZES

ATTRIBUTE_DIM = len(SCENE_SHAPES) + len(SCENE_COLORS) + len(SCENE_SIZES) + len(SCENE_POSITIONS)


def attribute_vector(spec):
	"""Concatenated one-hot encoding of shape, color, size and position"""
	idx = spec.attribute_indices()
	vec = np.zeros(ATTRIBUTE_DIM)
	offset = 0
	for name, options in (
		("shape", SCENE_SHAPES),
		("color", SCENE_COLORS),
		("size", SCENE_SIZES),
		("position", SCENE_POSITIONS),
	):
		vec[offset + idx[name]] = 1.0
		offset += len(options)
	return vec


def image_digest(image):
	return hashlib.sha256(to_uint8(image).tobytes()).hexdigest()


class TeacherEmbedder:
	"""
	Frozen image -> embedding map.

	Recognizes a rendered scene exactly (by the digest of its 8-bit pixels)
	and projects its attribute encoding through a fixed random matrix.
	Nothing here is trainable.
	"""

	def __init__(self, d_emb, image_size=16, seed=0):
		rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
		self.d_emb = d_emb
		self.image_size = image_size
		self.projection = rng.normal(0.0, 1.0 / np.sqrt(ATTRIBUTE_DIM), size=(ATTRIBUTE_DIM, d_emb))
		self.projection.setflags(write=False)
		self.scenes = {image_digest(render(spec, image_size)): spec for spec in all_scenes()}

	def scene_of(self, image):
		digest = image_digest(image)
		if digest not in self.scenes:
			raise sta.DoesNotExistError("Image is not a rendered scene known to the teacher embedder")
		return self.scenes[digest]

	def embed_scene(self, spec):
		vec = attribute_vector(spec) @ self.projection
		return vec / np.linalg.norm(vec)

	def checksum(self):
		return hashlib.sha256(np.ascontiguousarray(self.projection).tobytes()).hexdigest()


def embed_image_teacher(image, teacher):
	"""L2-normalized teacher embedding of a corpus image"""
	return teacher.embed_scene(teacher.scene_of(image))


def build_teacher(config):
	return TeacherEmbedder(
		config.get("encoder.d_emb"),
		image_size=config.get("data.image_size"),
		seed=config.get("encoder.teacher_seed"),
	)
