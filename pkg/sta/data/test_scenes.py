# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import unittest

import numpy as np

import sta
from sta.data.scenes import SceneSpec, all_scenes, render, shape_mask


class TestSceneSpec(unittest.TestCase):
	def test_combination_count(self):
		scenes = all_scenes()
		self.assertEqual(len(scenes), 3 * 4 * 2 * 9)
		self.assertEqual(len({s.key for s in scenes}), 216)

	def test_rejects_unknown_attribute(self):
		with self.assertRaises(sta.ValidationError):
			SceneSpec("hexagon", "red", "small", 0)
		with self.assertRaises(sta.ValidationError):
			SceneSpec("circle", "red", "small", 9)

	def test_parse(self):
		spec = SceneSpec.parse("shape=square, color=blue,size=large,position=7")
		self.assertEqual(spec, SceneSpec("square", "blue", "large", 7))
		self.assertEqual((spec.row, spec.col), (2, 1))

	def test_key_round_trip(self):
		for spec in all_scenes():
			self.assertEqual(SceneSpec.from_key(spec.key), spec)
		with self.assertRaises(sta.ValidationError):
			SceneSpec.from_key("circle-red-small")


class TestRender(unittest.TestCase):
	def test_bit_identical(self):
		spec = SceneSpec("triangle", "yellow", "large", 4)
		self.assertEqual(render(spec).tobytes(), render(spec).tobytes())

	def test_color_change_only_inside_mask(self):
		a = render(SceneSpec("circle", "red", "large", 2))
		b = render(SceneSpec("circle", "green", "large", 2))
		mask = shape_mask(SceneSpec("circle", "red", "large", 2), 16)
		differs = np.any(a != b, axis=-1)
		self.assertTrue(differs.any())
		self.assertFalse(np.any(differs & ~mask))

	def test_all_scenes_distinct(self):
		images = [render(s).tobytes() for s in all_scenes()]
		self.assertEqual(len(set(images)), len(images))

	def test_range_and_shape(self):
		image = render(SceneSpec("square", "blue", "small", 0), image_size=16)
		self.assertEqual(image.shape, (16, 16, 3))
		self.assertGreaterEqual(image.min(), 0.0)
		self.assertLessEqual(image.max(), 1.0)
