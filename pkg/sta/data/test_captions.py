# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import unittest

import numpy as np

import sta
from sta.data.captions import caption_program, language_words, synthesize_caption
from sta.data.scenes import SceneSpec

SPEC = SceneSpec("circle", "red", "small", 4)


class TestSynthesizeCaption(unittest.TestCase):
	def test_deterministic(self):
		a = synthesize_caption(SPEC, "A", "spk0", np.random.default_rng(7))
		b = synthesize_caption(SPEC, "A", "spk0", np.random.default_rng(7))
		self.assertEqual(a.tobytes(), b.tobytes())

	def test_shape(self):
		frames = synthesize_caption(SPEC, "B", "spk1", np.random.default_rng(0), d_frame=8, frames_per_symbol=8)
		self.assertEqual(frames.shape[1], 8)
		self.assertGreaterEqual(frames.shape[0], 10)
		self.assertTrue(np.all(np.isfinite(frames)))

	def test_speakers_change_length(self):
		lengths = {
			synthesize_caption(SPEC, "A", f"spk{j}", np.random.default_rng(0)).shape[0] for j in range(6)
		}
		self.assertGreater(len(lengths), 1)

	def test_unknown_language(self):
		with self.assertRaises(sta.DoesNotExistError):
			synthesize_caption(SPEC, "Z", "spk0", np.random.default_rng(0))

	def test_vocabularies_disjoint(self):
		self.assertFalse(set(language_words("A")) & set(language_words("B")))
		a = caption_program(SPEC, "A", "spk0").template_ids()
		b = caption_program(SPEC, "B", "spk0").template_ids()
		self.assertFalse(set(a) & set(b))

	def test_grammars_differ(self):
		a = caption_program(SceneSpec("square", "blue", "large", 0), "A", "spk0")
		self.assertEqual(a.words, ("large", "blue", "square", "top", "left"))
		b = caption_program(SceneSpec("square", "blue", "large", 0), "B", "spk0")
		self.assertEqual(b.words, ("murabba", "kabir", "azraq", "yasar", "aala"))
