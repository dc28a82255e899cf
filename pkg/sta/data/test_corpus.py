# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import tempfile
import unittest
from pathlib import Path

import numpy as np

import sta
from sta.data.corpus import (
	attribute_balance,
	audit_split_disjointness,
	generate_corpus,
	load_manifest,
	summary,
)
from sta.data.formats import contact_sheet, read_caption, read_png, write_caption, write_png
from sta.data.scenes import SceneSpec, render


def _tree_bytes(root):
	return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestGenerateCorpus(unittest.TestCase):
	def test_monolingual_one_caption_per_record(self):
		with tempfile.TemporaryDirectory() as tmp:
			manifest = generate_corpus(tmp, 30, ["A"], 1, seed=0)
			self.assertTrue(all(len(r.captions) == 1 for r in manifest.records))

	def test_bilingual_caption_count(self):
		with tempfile.TemporaryDirectory() as tmp:
			manifest = generate_corpus(tmp, 30, ["A", "B"], 1, seed=0)
			self.assertEqual(summary(manifest)["captions"], 2 * 30)
			self.assertTrue(all(r.languages == ["A", "B"] for r in manifest.records))

	def test_regeneration_is_byte_identical(self):
		with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
			generate_corpus(a, 20, ["A", "B"], 2, seed=3)
			generate_corpus(b, 20, ["A", "B"], 2, seed=3)
			self.assertEqual(_tree_bytes(a), _tree_bytes(b))

	def test_manifest_round_trip(self):
		with tempfile.TemporaryDirectory() as tmp:
			manifest = generate_corpus(tmp, 25, ["A", "B"], 2, seed=1)
			loaded = load_manifest(tmp)
			self.assertEqual(loaded.as_dict(), manifest.as_dict())
			record = loaded.records[0]
			np.testing.assert_array_equal(loaded.load_image(record), render(record.scene))
			self.assertEqual(loaded.load_caption(record, "B").shape[1], 8)

	def test_split_disjointness_seed_sweep(self):
		for seed in range(10):
			with tempfile.TemporaryDirectory() as tmp:
				manifest = generate_corpus(tmp, 200, ["A"], 1, seed=seed)
				self.assertTrue(audit_split_disjointness(manifest))
				self.assertLessEqual(attribute_balance(manifest), 0.10)

	def test_impossible_split_rejected(self):
		with tempfile.TemporaryDirectory() as tmp:
			with self.assertRaises(sta.ValidationError):
				generate_corpus(tmp, 1, ["A"], 1, seed=0)

	def test_unknown_language_rejected(self):
		with tempfile.TemporaryDirectory() as tmp:
			with self.assertRaises(sta.DoesNotExistError):
				generate_corpus(tmp, 10, ["A", "Q"], 1, seed=0)


class TestFormats(unittest.TestCase):
	def test_caption_binary32_round_trip(self):
		frames = np.random.default_rng(0).normal(size=(13, 8)).astype(np.float32).astype(np.float64)
		with tempfile.TemporaryDirectory() as tmp:
			path = Path(tmp) / "c.stac"
			write_caption(path, frames)
			data = path.read_bytes()
			self.assertEqual(data[:4], b"STAC")
			self.assertEqual(len(data), 16 + 13 * 8 * 4)
			np.testing.assert_array_equal(read_caption(path), frames)

	def test_caption_bad_magic(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = Path(tmp) / "bad.stac"
			path.write_bytes(b"NOPE" + bytes(20))
			with self.assertRaises(sta.ChecksumError):
				read_caption(path)

	def test_png_round_trip_is_exact_for_renders(self):
		image = render(SceneSpec("triangle", "green", "large", 8))
		with tempfile.TemporaryDirectory() as tmp:
			path = Path(tmp) / "x.png"
			write_png(path, image)
			np.testing.assert_array_equal(read_png(path), image)

	def test_contact_sheet_shape(self):
		images = [np.zeros((4, 4, 3))] * 5
		sheet = contact_sheet(images, columns=3, pad=1)
		self.assertEqual(sheet.shape, (2 * 5 + 1, 3 * 5 + 1, 3))
