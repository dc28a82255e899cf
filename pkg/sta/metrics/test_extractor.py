# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import os
import unittest

import numpy as np

import sta
from sta.metrics.extractor import (
	HEADS,
	AttributeClassifier,
	attribute_accuracy,
	eval_feature_extractor,
	evaluate_evaluator,
	scene_images,
	scene_labels,
	train_evaluator_epoch,
)
from sta.numerics.optim import AdamW


class TestAttributeClassifier(unittest.TestCase):
	@classmethod
	def setUpClass(cls):
		cls.specs, cls.images = scene_images(16)
		cls.labels = scene_labels(cls.specs)

	def test_labels(self):
		self.assertEqual(len(self.specs), 216)
		self.assertEqual(sorted(set(self.labels["joint"].tolist())), list(range(HEADS["joint"])))

	def test_feature_dimension_is_width(self):
		classifier = AttributeClassifier(np.random.default_rng(0), width=12)
		extraction = eval_feature_extractor(classifier, self.images[:5])
		self.assertEqual(extraction.features.shape, (5, 12))
		self.assertEqual(extraction.probs.shape, (5, HEADS["joint"]))
		np.testing.assert_allclose(extraction.probs.sum(axis=1), 1.0, atol=1e-12)

	def test_deterministic(self):
		a = eval_feature_extractor(AttributeClassifier(np.random.default_rng(1)), self.images[:8])
		b = eval_feature_extractor(AttributeClassifier(np.random.default_rng(1)), self.images[:8])
		np.testing.assert_array_equal(a.features, b.features)
		np.testing.assert_array_equal(a.probs, b.probs)

	def test_wrong_image_size_rejected(self):
		classifier = AttributeClassifier(np.random.default_rng(0))
		with self.assertRaises(sta.ValidationError):
			eval_feature_extractor(classifier, np.zeros((2, 8, 8, 3)))
		with self.assertRaises(sta.ValidationError):
			eval_feature_extractor(classifier, np.zeros((0, 16, 16, 3)))

	def test_training_reduces_loss(self):
		rng = np.random.default_rng(2)
		classifier = AttributeClassifier(rng, width=16)
		optimizer = AdamW(classifier.named_parameters(), lr=3e-3)
		before = evaluate_evaluator(classifier, self.images, self.labels, 0.05)
		for _ in range(3):
			train_evaluator_epoch(classifier, self.images, self.labels, optimizer, 32, 0.05, rng)
		self.assertLess(evaluate_evaluator(classifier, self.images, self.labels, 0.05), before)

	@unittest.skipUnless(os.environ.get("STA_RUN_SLOW") == "1", "set STA_RUN_SLOW=1 for training runs")
	def test_accuracy_on_noisy_scenes(self):
		rng = np.random.default_rng(3)
		classifier = AttributeClassifier(rng, width=32)
		optimizer = AdamW(classifier.named_parameters(), lr=3e-3)
		for _ in range(60):
			train_evaluator_epoch(classifier, self.images, self.labels, optimizer, 32, 0.05, rng)
		noisy = np.clip(self.images + 0.05 * np.random.default_rng(9).normal(size=self.images.shape), 0.0, 1.0)
		accuracy = attribute_accuracy(classifier, noisy, self.specs)
		self.assertGreaterEqual(min(accuracy.values()), 0.95, msg=accuracy)
