# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import json
import unittest

import sta
from sta.doctype.training_log.training_log import TrainingLog


class TestTrainingLog(unittest.TestCase):
	def test_line_fields(self):
		log = TrainingLog(stage="encoder", epoch=3, loss=1.5, dev_loss=1.75, lr=0.001, seed=7).run_validation()
		line = json.loads(log.as_json())
		self.assertEqual(
			sorted(line), ["dev_loss", "epoch", "loss", "lr", "seed", "stage", "timestamp"]
		)
		self.assertEqual((line["epoch"], line["loss"], line["dev_loss"], line["seed"]), (3, 1.5, 1.75, 7))
		self.assertTrue(line["timestamp"])

	def test_missing_dev_loss_is_null(self):
		log = TrainingLog(stage="vqvae", epoch=0, loss=0.2, dev_loss=float("nan")).run_validation()
		self.assertIsNone(json.loads(log.as_json())["dev_loss"])

	def test_unknown_stage_rejected(self):
		with self.assertRaises(sta.ValidationError):
			TrainingLog(stage="decoder", epoch=0, loss=1.0).run_validation()

	def test_non_finite_loss_rejected(self):
		with self.assertRaises(sta.NumericalError):
			TrainingLog(stage="diffusion", epoch=0, loss=float("inf")).run_validation()

	def test_required_fields(self):
		with self.assertRaises(sta.ValidationError):
			TrainingLog(stage="diffusion", loss=1.0).run_validation()
		with self.assertRaises(sta.ValidationError):
			TrainingLog(stage="diffusion", epoch=-1, loss=1.0).run_validation()
