# Copyright (c) 2025, Apstic and contributors
# For license information, please see license.txt

import json
import math

import sta
from sta.model.record import Record, utc_timestamp


class TrainingLog(Record):
	schema = "training_log"

	def validate(self):
		if not math.isfinite(self.loss):
			raise sta.NumericalError(f"Epoch {self.epoch} of {self.stage} has a non-finite loss")

	def normalize(self):
		if not self.timestamp:
			self.set("timestamp", utc_timestamp())

	def as_json(self):
		"""One line of the stage's jsonl run log; a missing dev loss is written as null"""
		values = self.as_dict()
		if values["dev_loss"] is not None and not math.isfinite(values["dev_loss"]):
			values["dev_loss"] = None
		return json.dumps(values, sort_keys=True)
