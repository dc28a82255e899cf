import json
import logging
from pathlib import Path

import sta
from sta.doctype.training_log.training_log import TrainingLog

logger = logging.getLogger(__name__)


def capture_epoch(path, stage, epoch, loss, dev_loss, lr, seed):
	"""
	Append one epoch of a stage to its jsonl run log.

	Runs after every training epoch. A non-finite training loss is rejected
	before anything is written, so the log only ever holds finite losses.
	"""
	log = TrainingLog(
		stage=stage,
		epoch=epoch,
		loss=loss,
		dev_loss=dev_loss,
		lr=lr,
		seed=seed,
	).run_validation()

	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with path.open("a", encoding="utf-8") as f:
		f.write(log.as_json() + "\n")
	logger.debug("%s epoch %d: loss %.6f dev %s", stage, epoch, loss, dev_loss)
	return log


def read_log(path):
	"""Every line of a run log as a dict, in epoch order"""
	path = Path(path)
	if not path.exists():
		return []
	return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def truncate_log(path, epochs):
	"""Keep the first `epochs` lines; a resumed run continues from there"""
	path = Path(path)
	if not path.exists():
		return
	lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
	if len(lines) <= epochs:
		return
	path.write_text("".join(line + "\n" for line in lines[:epochs]), encoding="utf-8")
