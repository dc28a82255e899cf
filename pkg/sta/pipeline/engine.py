import logging
import math
from pathlib import Path
from pkgutil import resolve_name

import numpy as np
from tqdm import tqdm

import sta
from sta.config import archive_config
from sta.data.corpus import load_manifest
from sta.diffusion.schedule import TransitionSchedule
from sta.hooks import train_stages
from sta.pipeline.capture import capture_epoch, truncate_log
from sta.pipeline.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, to_binary32

logger = logging.getLogger(__name__)

OPTIMIZER_PREFIX = "optimizer."


class PipelineEngine:
	"""
	Runs the staged pipeline for one resolved configuration.

	Each stage is trained against frozen checkpoints of the stages it
	depends on (see `train_stages` in hooks). Checkpoints live under
	`<work_dir>/checkpoints/<stage>.{best,last}.stak` and every epoch is
	appended to `<work_dir>/logs/<stage>.jsonl`.

	Methods:
	- train(): run one stage's trainer
	- fit(): the shared epoch loop the trainers call back into
	- load_stage(): a stage's module with its best weights
	"""

	def __init__(self, config, progress=False):
		self.config = config
		self.work_dir = Path(config.get("run.work_dir"))
		self.corpus_dir = Path(config.get("data.corpus_dir"))
		self.seed = config.get("run.seed")
		self.progress = progress
		self._manifest = None

	@property
	def manifest(self):
		if self._manifest is None:
			manifest = load_manifest(self.corpus_dir)
			for key in ("image_size", "d_frame"):
				have, want = manifest.settings.get(key), self.config.get(f"data.{key}")
				if have is not None and have != want:
					raise sta.ValidationError(
						f"Corpus at {self.corpus_dir} was generated with {key}={have}, config has data.{key}={want}"
					)
			missing = sorted(set(self.config.languages) - set(manifest.languages))
			if missing:
				raise sta.DependencyError(
					f"Corpus at {self.corpus_dir} has no captions in {missing}. Regenerate it with those languages."
				)
			self._manifest = manifest
		return self._manifest

	def stage_info(self, stage):
		if stage not in train_stages:
			raise sta.DoesNotExistError(f"Unknown stage '{stage}'. Expected one of {sorted(train_stages)}")
		return train_stages[stage]

	def stage_rng(self, stage):
		"""Independent stream per stage, so retraining one stage never shifts another"""
		self.stage_info(stage)
		index = list(train_stages).index(stage)
		return np.random.default_rng(np.random.SeedSequence([self.seed, index]))

	def stage_digest(self, stage):
		return self.config.digest(sections=self.stage_info(stage)["sections"])

	def checkpoint_path(self, stage, which="best"):
		return self.work_dir / "checkpoints" / f"{stage}.{which}.stak"

	def log_path(self, stage):
		return self.work_dir / "logs" / f"{stage}.jsonl"

	def check_dependencies(self, stage):
		for dependency in self.stage_info(stage)["depends_on"]:
			path = self.checkpoint_path(dependency)
			if not path.exists():
				raise sta.DependencyError(
					f"Stage '{stage}' needs a trained '{dependency}' stage but {path} is missing. "
					f"Run `sta train {dependency}` first."
				)

	def build_stage(self, stage, rng=None):
		builder = resolve_name(self.stage_info(stage)["builder"])
		return builder(self.config, rng if rng is not None else self.stage_rng(stage))

	def load_checkpoint(self, stage, which="best", allow_mismatch=False):
		path = self.checkpoint_path(stage, which)
		if not path.exists():
			raise sta.DependencyError(
				f"No '{stage}' checkpoint at {path}. Run `sta train {stage}` first."
			)
		return load_checkpoint(path, stage=stage, digest=self.stage_digest(stage), allow_mismatch=allow_mismatch)

	def load_stage(self, stage, allow_mismatch=False):
		"""Build a stage's module and load its best checkpoint into it"""
		checkpoint = self.load_checkpoint(stage, allow_mismatch=allow_mismatch)
		module = self.build_stage(stage)
		module.load_state_dict(_module_tensors(checkpoint))
		logger.debug("Loaded %s from epoch %s", stage, checkpoint.meta.get("epoch"))
		return module

	def load_schedule(self, allow_mismatch=False):
		checkpoint = self.load_checkpoint("diffusion", allow_mismatch=allow_mismatch)
		if "schedule" not in checkpoint.meta:
			raise sta.ChecksumError("Diffusion checkpoint carries no schedule block")
		return TransitionSchedule.from_dict(checkpoint.meta["schedule"])

	def train(self, stage, resume=False):
		info = self.stage_info(stage)
		self.check_dependencies(stage)
		archive_config(self.config, self.work_dir)
		logger.info("Training stage '%s' (seed %s, digest %s)", stage, self.seed, self.stage_digest(stage)[:12])
		trainer = resolve_name(info["trainer"])
		return trainer(self, resume=resume)

	def fit(
		self,
		stage,
		module,
		optimizer,
		rng,
		epochs,
		run_epoch,
		evaluate,
		extra_state=None,
		patience=None,
		resume=False,
		meta=None,
	):
		"""
		Epoch loop shared by every stage.

		`run_epoch(epoch)` trains one epoch and returns its mean loss;
		`evaluate()` returns the dev loss used for checkpoint selection (the
		training loss stands in when the dev loss is not finite). Training
		stops after `patience` epochs without improvement; 0 or None never
		stops early.

		Returns:
		    dict with the best epoch, its dev loss and the checkpoint path
		"""
		if epochs < 1:
			raise sta.ValidationError(f"Stage '{stage}' needs at least one epoch, got {epochs}")
		digest = self.stage_digest(stage)
		best_path = self.checkpoint_path(stage, "best")
		last_path = self.checkpoint_path(stage, "last")
		log_path = self.log_path(stage)
		meta = dict(meta or {})

		start, best, best_epoch, stale = 0, math.inf, None, 0
		if resume:
			if not last_path.exists():
				raise sta.DoesNotExistError(f"Nothing to resume for stage '{stage}': {last_path} is missing")
			checkpoint = load_checkpoint(last_path, stage=stage, digest=digest)
			progress = checkpoint.meta["progress"]
			module.load_state_dict(_module_tensors(checkpoint))
			optimizer.load_state_dict(
				{
					"t": progress["optimizer_t"],
					"tensors": {
						name[len(OPTIMIZER_PREFIX) :]: value
						for name, value in checkpoint.tensors.items()
						if name.startswith(OPTIMIZER_PREFIX)
					},
				}
			)
			rng.bit_generator.state = checkpoint.meta["rng"]
			if extra_state is not None:
				extra_state.load_state_dict(checkpoint.meta["extra_state"])
			start = progress["epochs_done"]
			best = math.inf if progress["best"] is None else progress["best"]
			best_epoch, stale = progress["best_epoch"], progress["stale"]
			truncate_log(log_path, start)
			logger.info("Resuming '%s' after epoch %d (best %s at epoch %s)", stage, start - 1, best, best_epoch)
		elif log_path.exists():
			log_path.unlink()

		stopped = bool(patience) and stale >= patience
		epochs_run = start
		bar = tqdm(range(start, epochs), desc=stage, disable=not self.progress or stopped, initial=start, total=epochs)
		for epoch in bar:
			if stopped:
				break
			loss = float(run_epoch(epoch))
			dev_loss = float(evaluate())
			score = dev_loss
			if not math.isfinite(dev_loss):
				logger.warning("'%s' epoch %d has no finite dev loss; selecting on training loss", stage, epoch)
				score = loss
			capture_epoch(log_path, stage, epoch, loss, dev_loss, optimizer.last_lr, self.seed)
			epochs_run = epoch + 1
			bar.set_postfix(loss=f"{loss:.4f}", dev=f"{dev_loss:.4f}")

			if score < best:
				best, best_epoch, stale = score, epoch, 0
				self._save(best_path, stage, digest, module.state_dict(), {**meta, "epoch": epoch, "dev_loss": score})
			else:
				stale += 1

			tensors = module.state_dict()
			optimizer_state = optimizer.state_dict()
			for name, value in optimizer_state["tensors"].items():
				tensors[OPTIMIZER_PREFIX + name] = value
			progress = {
				"epochs_done": epoch + 1,
				"best": None if math.isinf(best) else best,
				"best_epoch": best_epoch,
				"stale": stale,
				"optimizer_t": optimizer_state["t"],
			}
			last_meta = {**meta, "epoch": epoch, "progress": progress, "rng": rng.bit_generator.state}
			if extra_state is not None:
				last_meta["extra_state"] = extra_state.state_dict()
			self._save(last_path, stage, digest, tensors, last_meta)
			_snap_to_checkpoint(module, optimizer)

			if patience and stale >= patience:
				logger.info("Early stop of '%s' at epoch %d: no dev improvement for %d epochs", stage, epoch, stale)
				stopped = True
		bar.close()

		best_checkpoint = load_checkpoint(best_path, stage=stage, digest=digest)
		module.load_state_dict(_module_tensors(best_checkpoint))
		logger.info("Stage '%s' done: best dev loss %.6f at epoch %s", stage, best, best_epoch)
		return {
			"stage": stage,
			"epochs_run": epochs_run,
			"best_epoch": best_epoch,
			"best_dev_loss": best,
			"checkpoint": str(best_path),
			"log": str(log_path),
			"config_digest": digest,
		}

	def _save(self, path, stage, digest, tensors, meta):
		save_checkpoint(path, Checkpoint(stage=stage, digest=digest, tensors=tensors, meta=meta))


def _module_tensors(checkpoint):
	return {name: value for name, value in checkpoint.tensors.items() if not name.startswith(OPTIMIZER_PREFIX)}


def _snap_to_checkpoint(module, optimizer):
	"""Continue from exactly what the last checkpoint holds, so a resumed run matches an unbroken one"""
	for _, p in module.named_parameters():
		p.data = to_binary32(p.data)
	optimizer.state.m = {name: to_binary32(m) for name, m in optimizer.state.m.items()}
	optimizer.state.v = {name: to_binary32(v) for name, v in optimizer.state.v.items()}
