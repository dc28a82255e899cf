import logging
from dataclasses import dataclass

import numpy as np

import sta
from sta.denoiser.model import build_denoiser, freeze_condition
from sta.diffusion.process import diffusion_training_loss, forward_sample
from sta.diffusion.schedule import schedule_from_config
from sta.encoder.speech import embed_captions
from sta.numerics.optim import AdamW, warmup_lr
from sta.numerics.tensor import no_grad
from sta.vq.codec import encode_images

logger = logging.getLogger(__name__)

# dev loss draws its timesteps and corruptions from this fixed seed every epoch
DEV_SEED = 0


@dataclass
class TokenPairs:
	"""Clean token grids with the speech embedding of one of their captions"""

	tokens: np.ndarray
	embeddings: np.ndarray
	scene_index: np.ndarray

	def __len__(self):
		return len(self.tokens)

	def subset(self, index):
		return TokenPairs(self.tokens[index], self.embeddings[index], self.scene_index[index])


def token_pairs(manifest, split, codec, encoder, languages=None):
	"""
	One pair per (record, language) of a split: the frozen codec's tokens for
	the record's image and the frozen encoder's embedding of the caption.
	"""
	languages = languages or manifest.languages
	records = manifest.split(split)
	if not records:
		raise sta.ValidationError(f"Split '{split}' is empty")
	scenes = manifest.scenes(split)
	grids = encode_images(codec, np.stack([manifest.load_image(r) for r in scenes]))
	grid_of = {r.scene_index: grids[i] for i, r in enumerate(scenes)}

	captions, tokens, index = [], [], []
	for record in records:
		for language in languages:
			if language in record.captions:
				captions.append(manifest.load_caption(record, language))
				tokens.append(grid_of[record.scene_index])
				index.append(record.scene_index)
	return TokenPairs(
		tokens=np.stack(tokens),
		embeddings=embed_captions(encoder, captions),
		scene_index=np.asarray(index, dtype=np.int64),
	)


def _batch_loss(denoiser, pairs, schedule, rng, lam):
	t = rng.integers(1, schedule.T + 1, size=len(pairs))
	k_t = forward_sample(pairs.tokens, t, schedule, rng)
	logits = denoiser(k_t, t, pairs.embeddings)
	return diffusion_training_loss(logits, pairs.tokens, k_t, t, schedule, lam)


def train_denoiser_epoch(denoiser, pairs, optimizer, schedule, batch_size, rng, lam=0.001, warmup_iters=0):
	"""
	One shuffled pass: every sample gets its own t ~ U{1..T} and corruption.

	The learning rate warms up linearly over the first `warmup_iters`
	optimizer steps, counted across epochs, then stays at the base rate.

	Returns:
	    mean batch loss
	"""
	if len(pairs) == 0:
		raise sta.ValidationError("No token pairs to train on")
	order = rng.permutation(len(pairs))
	losses = []
	for start in range(0, len(order), batch_size):
		batch = pairs.subset(order[start : start + batch_size])
		optimizer.zero_grad()
		loss = _batch_loss(denoiser, batch, schedule, rng, lam)
		loss.backward()
		optimizer.step(lr=warmup_lr(optimizer.state.lr, optimizer.state.t, warmup_iters))
		losses.append(loss.item())
	return float(np.mean(losses))


def evaluate_denoiser(denoiser, pairs, schedule, batch_size, lam=0.001, seed=DEV_SEED):
	"""Mean loss with timesteps and corruptions drawn from a fixed seed"""
	rng = np.random.default_rng(seed)
	losses = []
	with no_grad():
		for start in range(0, len(pairs), batch_size):
			batch = pairs.subset(np.arange(start, min(start + batch_size, len(pairs))))
			losses.append(_batch_loss(denoiser, batch, schedule, rng, lam).item())
	return float(np.mean(losses)) if losses else float("nan")


def train_denoiser(engine, resume=False):
	"""Train the conditional denoiser on top of the frozen codec and speech encoder"""
	cfg = engine.config.section("diffusion")
	codec = engine.load_stage("vqvae")
	encoder = engine.load_stage("encoder")
	frozen_checksums = (codec.checksum(), encoder.checksum())

	rng = engine.stage_rng("diffusion")
	schedule = schedule_from_config(engine.config, codec.codebook_size)
	denoiser = build_denoiser(engine.config, rng)
	frozen = ()
	if engine.config.get("denoiser.freeze_condition"):
		frozen = freeze_condition(denoiser)
		logger.info("Condition projection frozen at zero")
	optimizer = AdamW(denoiser.named_parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), frozen=frozen)

	train_pairs = token_pairs(engine.manifest, "train", codec, encoder, engine.config.languages)
	dev_pairs = token_pairs(engine.manifest, "dev", codec, encoder, engine.config.languages)
	logger.info("Denoiser training on %d pairs, validating on %d", len(train_pairs), len(dev_pairs))

	def run_epoch(epoch):
		return train_denoiser_epoch(
			denoiser,
			train_pairs,
			optimizer,
			schedule,
			cfg.batch,
			rng,
			lam=getattr(cfg, "lambda"),
			warmup_iters=cfg.warmup_iters,
		)

	def evaluate():
		return evaluate_denoiser(denoiser, dev_pairs, schedule, cfg.batch, lam=getattr(cfg, "lambda"))

	result = engine.fit(
		"diffusion",
		denoiser,
		optimizer,
		rng,
		epochs=cfg.epochs,
		run_epoch=run_epoch,
		evaluate=evaluate,
		patience=cfg.patience,
		resume=resume,
		meta={"schedule": schedule.as_dict()},
	)
	if (codec.checksum(), encoder.checksum()) != frozen_checksums:
		raise sta.ChecksumError("A frozen stage changed during diffusion training")
	result["schedule"] = schedule.as_dict()
	return result
