import logging
from dataclasses import dataclass

import numpy as np

import sta
from sta.encoder.contrastive import contrastive_loss
from sta.encoder.speech import build_encoder, pad_captions
from sta.encoder.teacher import build_teacher, embed_image_teacher
from sta.numerics.optim import AdamW
from sta.numerics.tensor import no_grad

logger = logging.getLogger(__name__)


@dataclass
class CaptionPair:
	"""One spoken caption with the teacher embedding of its image"""

	frames: np.ndarray
	target: np.ndarray
	scene_index: int
	language: str
	speaker: str


def caption_pairs(manifest, split, teacher, languages=None):
	"""Every (caption, teacher embedding) pair of a split, in manifest order"""
	languages = languages or manifest.languages
	targets = {}
	pairs = []
	for record in manifest.split(split):
		if record.scene_index not in targets:
			targets[record.scene_index] = embed_image_teacher(manifest.load_image(record), teacher)
		for language in languages:
			if language not in record.captions:
				continue
			pairs.append(
				CaptionPair(
					frames=manifest.load_caption(record, language),
					target=targets[record.scene_index],
					scene_index=record.scene_index,
					language=language,
					speaker=record.speaker,
				)
			)
	return pairs


def _batch_loss(encoder, pairs):
	frames, mask = pad_captions([p.frames for p in pairs])
	y = encoder(frames, mask)
	x = np.stack([p.target for p in pairs])
	return contrastive_loss(x, y, encoder.temperature())


def train_encoder_epoch(encoder, pairs, optimizer, batch_size, rng):
	"""
	One shuffled pass over the training pairs.

	A trailing batch of fewer than 2 pairs is skipped since the contrastive
	loss needs at least one negative.

	Returns:
	    mean batch loss
	"""
	order = rng.permutation(len(pairs))
	losses = []
	for start in range(0, len(order), batch_size):
		batch = [pairs[i] for i in order[start : start + batch_size]]
		if len(batch) < 2:
			logger.debug("Skipping a trailing batch of %d pair(s)", len(batch))
			continue
		optimizer.zero_grad()
		loss = _batch_loss(encoder, batch)
		loss.backward()
		optimizer.step()
		encoder.clamp_logit_scale()
		losses.append(loss.item())
	if not losses:
		raise sta.ValidationError(f"No training batch of at least 2 pairs (have {len(pairs)} pairs)")
	return float(np.mean(losses))


def evaluate_encoder(encoder, pairs, batch_size):
	"""Mean contrastive loss over fixed, unshuffled batches"""
	losses = []
	with no_grad():
		for start in range(0, len(pairs), batch_size):
			batch = pairs[start : start + batch_size]
			if len(batch) >= 2:
				losses.append(_batch_loss(encoder, batch).item())
	return float(np.mean(losses)) if losses else float("nan")


def train_encoder(engine, resume=False):
	"""Align caption embeddings with the frozen teacher; keep the best dev loss"""
	cfg = engine.config.section("encoder")
	rng = engine.stage_rng("encoder")
	encoder = build_encoder(engine.config, rng)
	teacher = build_teacher(engine.config)
	optimizer = AdamW(encoder.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

	train_pairs = caption_pairs(engine.manifest, "train", teacher, engine.config.languages)
	dev_pairs = caption_pairs(engine.manifest, "dev", teacher, engine.config.languages)
	teacher_checksum = teacher.checksum()
	logger.info("Encoder training on %d pairs, validating on %d", len(train_pairs), len(dev_pairs))

	def run_epoch(epoch):
		return train_encoder_epoch(encoder, train_pairs, optimizer, cfg.batch, rng)

	def evaluate():
		return evaluate_encoder(encoder, dev_pairs, cfg.batch)

	result = engine.fit(
		"encoder",
		encoder,
		optimizer,
		rng,
		epochs=cfg.max_epochs,
		run_epoch=run_epoch,
		evaluate=evaluate,
		patience=cfg.patience,
		resume=resume,
	)
	if teacher.checksum() != teacher_checksum:
		raise sta.ChecksumError("Teacher embedder changed during encoder training")
	result["teacher_checksum"] = teacher_checksum
	return result
