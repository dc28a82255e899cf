"""
Evaluation classifier.

A small patch-convolution network trained once on every renderable scene
under Gaussian pixel noise, then frozen. Its penultimate activations are
the features FID and image retrieval use; its joint color x shape head
supplies the class probabilities for the inception score.
"""

import logging
from dataclasses import dataclass

import numpy as np

import sta
from sta.data.scenes import all_scenes, render
from sta.hooks import SCENE_COLORS, SCENE_POSITIONS, SCENE_SHAPES, SCENE_SIZES
from sta.numerics import tensor as F
from sta.numerics.layers import Linear, Module, PatchConv2d
from sta.numerics.optim import AdamW
from sta.numerics.tensor import no_grad

logger = logging.getLogger(__name__)

HEADS = {
	"shape": len(SCENE_SHAPES),
	"color": len(SCENE_COLORS),
	"size": len(SCENE_SIZES),
	"position": len(SCENE_POSITIONS),
	"joint": len(SCENE_COLORS) * len(SCENE_SHAPES),
}
# dev noise is redrawn from this seed at every evaluation
DEV_SEED = 1


def scene_labels(specs):
	"""Per-head integer labels; joint = color * n_shapes + shape"""
	rows = [spec.attribute_indices() for spec in specs]
	labels = {name: np.array([r[name] for r in rows], dtype=np.int64) for name in ("shape", "color", "size", "position")}
	labels["joint"] = labels["color"] * len(SCENE_SHAPES) + labels["shape"]
	return labels


class AttributeClassifier(Module):
	def __init__(self, rng, image_size=16, width=32, channels=3):
		if image_size % 4:
			raise sta.ValidationError(f"Evaluator needs an image size divisible by 4, got {image_size}")
		self.image_size = image_size
		self.width = width
		self.conv1 = PatchConv2d(channels, width, 2, rng)
		self.conv2 = PatchConv2d(width, width, 2, rng)
		self.features = Linear((image_size // 4) ** 2 * width, width, rng)
		self.heads = [Linear(width, n, rng) for n in HEADS.values()]

	def embed(self, images):
		"""(B, H, W, C) -> (B, width) penultimate features"""
		images = F.as_tensor(images)
		if images.ndim != 4 or images.shape[1:3] != (self.image_size, self.image_size):
			raise sta.ValidationError(f"Evaluator expects (B, {self.image_size}, {self.image_size}, C) images, got {images.shape}")
		h = F.gelu(self.conv2(F.gelu(self.conv1(images))))
		return F.gelu(self.features(h.reshape(h.shape[0], -1)))

	def forward(self, images):
		"""Returns (features, {head name: logits})"""
		h = self.embed(images)
		return h, {name: head(h) for name, head in zip(HEADS, self.heads, strict=True)}


def classifier_loss(classifier, images, labels):
	_, logits = classifier(images)
	losses = [F.cross_entropy(logits[name], labels[name]) for name in HEADS]
	total = losses[0]
	for loss in losses[1:]:
		total = total + loss
	return total


def _noisy(images, noise, rng):
	return np.clip(images + noise * rng.normal(size=images.shape), 0.0, 1.0)


def scene_images(image_size):
	specs = all_scenes()
	return specs, np.stack([render(spec, image_size) for spec in specs])


def train_evaluator_epoch(classifier, images, labels, optimizer, batch_size, noise, rng):
	order = rng.permutation(len(images))
	losses = []
	for start in range(0, len(order), batch_size):
		idx = order[start : start + batch_size]
		optimizer.zero_grad()
		loss = classifier_loss(classifier, _noisy(images[idx], noise, rng), {k: v[idx] for k, v in labels.items()})
		loss.backward()
		optimizer.step()
		losses.append(loss.item())
	return float(np.mean(losses))


def evaluate_evaluator(classifier, images, labels, noise, seed=DEV_SEED):
	rng = np.random.default_rng(seed)
	with no_grad():
		return classifier_loss(classifier, _noisy(images, noise, rng), labels).item()


@dataclass
class Extraction:
	features: np.ndarray
	probs: np.ndarray
	predictions: dict


def eval_feature_extractor(classifier, images, batch_size=128):
	"""
	Features, joint color x shape probabilities and per-head argmax labels
	for a stack of (H, W, C) images.
	"""
	images = np.asarray(images, dtype=np.float64)
	if images.ndim == 3:
		images = images[None]
	if len(images) == 0:
		raise sta.ValidationError("No images to extract features from")
	features, probs, predictions = [], [], {name: [] for name in HEADS}
	with no_grad():
		for start in range(0, len(images), batch_size):
			h, logits = classifier(images[start : start + batch_size])
			features.append(h.data)
			probs.append(F.softmax(logits["joint"], axis=-1).data)
			for name in HEADS:
				predictions[name].append(logits[name].data.argmax(axis=-1))
	return Extraction(
		features=F.check_finite(np.concatenate(features), "evaluator features"),
		probs=np.concatenate(probs),
		predictions={name: np.concatenate(values) for name, values in predictions.items()},
	)


def attribute_accuracy(classifier, images, specs):
	"""Per-head accuracy of the classifier against the scenes that produced `images`"""
	extraction = eval_feature_extractor(classifier, images)
	labels = scene_labels(specs)
	return {name: float(np.mean(extraction.predictions[name] == labels[name])) for name in HEADS}


def build_evaluator(config, rng):
	return AttributeClassifier(rng, image_size=config.get("data.image_size"), width=config.get("evaluator.width"))


def train_evaluator(engine, resume=False):
	"""Fit the attribute classifier on noisy renders of all scenes"""
	cfg = engine.config.section("evaluator")
	rng = engine.stage_rng("evaluator")
	classifier = build_evaluator(engine.config, rng)
	optimizer = AdamW(classifier.named_parameters(), lr=cfg.lr)
	specs, images = scene_images(engine.config.get("data.image_size"))
	labels = scene_labels(specs)

	def run_epoch(epoch):
		return train_evaluator_epoch(classifier, images, labels, optimizer, cfg.batch, cfg.noise, rng)

	def evaluate():
		return evaluate_evaluator(classifier, images, labels, cfg.noise)

	result = engine.fit(
		"evaluator",
		classifier,
		optimizer,
		rng,
		epochs=cfg.epochs,
		run_epoch=run_epoch,
		evaluate=evaluate,
		resume=resume,
	)
	accuracy = attribute_accuracy(classifier, _noisy(images, cfg.noise, np.random.default_rng(DEV_SEED)), specs)
	logger.info("Evaluator accuracy on noisy scenes: %s", accuracy)
	result["accuracy"] = accuracy
	return result
