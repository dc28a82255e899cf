import numpy as np

import sta
from sta.numerics import tensor as F


def contrastive_loss(x, y, tau):
	"""
	Symmetric InfoNCE between paired batches.

	Row i of the similarity matrix y @ x.T scores speech i against every
	image; the matched image sits on the diagonal. Cross entropy is taken
	over rows (speech -> image) and over columns (image -> speech) and
	the two directions are averaged.

	Args:
	    x: (B, d) image embeddings, unit norm
	    y: (B, d) speech embeddings, unit norm
	    tau: temperature, a positive float or a scalar Tensor
	"""
	x, y = F.as_tensor(x), F.as_tensor(y)
	tau_value = tau.item() if isinstance(tau, F.Tensor) else float(tau)
	if not tau_value > 0.0:
		raise sta.ValidationError(f"Contrastive temperature must be positive, got {tau_value}")
	if x.shape != y.shape or x.ndim != 2:
		raise sta.ValidationError(f"Contrastive batches must share a (B, d) shape, got {x.shape} and {y.shape}")
	b = x.shape[0]
	if b < 2:
		raise sta.ValidationError(f"Contrastive loss needs a batch of at least 2 pairs, got {b}")

	logits = F.matmul(y, x.T) / tau
	targets = np.arange(b)
	speech_to_image = F.cross_entropy(logits, targets)
	image_to_speech = F.cross_entropy(logits.T, targets)
	return (speech_to_image + image_to_speech) * 0.5


def matched_similarity_gap(x, y):
	"""Mean cosine of matched pairs minus mean cosine of mismatched pairs"""
	sims = np.asarray(y) @ np.asarray(x).T
	b = sims.shape[0]
	matched = np.trace(sims) / b
	mismatched = (sims.sum() - np.trace(sims)) / (b * (b - 1))
	return float(matched - mismatched)
