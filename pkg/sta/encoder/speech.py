"""
Speech encoder: frame features -> one unit-norm embedding per caption.

A stack of 1-D convolutions extracts local features from the frames, a
learnable CLS vector is prepended, and transformer layers attend over the
whole sequence. The final CLS state, projected to d_emb and normalized, is
the caption embedding. Captions in a batch are zero-padded to a common
length; padded frames are re-zeroed after every convolution and masked out
of attention, so an embedding never depends on what it was batched with.
"""

import math

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.layers import Conv1d, LayerNorm, Linear, Module, TransformerLayer
from sta.numerics.tensor import Parameter, Tensor, no_grad

# initial logit scale 1/tau = 10, capped at 100
LOGIT_SCALE_INIT = math.log(10.0)
LOGIT_SCALE_MAX = math.log(100.0)


def sinusoidal_positions(length, width):
	positions = np.arange(length)[:, None]
	rates = np.exp(-math.log(10000.0) * (np.arange(0, width, 2) / width))
	table = np.zeros((length, width))
	table[:, 0::2] = np.sin(positions * rates)
	table[:, 1::2] = np.cos(positions * rates[: width // 2])
	return table


def pad_captions(captions):
	"""
	Zero-pad (L_i, d_frame) captions into one batch.

	Returns:
	    frames (B, L_max, d_frame), mask (B, L_max) with True on real frames
	"""
	if not captions:
		raise sta.ValidationError("Cannot pad an empty caption batch")
	lengths = [len(c) for c in captions]
	if min(lengths) < 1:
		raise sta.ValidationError("Every caption needs at least one frame")
	d_frame = np.shape(captions[0])[1]
	frames = np.zeros((len(captions), max(lengths), d_frame))
	mask = np.zeros((len(captions), max(lengths)), dtype=bool)
	for i, caption in enumerate(captions):
		if np.shape(caption)[1] != d_frame:
			raise sta.ValidationError(f"Caption {i} has {np.shape(caption)[1]} features per frame, expected {d_frame}")
		frames[i, : lengths[i]] = caption
		mask[i, : lengths[i]] = True
	return frames, mask


class SpeechEncoder(Module):
	def __init__(self, rng, d_frame=8, width=32, heads=4, layers=2, conv_layers=2, kernel=3, d_emb=32):
		self.width = width
		channels = [d_frame] + [width] * conv_layers
		self.convs = [Conv1d(channels[i], channels[i + 1], kernel, rng) for i in range(conv_layers)]
		self.input = Linear(channels[-1], width, rng)
		self.cls = Parameter(rng.normal(0.0, 0.02, size=width))
		self.layers = [TransformerLayer(width, heads, rng) for _ in range(layers)]
		self.ln = LayerNorm(width)
		self.head = Linear(width, d_emb, rng)
		self.logit_scale = Parameter(np.array(LOGIT_SCALE_INIT))

	def forward(self, frames, mask):
		"""
		Args:
		    frames: (B, L, d_frame) padded captions
		    mask: (B, L) bool, True on real frames

		Returns:
		    (B, d_emb) unit-norm embeddings
		"""
		mask = np.asarray(mask, dtype=bool)
		keep = mask[:, :, None].astype(np.float64)
		h = F.as_tensor(frames)
		for conv in self.convs:
			h = F.gelu(conv(h)) * keep
		h = self.input(h)
		b, length, _ = h.shape
		h = h + sinusoidal_positions(length + 1, self.width)[1:]

		cls = Tensor(np.zeros((b, 1, self.width))) + self.cls
		h = F.concat([cls, h], axis=1)
		key_mask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)
		for layer in self.layers:
			h = layer(h, key_mask=key_mask)

		pooled = self.head(self.ln(h[:, 0, :]))
		norms = np.sqrt((pooled.data * pooled.data).sum(axis=-1))
		if np.any(norms == 0.0):
			raise sta.NumericalError("Caption embedding has zero norm before normalization")
		return F.l2_normalize(pooled, axis=-1)

	def temperature(self):
		"""tau = 1 / exp(logit_scale) as a differentiable tensor"""
		return F.exp(self.logit_scale * -1.0)

	def clamp_logit_scale(self):
		self.logit_scale.data = np.minimum(self.logit_scale.data, LOGIT_SCALE_MAX)


def embed_captions(encoder, captions, batch_size=64):
	"""(L_i, d_frame) captions -> (n, d_emb) array"""
	out = []
	with no_grad():
		for start in range(0, len(captions), batch_size):
			frames, mask = pad_captions(captions[start : start + batch_size])
			out.append(encoder(frames, mask).data)
	return np.concatenate(out, axis=0)


def embed_caption(encoder, caption):
	"""Embed one (L, d_frame) caption"""
	caption = np.asarray(caption, dtype=np.float64)
	if caption.ndim != 2 or caption.shape[0] < 1:
		raise sta.ValidationError(f"A caption must be an (L >= 1, d_frame) matrix, got shape {caption.shape}")
	return embed_captions(encoder, [caption])[0]


def build_encoder(config, rng):
	cfg = config.section("encoder")
	return SpeechEncoder(
		rng,
		d_frame=config.get("data.d_frame"),
		width=cfg.width,
		heads=cfg.heads,
		layers=cfg.layers,
		conv_layers=cfg.conv_layers,
		kernel=cfg.kernel,
		d_emb=cfg.d_emb,
	)
