"""
Vector-quantized image codec.

Images (H, W, 3) pass through a stack of stride-2 patch convolutions to a
latent grid (H/stride, W/stride, d_code). Every latent is snapped to its
nearest codebook entry, and the entry indices, flattened row-major, form
the token grid that the diffusion stage works on. Index M (one past the
codebook) is reserved for [MASK] and is never decodable.
"""

import logging
import math

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.layers import Linear, Module, PatchConv2d, PatchConvTranspose2d
from sta.numerics.optim import AdamW
from sta.numerics.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


def quantize(latents, codebook):
	"""
	Map each latent row to its nearest codebook entry.

	Args:
	    latents: (N, d_code) array
	    codebook: (M, d_code) array

	Returns:
	    (indices (N,), quantized (N, d_code)); ties go to the lowest index
	"""
	latents = np.asarray(latents, dtype=np.float64)
	codebook = np.asarray(codebook, dtype=np.float64)
	if codebook.ndim != 2 or codebook.shape[0] == 0:
		raise sta.ValidationError("quantize needs a non-empty (M, d_code) codebook")
	if latents.ndim != 2 or latents.shape[1] != codebook.shape[1]:
		raise sta.ValidationError(f"Latents of shape {latents.shape} do not match codebook dimension {codebook.shape[1]}")
	diff = latents[:, None, :] - codebook[None, :, :]
	distances = (diff * diff).sum(axis=-1)
	indices = distances.argmin(axis=1)
	return indices, codebook[indices].copy()


class VqCodec(Module):
	def __init__(self, rng, stride=4, hidden=32, d_code=16, codebook_size=64, channels=3):
		if stride < 1 or stride & (stride - 1):
			raise sta.ValidationError(f"Codec stride must be a power of two, got {stride}")
		if codebook_size < 2:
			raise sta.ValidationError(f"Codebook needs at least 2 entries, got {codebook_size}")
		self.stride = stride
		self.d_code = d_code
		self.codebook_size = codebook_size
		self.channels = channels
		levels = int(math.log2(stride))

		widths = [channels] + [hidden] * levels
		self.down = [PatchConv2d(widths[i], widths[i + 1], 2, rng) for i in range(levels)]
		self.to_code = Linear(widths[-1], d_code, rng)
		if levels:
			self.from_code = Linear(d_code, hidden, rng)
			self.up = [PatchConvTranspose2d(hidden, hidden, 2, rng) for _ in range(levels - 1)]
			self.to_pixels = PatchConvTranspose2d(hidden, channels, 2, rng)
		else:
			self.to_pixels = Linear(d_code, channels, rng)
		limit = 1.0 / codebook_size
		self.codebook = Parameter(rng.uniform(-limit, limit, size=(codebook_size, d_code)))

	@property
	def mask_token(self):
		return self.codebook_size

	def check_extents(self, height, width):
		if height % self.stride or width % self.stride:
			raise sta.ValidationError(f"Image extents {height}x{width} must be divisible by the codec stride {self.stride}")

	def encode(self, images):
		"""(B, H, W, C) -> continuous latents (B, h, w, d_code)"""
		images = F.as_tensor(images)
		self.check_extents(images.shape[1], images.shape[2])
		h = images
		for conv in self.down:
			h = F.gelu(conv(h))
		return self.to_code(h)

	def decode(self, latents):
		"""(B, h, w, d_code) -> pixel predictions in (0, 1)"""
		latents = F.as_tensor(latents)
		if not self.down:
			return F.sigmoid(self.to_pixels(latents))
		h = F.gelu(self.from_code(latents))
		for conv in self.up:
			h = F.gelu(conv(h))
		return F.sigmoid(self.to_pixels(h))

	def grid_shape(self, image_size):
		return image_size // self.stride, image_size // self.stride


def encode_images(codec, images):
	"""(B, H, W, C) images -> (B, N) token grids"""
	images = np.asarray(images, dtype=np.float64)
	if images.ndim == 3:
		images = images[None]
	with no_grad():
		latents = codec.encode(images).data
	b, h, w, d = latents.shape
	indices, _ = quantize(latents.reshape(-1, d), codec.codebook.data)
	return indices.reshape(b, h * w)


def encode_image(codec, image):
	"""(H, W, C) image -> (N,) token grid"""
	return encode_images(codec, np.asarray(image)[None])[0]


def check_tokens(tokens, alphabet, what="token grid"):
	tokens = np.asarray(tokens)
	if tokens.size and (tokens.min() < 0 or tokens.max() >= alphabet):
		raise sta.ValidationError(f"{what} holds indices outside [0, {alphabet}): min {tokens.min()}, max {tokens.max()}")
	return tokens


def decode_tokens(codec, tokens):
	"""
	(N,) or (B, N) token grids -> images clamped to [0, 1].

	The grid is taken as square. [MASK] (index M) is rejected: sampling must
	resolve every position first.
	"""
	tokens = np.asarray(tokens, dtype=np.int64)
	single = tokens.ndim == 1
	if single:
		tokens = tokens[None]
	if np.any(tokens == codec.mask_token):
		raise sta.ValidationError("Cannot decode a token grid that still contains [MASK]")
	check_tokens(tokens, codec.codebook_size)
	side = math.isqrt(tokens.shape[1])
	if side * side != tokens.shape[1]:
		raise sta.ValidationError(f"Token grid of length {tokens.shape[1]} is not square")
	b = tokens.shape[0]
	latents = codec.codebook.data[tokens].reshape(b, side, side, codec.d_code)
	with no_grad():
		images = np.clip(codec.decode(latents).data, 0.0, 1.0)
	F.check_finite(images, "decoded images")
	return images[0] if single else images


class CodebookUsage:
	"""Counts, per codebook entry, the training steps since it was last selected"""

	def __init__(self, codebook_size, dead_code_steps=100):
		self.dead_code_steps = dead_code_steps
		self.idle = np.zeros(codebook_size, dtype=np.int64)

	def update(self, indices):
		used = np.zeros(len(self.idle), dtype=bool)
		used[np.asarray(indices).reshape(-1)] = True
		self.idle = np.where(used, 0, self.idle + 1)
		return np.flatnonzero(self.idle >= self.dead_code_steps)

	def state_dict(self):
		return {"idle": self.idle.tolist()}

	def load_state_dict(self, state):
		self.idle = np.asarray(state["idle"], dtype=np.int64)


def vq_train_step(codec, batch, optimizer, commitment=0.25, usage=None, rng=None):
	"""
	One optimization step on a batch of images.

	Loss = reconstruction MSE + codebook MSE + commitment * commitment MSE,
	with gradients passed straight through the quantizer to the encoder.

	Returns:
	    dict with reconstruction, codebook, commitment and total loss, and the
	    number of re-seeded codebook entries
	"""
	batch = np.asarray(batch, dtype=np.float64)
	if batch.ndim != 4 or batch.shape[0] == 0:
		raise sta.ValidationError(f"vq_train_step needs a non-empty (B, H, W, C) batch, got shape {batch.shape}")

	optimizer.zero_grad()
	z = codec.encode(batch)
	b, h, w, d = z.shape
	indices, _ = quantize(z.data.reshape(-1, d), codec.codebook.data)
	z_q = F.take(codec.codebook, indices).reshape(b, h, w, d)
	passthrough = z + Tensor(z_q.data - z.data)
	recon = codec.decode(passthrough)

	reconstruction = F.mean((recon - batch) ** 2)
	codebook_loss = F.mean((z_q - z.detach()) ** 2)
	commitment_loss = F.mean((z - z_q.detach()) ** 2)
	loss = reconstruction + codebook_loss + commitment * commitment_loss
	if not np.isfinite(loss.item()):
		raise sta.NumericalError(
			f"Non-finite VQ loss: reconstruction={reconstruction.item()}, codebook={codebook_loss.item()}, "
			f"commitment={commitment_loss.item()}"
		)
	loss.backward()
	optimizer.step()

	reseeded = np.zeros(0, dtype=np.int64)
	if usage is not None and "codebook" in optimizer.params:
		dead = usage.update(indices)
		if len(dead) and rng is not None:
			reseeded = reseed_dead_codes(codec, z.data.reshape(-1, d), dead, optimizer, usage, rng)

	return {
		"reseeded": len(reseeded),
		"reconstruction": reconstruction.item(),
		"codebook": codebook_loss.item(),
		"commitment": commitment_loss.item(),
		"loss": loss.item(),
	}


def reseed_dead_codes(codec, latents, dead, optimizer, usage, rng):
	"""
	Move dead codebook entries onto encoder outputs of the current batch.

	Seeds are distinct latent rows that no live entry already equals, drawn
	without replacement; dead entries left over stay dead until a later
	batch offers enough distinct rows. The re-seeded rows start with fresh
	optimizer moments.

	Returns:
	    indices of the re-seeded entries
	"""
	codebook = codec.codebook.data
	live = np.setdiff1d(np.arange(len(codebook)), dead)
	candidates = np.unique(latents, axis=0)
	taken = (candidates[:, None, :] == codebook[live][None, :, :]).all(axis=-1).any(axis=1)
	candidates = candidates[~taken]
	count = min(len(dead), len(candidates))
	if count == 0:
		return np.zeros(0, dtype=np.int64)
	targets = np.asarray(dead)[:count]
	codebook[targets] = candidates[rng.choice(len(candidates), size=count, replace=False)]
	optimizer.reset_moments("codebook", targets)
	usage.idle[targets] = 0
	logger.debug("Re-seeded %d of %d unused codebook entries", count, len(dead))
	return targets


def reconstruction_mse(codec, images, batch_size=64):
	"""Mean squared error of decode(encode(x)) through the discrete bottleneck"""
	images = np.asarray(images, dtype=np.float64)
	total = 0.0
	for start in range(0, len(images), batch_size):
		chunk = images[start : start + batch_size]
		decoded = decode_tokens(codec, encode_images(codec, chunk))
		total += float(((decoded - chunk) ** 2).sum())
	return total / images.size


def build_codec(config, rng):
	cfg = config.section("vqvae")
	return VqCodec(
		rng,
		stride=cfg.stride,
		hidden=cfg.hidden,
		d_code=cfg.d_code,
		codebook_size=cfg.codebook_size,
	)


def codebook_is_distinct(codec, tolerance=0.0):
	entries = codec.codebook.data
	diff = entries[:, None, :] - entries[None, :, :]
	distances = np.sqrt((diff * diff).sum(axis=-1))
	np.fill_diagonal(distances, np.inf)
	return bool(distances.min() > tolerance)


def train_vqvae(engine, resume=False):
	"""Train the codec on the train-split images and keep the best dev reconstruction"""
	cfg = engine.config.section("vqvae")
	rng = engine.stage_rng("vqvae")
	codec = build_codec(engine.config, rng)
	optimizer = AdamW(
		codec.named_parameters(),
		lr=cfg.lr,
		frozen=("codebook",) if cfg.freeze_codebook else (),
	)
	usage = CodebookUsage(cfg.codebook_size, cfg.dead_code_steps)

	manifest = engine.manifest
	train_images = np.stack([manifest.load_image(r) for r in manifest.scenes("train")])
	dev_images = np.stack([manifest.load_image(r) for r in manifest.scenes("dev")])

	def run_epoch(epoch):
		order = rng.permutation(len(train_images))
		losses = []
		for start in range(0, len(order), cfg.batch):
			batch = train_images[order[start : start + cfg.batch]]
			losses.append(vq_train_step(codec, batch, optimizer, cfg.commitment, usage, rng)["loss"])
		return float(np.mean(losses))

	def evaluate():
		return reconstruction_mse(codec, dev_images)

	result = engine.fit(
		"vqvae",
		codec,
		optimizer,
		rng,
		epochs=cfg.epochs,
		run_epoch=run_epoch,
		evaluate=evaluate,
		extra_state=usage,
		resume=resume,
	)
	if not codebook_is_distinct(codec):
		raise sta.NumericalError("Codebook holds duplicate entries after training")
	return result
