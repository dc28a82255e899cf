"""
Conditional denoiser for the token diffusion.

A corrupted token grid k_t (indices in 0..M, M being [MASK]) is embedded,
given learned position embeddings and passed through full self-attention
blocks. The condition vector is the projected speech embedding plus a
learned timestep embedding, and enters every block through adaptive layer
normalization. The head predicts logits over the M clean tokens only.
"""

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.layers import Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from sta.numerics.tensor import Parameter, Tensor, no_grad

ADALN_MODES = ("scale_shift", "additive")


def adaln(h, cond, scale, shift):
	"""
	layer_norm(h) * (1 + scale(cond)) + shift(cond), per channel.

	Args:
	    h: (N, width) or (B, N, width)
	    cond: (width_c,) or (B, width_c)
	    scale, shift: Linear projections width_c -> width
	"""
	h = F.as_tensor(h)
	cond = F.as_tensor(cond)
	width = scale.weight.shape[1]
	if h.shape[-1] != width or cond.shape[-1] != scale.weight.shape[0]:
		raise sta.ValidationError(
			f"AdaLN widths disagree: features {h.shape[-1]}, condition {cond.shape[-1]}, "
			f"projection {scale.weight.shape}"
		)
	s = scale(cond)
	b = shift(cond)
	if h.ndim == 3:
		s = s.reshape(s.shape[0], 1, width)
		b = b.reshape(b.shape[0], 1, width)
	return F.layer_norm(h) * (s + 1.0) + b


class AdaLN(Module):
	def __init__(self, width, rng):
		self.scale = Linear(width, width, rng, zero_init=True)
		self.shift = Linear(width, width, rng, zero_init=True)

	def forward(self, h, cond):
		return adaln(h, cond, self.scale, self.shift)


class DenoiserBlock(Module):
	"""
	Pre-norm attention and feed-forward sublayers.

	`scale_shift` modulates both norms with AdaLN. `additive` keeps plain
	norms and adds a projection of the condition to the features after
	attention.
	"""

	def __init__(self, width, heads, rng, ffn_mult=4, mode="scale_shift"):
		self.mode = mode
		if mode == "scale_shift":
			self.norm1 = AdaLN(width, rng)
			self.norm2 = AdaLN(width, rng)
		else:
			self.norm1 = LayerNorm(width)
			self.norm2 = LayerNorm(width)
			self.inject = Linear(width, width, rng, zero_init=True)
		self.attn = MultiHeadAttention(width, heads, rng)
		self.ffn = FeedForward(width, ffn_mult, rng)

	def forward(self, h, cond):
		if self.mode == "scale_shift":
			h = h + self.attn(self.norm1(h, cond))
			return h + self.ffn(self.norm2(h, cond))
		b, _, width = h.shape
		h = h + self.attn(self.norm1(h))
		h = h + self.inject(cond).reshape(b, 1, width)
		return h + self.ffn(self.norm2(h))


class Denoiser(Module):
	def __init__(
		self,
		rng,
		codebook_size=64,
		n_tokens=16,
		T=100,
		d_emb=32,
		width=64,
		heads=4,
		blocks=4,
		ffn_mult=4,
		adaln_mode="scale_shift",
	):
		if blocks < 1:
			raise sta.ValidationError(f"Denoiser needs at least one block, got {blocks}")
		if adaln_mode not in ADALN_MODES:
			raise sta.ValidationError(f"Unknown AdaLN mode '{adaln_mode}'. Expected one of {ADALN_MODES}")
		self.codebook_size = codebook_size
		self.n_tokens = n_tokens
		self.T = T
		self.d_emb = d_emb
		self.tokens = Embedding(codebook_size + 1, width, rng)
		self.positions = Parameter(rng.normal(0.0, 0.02, size=(n_tokens, width)))
		self.timesteps = Embedding(T, width, rng)
		self.condition = Linear(d_emb, width, rng)
		self.blocks = [DenoiserBlock(width, heads, rng, ffn_mult, adaln_mode) for _ in range(blocks)]
		self.ln = LayerNorm(width)
		self.head = Linear(width, codebook_size, rng)

	def check_inputs(self, k_t, t, y):
		k_t = np.asarray(k_t, dtype=np.int64)
		t = np.asarray(t, dtype=np.int64).reshape(-1)
		y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
		M = self.codebook_size
		if k_t.ndim != 2 or k_t.shape[1] != self.n_tokens:
			raise sta.ValidationError(f"Token grids must be (B, {self.n_tokens}), got {k_t.shape}")
		if k_t.size and (k_t.min() < 0 or k_t.max() > M):
			raise sta.ValidationError(f"Token grid holds indices outside [0, {M}]: min {k_t.min()}, max {k_t.max()}")
		if t.shape != (k_t.shape[0],):
			raise sta.ValidationError(f"Need one timestep per grid: {t.shape[0]} for {k_t.shape[0]} grids")
		if t.size and (t.min() < 1 or t.max() > self.T):
			raise sta.ValidationError(f"Timestep outside [1, {self.T}]: min {t.min()}, max {t.max()}")
		if y.shape != (k_t.shape[0], self.d_emb):
			raise sta.ValidationError(f"Condition embeddings must be ({k_t.shape[0]}, {self.d_emb}), got {y.shape}")
		return k_t, t

	def forward(self, k_t, t, y):
		"""
		Args:
		    k_t: (B, N) ints in [0, M]
		    t: (B,) ints in [1, T]
		    y: (B, d_emb) speech embeddings

		Returns:
		    (B, N, M) logits over clean tokens
		"""
		k_t, t = self.check_inputs(k_t, t, y)
		cond = self.condition(F.as_tensor(y)) + self.timesteps(t - 1)
		h = self.tokens(k_t) + self.positions
		for block in self.blocks:
			h = block(h, cond)
		return self.head(self.ln(h))


def denoise_logits(denoiser, k_t, t, y):
	"""
	Evaluate the denoiser without building a graph.

	Accepts one grid (N,) with a scalar t and a (d_emb,) embedding, or a
	batch. Returns (N, M) or (B, N, M) logits as an array.
	"""
	k_t = np.asarray(k_t, dtype=np.int64)
	single = k_t.ndim == 1
	if single:
		k_t = k_t[None]
		t = np.asarray([t])
		y = np.asarray(y, dtype=np.float64)[None]
	with no_grad():
		logits = denoiser(k_t, t, y).data
	F.check_finite(logits, "denoiser logits")
	return logits[0] if single else logits


def condition_parameter_names():
	return ("condition.weight",)


def freeze_condition(denoiser):
	"""Zero the speech-embedding projection and return the names to keep frozen"""
	denoiser.condition.weight.data = np.zeros_like(denoiser.condition.weight.data)
	return condition_parameter_names()


def build_denoiser(config, rng):
	cfg = config.section("denoiser")
	side = config.get("data.image_size") // config.get("vqvae.stride")
	return Denoiser(
		rng,
		codebook_size=config.get("vqvae.codebook_size"),
		n_tokens=side * side,
		T=config.get("diffusion.T"),
		d_emb=config.get("encoder.d_emb"),
		width=cfg.width,
		heads=cfg.heads,
		blocks=cfg.blocks,
		ffn_mult=cfg.ffn_mult,
		adaln_mode=cfg.adaln_mode,
	)
