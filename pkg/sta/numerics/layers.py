"""
Trainable building blocks over `sta.numerics.tensor`.

A Module discovers its Parameters (and child Modules, including lists of
them) from its attributes, in assignment order, so parameter names are
stable across runs: `blocks.0.attn.query.weight`.
"""

import hashlib
import math

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.tensor import Parameter, Tensor


class Module:
	def forward(self, *args, **kwargs):
		raise NotImplementedError

	def __call__(self, *args, **kwargs):
		return self.forward(*args, **kwargs)

	def named_parameters(self, prefix=""):
		for name, value in vars(self).items():
			if isinstance(value, Parameter):
				yield prefix + name, value
			elif isinstance(value, Module):
				yield from value.named_parameters(f"{prefix}{name}.")
			elif isinstance(value, (list, tuple)):
				for i, item in enumerate(value):
					if isinstance(item, Module):
						yield from item.named_parameters(f"{prefix}{name}.{i}.")

	def parameters(self):
		return [p for _, p in self.named_parameters()]

	def zero_grad(self):
		for p in self.parameters():
			p.grad = None

	def state_dict(self):
		return {name: p.data.copy() for name, p in self.named_parameters()}

	def load_state_dict(self, state, strict=True):
		own = dict(self.named_parameters())
		if strict:
			missing = sorted(set(own) - set(state))
			unexpected = sorted(set(state) - set(own))
			if missing or unexpected:
				raise sta.ValidationError(f"State mismatch. Missing: {missing[:5]} Unexpected: {unexpected[:5]}")
		for name, value in state.items():
			if name not in own:
				continue
			value = np.asarray(value, dtype=np.float64)
			if value.shape != own[name].shape:
				raise sta.ValidationError(f"Shape mismatch for '{name}': checkpoint {value.shape}, model {own[name].shape}")
			own[name].data = value.copy()

	def checksum(self):
		"""Stable digest of all parameter values"""
		digest = hashlib.sha256()
		for name, p in self.named_parameters():
			digest.update(name.encode())
			digest.update(np.ascontiguousarray(p.data).tobytes())
		return digest.hexdigest()


def xavier(rng, n_in, n_out, shape=None):
	limit = math.sqrt(6.0 / (n_in + n_out))
	return rng.uniform(-limit, limit, size=shape or (n_in, n_out))


class Linear(Module):
	def __init__(self, n_in, n_out, rng, bias=True, zero_init=False):
		self.weight = Parameter(np.zeros((n_in, n_out)) if zero_init else xavier(rng, n_in, n_out))
		if bias:
			self.bias = Parameter(np.zeros(n_out))

	def forward(self, x):
		out = F.matmul(x, self.weight) if x.ndim >= 2 else F.matmul(x.reshape(1, -1), self.weight).reshape(-1)
		if hasattr(self, "bias"):
			out = out + self.bias
		return out


class Embedding(Module):
	def __init__(self, n, dim, rng, scale=0.02):
		self.table = Parameter(rng.normal(0.0, scale, size=(n, dim)))

	def forward(self, indices):
		return F.take(self.table, indices)


class LayerNorm(Module):
	def __init__(self, dim, eps=1e-5):
		self.gain = Parameter(np.ones(dim))
		self.bias = Parameter(np.zeros(dim))
		self.eps = eps

	def forward(self, x):
		return F.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
	"""Full (bidirectional) self-attention over (B, L, width)"""

	def __init__(self, width, heads, rng):
		if width % heads:
			raise sta.ValidationError(f"width {width} is not divisible by {heads} heads")
		self.heads = heads
		self.query = Linear(width, width, rng)
		self.key = Linear(width, width, rng)
		self.value = Linear(width, width, rng)
		self.out = Linear(width, width, rng)

	def _split(self, x):
		b, length, width = x.shape
		return x.reshape(b, length, self.heads, width // self.heads).transpose(0, 2, 1, 3)

	def forward(self, x, key_mask=None):
		"""
		Args:
		    x: (B, L, width)
		    key_mask: optional bool array (B, L); False keys receive no attention
		"""
		b, length, width = x.shape
		head_dim = width // self.heads
		q = self._split(self.query(x))
		k = self._split(self.key(x))
		v = self._split(self.value(x))

		scores = F.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
		if key_mask is not None:
			penalty = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e9)[:, None, None, :]
			scores = scores + penalty
		weights = F.softmax(scores, axis=-1)
		context = F.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, length, width)
		return self.out(context)


class FeedForward(Module):
	def __init__(self, width, mult, rng):
		self.fc1 = Linear(width, width * mult, rng)
		self.fc2 = Linear(width * mult, width, rng)

	def forward(self, x):
		return self.fc2(F.gelu(self.fc1(x)))


class TransformerLayer(Module):
	"""Pre-norm encoder layer: x + attn(ln(x)), then x + ffn(ln(x))"""

	def __init__(self, width, heads, rng, ffn_mult=4):
		self.ln1 = LayerNorm(width)
		self.attn = MultiHeadAttention(width, heads, rng)
		self.ln2 = LayerNorm(width)
		self.ffn = FeedForward(width, ffn_mult, rng)

	def forward(self, x, key_mask=None):
		x = x + self.attn(self.ln1(x), key_mask=key_mask)
		return x + self.ffn(self.ln2(x))


class Conv1d(Module):
	"""Stride-1 'same' convolution over (B, L, C) built from shifted copies"""

	def __init__(self, c_in, c_out, kernel, rng):
		if kernel % 2 == 0:
			raise sta.ValidationError(f"Conv1d kernel must be odd, got {kernel}")
		self.kernel = kernel
		self.proj = Linear(c_in * kernel, c_out, rng)

	def forward(self, x):
		radius = self.kernel // 2
		shifted = [shift_sequence(x, offset) for offset in range(-radius, radius + 1)]
		return self.proj(F.concat(shifted, axis=-1))


def shift_sequence(x, offset):
	"""out[:, i] = x[:, i + offset], zero outside the sequence"""
	if offset == 0:
		return x
	b, length, c = x.shape
	n = min(abs(offset), length)
	zeros = Tensor(np.zeros((b, n, c)))
	if offset > 0:
		return F.concat([x[:, n:, :], zeros], axis=1)
	return F.concat([zeros, x[:, : length - n, :]], axis=1)


def patchify(x, p):
	"""(B, H, W, C) -> (B, H/p, W/p, p*p*C) with non-overlapping p x p patches"""
	b, h, w, c = x.shape
	if h % p or w % p:
		raise sta.ValidationError(f"Extents {h}x{w} are not divisible by patch size {p}")
	x = x.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
	return x.reshape(b, h // p, w // p, p * p * c)


def unpatchify(x, p):
	"""(B, h, w, p*p*C) -> (B, h*p, w*p, C); inverse of `patchify`"""
	b, h, w, d = x.shape
	c = d // (p * p)
	x = x.reshape(b, h, w, p, p, c).transpose(0, 1, 3, 2, 4, 5)
	return x.reshape(b, h * p, w * p, c)


class PatchConv2d(Module):
	"""Convolution with kernel == stride == p over (B, H, W, C)"""

	def __init__(self, c_in, c_out, p, rng):
		self.p = p
		self.proj = Linear(p * p * c_in, c_out, rng)

	def forward(self, x):
		return self.proj(patchify(x, self.p))


class PatchConvTranspose2d(Module):
	"""Transposed convolution with kernel == stride == p over (B, h, w, C)"""

	def __init__(self, c_in, c_out, p, rng):
		self.p = p
		self.proj = Linear(c_in, p * p * c_out, rng)

	def forward(self, x):
		return unpatchify(self.proj(x), self.p)
