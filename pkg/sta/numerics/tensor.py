"""
Dense float64 tensors with reverse-mode gradients.

Every op records its parents and a backward closure on the output node;
`Tensor.backward()` walks the recorded graph in reverse topological order
and accumulates into `.grad`. Nothing is recorded inside `no_grad()` or
when no parent requires a gradient.
"""

import contextlib
import math

import numpy as np

import sta

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
	global _grad_enabled
	previous = _grad_enabled
	_grad_enabled = False
	try:
		yield
	finally:
		_grad_enabled = previous


def is_grad_enabled():
	return _grad_enabled


def _unbroadcast(grad, shape):
	"""Sum `grad` down to `shape` (reverse of numpy broadcasting)"""
	while grad.ndim > len(shape):
		grad = grad.sum(axis=0)
	for axis, extent in enumerate(shape):
		if extent == 1 and grad.shape[axis] != 1:
			grad = grad.sum(axis=axis, keepdims=True)
	return grad


def _is_basic_index(idx):
	items = idx if isinstance(idx, tuple) else (idx,)
	return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _normalize_axes(axis, ndim):
	if axis is None:
		return tuple(range(ndim))
	if isinstance(axis, int):
		axis = (axis,)
	return tuple(a % ndim for a in axis)


class Tensor:
	# makes `ndarray <op> Tensor` defer to the reflected Tensor operator
	__array_priority__ = 100

	def __init__(self, data, requires_grad=False, _parents=(), _op=""):
		self.data = np.asarray(data, dtype=np.float64)
		self.grad = None
		self.requires_grad = requires_grad
		self._parents = _parents
		self._backward = None
		self._op = _op

	@property
	def shape(self):
		return self.data.shape

	@property
	def ndim(self):
		return self.data.ndim

	@property
	def size(self):
		return self.data.size

	@property
	def values(self):
		"""Row-major flat view of the data"""
		return self.data.reshape(-1)

	def item(self):
		if self.data.size != 1:
			raise sta.ValidationError(f"item() needs a single-element tensor, got shape {self.shape}")
		return float(self.data.reshape(-1)[0])

	def numpy(self):
		return self.data

	def __repr__(self):
		return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

	def zero_grad(self):
		self.grad = None

	def detach(self):
		return Tensor(self.data)

	def _accumulate(self, grad):
		if self.grad is None:
			self.grad = np.array(grad, dtype=np.float64, copy=True).reshape(self.shape)
		else:
			self.grad = self.grad + grad

	def backward(self, grad=None):
		if grad is None:
			if self.data.size != 1:
				raise sta.ValidationError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
			grad = np.ones_like(self.data)
		self._accumulate(np.asarray(grad, dtype=np.float64))

		for node in reversed(_topological_order(self)):
			if node._backward is not None and node.grad is not None:
				node._backward(node.grad)

	# operators

	def __add__(self, other):
		return add(self, other)

	def __radd__(self, other):
		return add(other, self)

	def __sub__(self, other):
		return sub(self, other)

	def __rsub__(self, other):
		return sub(other, self)

	def __mul__(self, other):
		return mul(self, other)

	def __rmul__(self, other):
		return mul(other, self)

	def __truediv__(self, other):
		return div(self, other)

	def __rtruediv__(self, other):
		return div(other, self)

	def __neg__(self):
		return mul(self, -1.0)

	def __pow__(self, exponent):
		return power(self, exponent)

	def __matmul__(self, other):
		return matmul(self, other)

	def __getitem__(self, idx):
		return getitem(self, idx)

	def sum(self, axis=None, keepdims=False):
		return tensor_sum(self, axis=axis, keepdims=keepdims)

	def mean(self, axis=None, keepdims=False):
		return mean(self, axis=axis, keepdims=keepdims)

	def reshape(self, *shape):
		if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
			shape = tuple(shape[0])
		return reshape(self, shape)

	def transpose(self, *axes):
		if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
			axes = tuple(axes[0])
		return transpose(self, axes or None)

	@property
	def T(self):
		return transpose(self, None)


class Parameter(Tensor):
	"""Leaf tensor that is trained"""

	def __init__(self, data):
		super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def as_tensor(value):
	return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root):
	order, seen = [], set()
	stack = [(root, False)]
	while stack:
		node, finished = stack.pop()
		if finished:
			order.append(node)
			continue
		if id(node) in seen:
			continue
		seen.add(id(node))
		stack.append((node, True))
		for parent in node._parents:
			if id(parent) not in seen:
				stack.append((parent, False))
	return order


def _node(data, parents, backward, op):
	needs_grad = _grad_enabled and any(p.requires_grad for p in parents)
	out = Tensor(data, requires_grad=needs_grad, _parents=parents if needs_grad else (), _op=op)
	if needs_grad:
		out._backward = backward
	return out


# elementwise arithmetic


def add(a, b):
	a, b = as_tensor(a), as_tensor(b)

	def backward(g):
		if a.requires_grad:
			a._accumulate(_unbroadcast(g, a.shape))
		if b.requires_grad:
			b._accumulate(_unbroadcast(g, b.shape))

	return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
	a, b = as_tensor(a), as_tensor(b)

	def backward(g):
		if a.requires_grad:
			a._accumulate(_unbroadcast(g, a.shape))
		if b.requires_grad:
			b._accumulate(_unbroadcast(-g, b.shape))

	return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
	a, b = as_tensor(a), as_tensor(b)

	def backward(g):
		if a.requires_grad:
			a._accumulate(_unbroadcast(g * b.data, a.shape))
		if b.requires_grad:
			b._accumulate(_unbroadcast(g * a.data, b.shape))

	return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
	a, b = as_tensor(a), as_tensor(b)

	def backward(g):
		if a.requires_grad:
			a._accumulate(_unbroadcast(g / b.data, a.shape))
		if b.requires_grad:
			b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

	return _node(a.data / b.data, (a, b), backward, "div")


def power(a, exponent):
	if isinstance(exponent, Tensor):
		raise sta.ValidationError("power() takes a constant exponent")
	a = as_tensor(a)

	def backward(g):
		a._accumulate(g * exponent * a.data ** (exponent - 1))

	return _node(a.data**exponent, (a,), backward, f"pow{exponent}")


def exp(a):
	a = as_tensor(a)
	out_data = np.exp(a.data)

	def backward(g):
		a._accumulate(g * out_data)

	return _node(out_data, (a,), backward, "exp")


def log(a):
	a = as_tensor(a)

	def backward(g):
		a._accumulate(g / a.data)

	return _node(np.log(a.data), (a,), backward, "log")


def sqrt(a):
	return power(a, 0.5)


def relu(a):
	a = as_tensor(a)

	def backward(g):
		a._accumulate(g * (a.data > 0))

	return _node(np.maximum(a.data, 0.0), (a,), backward, "relu")


def tanh(a):
	a = as_tensor(a)
	out_data = np.tanh(a.data)

	def backward(g):
		a._accumulate(g * (1.0 - out_data * out_data))

	return _node(out_data, (a,), backward, "tanh")


def sigmoid(a):
	a = as_tensor(a)
	out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

	def backward(g):
		a._accumulate(g * out_data * (1.0 - out_data))

	return _node(out_data, (a,), backward, "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
	"""tanh approximation of GELU"""
	a = as_tensor(a)
	x = a.data
	inner = _GELU_C * (x + 0.044715 * x**3)
	t = np.tanh(inner)

	def backward(g):
		d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
		a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

	return _node(0.5 * x * (1.0 + t), (a,), backward, "gelu")


# linear algebra and reductions


def matmul(a, b):
	a, b = as_tensor(a), as_tensor(b)
	if a.ndim < 2 or b.ndim < 2:
		raise sta.ValidationError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
	if a.shape[-1] != b.shape[-2]:
		raise sta.ValidationError(f"matmul inner extents disagree: {a.shape} @ {b.shape} ({a.shape[-1]} != {b.shape[-2]})")

	def backward(g):
		if a.requires_grad:
			a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
		if b.requires_grad:
			b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

	return _node(a.data @ b.data, (a, b), backward, "matmul")


def tensor_sum(a, axis=None, keepdims=False):
	a = as_tensor(a)
	axes = _normalize_axes(axis, a.ndim)

	def backward(g):
		if not keepdims:
			g = np.expand_dims(g, axes)
		a._accumulate(np.broadcast_to(g, a.shape))

	return _node(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
	a = as_tensor(a)
	count = 1
	for ax in _normalize_axes(axis, a.ndim):
		count *= a.shape[ax]
	return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
	a = as_tensor(a)

	def backward(g):
		a._accumulate(g.reshape(a.shape))

	return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes=None):
	a = as_tensor(a)
	if axes is None:
		axes = tuple(reversed(range(a.ndim)))
	inverse = tuple(np.argsort(axes))

	def backward(g):
		a._accumulate(g.transpose(inverse))

	return _node(a.data.transpose(axes), (a,), backward, "transpose")


def getitem(a, idx):
	a = as_tensor(a)
	basic = _is_basic_index(idx)

	def backward(g):
		full = np.zeros_like(a.data)
		if basic:
			full[idx] += g
		else:
			np.add.at(full, idx, g)
		a._accumulate(full)

	return _node(a.data[idx], (a,), backward, "getitem")


def take(table, indices):
	"""Row lookup `table[indices]`; the embedding-table gather"""
	table = as_tensor(table)
	indices = np.asarray(indices, dtype=np.int64)
	rows = table.shape[0]
	if indices.size and (indices.min() < 0 or indices.max() >= rows):
		raise sta.ValidationError(f"take: index out of range [0, {rows}): min {indices.min()}, max {indices.max()}")

	def backward(g):
		full = np.zeros_like(table.data)
		np.add.at(full, indices, g)
		table._accumulate(full)

	return _node(table.data[indices], (table,), backward, "take")


def concat(tensors, axis=0):
	tensors = [as_tensor(t) for t in tensors]
	axis = axis % tensors[0].ndim
	bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

	def backward(g):
		for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:], strict=True):
			if t.requires_grad:
				sl = [slice(None)] * g.ndim
				sl[axis] = slice(lo, hi)
				t._accumulate(g[tuple(sl)])

	return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


# normalization and probability kernels


def softmax(a, axis=-1):
	a = as_tensor(a)
	shifted = a.data - a.data.max(axis=axis, keepdims=True)
	e = np.exp(shifted)
	out_data = e / e.sum(axis=axis, keepdims=True)

	def backward(g):
		a._accumulate(out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)))

	return _node(out_data, (a,), backward, "softmax")


def log_softmax(a, axis=-1):
	a = as_tensor(a)
	shifted = a.data - a.data.max(axis=axis, keepdims=True)
	lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
	out_data = shifted - lse
	probs = np.exp(out_data)

	def backward(g):
		a._accumulate(g - probs * g.sum(axis=axis, keepdims=True))

	return _node(out_data, (a,), backward, "log_softmax")


def logsumexp(a, axis=-1, keepdims=False):
	"""log(sum(exp(a))) along `axis`; a slice of all -inf gives -inf with zero gradient"""
	a = as_tensor(a)
	peak = a.data.max(axis=axis, keepdims=True)
	peak = np.where(np.isfinite(peak), peak, 0.0)
	with np.errstate(divide="ignore"):
		out_keep = peak + np.log(np.exp(a.data - peak).sum(axis=axis, keepdims=True))
	weights = np.where(np.isfinite(out_keep), np.exp(a.data - np.where(np.isfinite(out_keep), out_keep, 0.0)), 0.0)
	out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

	def backward(g):
		g = g if keepdims else np.expand_dims(g, axis)
		a._accumulate(g * weights)

	return _node(out_data, (a,), backward, "logsumexp")


def layer_norm(x, gain=None, bias=None, eps=1e-5):
	"""Normalize over the last axis with population variance"""
	x = as_tensor(x)
	if x.shape[-1] < 1:
		raise sta.ValidationError("layer_norm needs a non-empty last axis")
	gain = as_tensor(gain) if gain is not None else None
	bias = as_tensor(bias) if bias is not None else None

	mu = x.data.mean(axis=-1, keepdims=True)
	centered = x.data - mu
	var = (centered * centered).mean(axis=-1, keepdims=True)
	inv_std = 1.0 / np.sqrt(var + eps)
	xhat = centered * inv_std
	out_data = xhat
	if gain is not None:
		out_data = out_data * gain.data
	if bias is not None:
		out_data = out_data + bias.data

	def backward(g):
		dxhat = g * gain.data if gain is not None else g
		if x.requires_grad:
			dx = inv_std * (
				dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
			)
			x._accumulate(dx)
		if gain is not None and gain.requires_grad:
			gain._accumulate(_unbroadcast(g * xhat, gain.shape))
		if bias is not None and bias.requires_grad:
			bias._accumulate(_unbroadcast(g, bias.shape))

	parents = tuple(t for t in (x, gain, bias) if t is not None)
	return _node(out_data, parents, backward, "layer_norm")


def cross_entropy(logits, targets):
	"""Mean of -log softmax(logits)[i, targets[i]] over rows"""
	logits = as_tensor(logits)
	targets = np.asarray(targets, dtype=np.int64).reshape(-1)
	if logits.ndim != 2:
		raise sta.ValidationError(f"cross_entropy expects logits of shape (n, C), got {logits.shape}")
	n, classes = logits.shape
	if targets.shape[0] != n:
		raise sta.ValidationError(f"cross_entropy: {targets.shape[0]} targets for {n} rows")
	if n and (targets.min() < 0 or targets.max() >= classes):
		raise sta.ValidationError(f"cross_entropy: target out of range [0, {classes}): min {targets.min()}, max {targets.max()}")

	shifted = logits.data - logits.data.max(axis=1, keepdims=True)
	log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
	rows = np.arange(n)
	loss = -log_probs[rows, targets].mean()

	def backward(g):
		grad = np.exp(log_probs)
		grad[rows, targets] -= 1.0
		logits._accumulate(grad * (g / n))

	return _node(np.asarray(loss), (logits,), backward, "cross_entropy")


def l2_normalize(x, axis=-1):
	x = as_tensor(x)
	norm = sqrt(tensor_sum(x * x, axis=axis, keepdims=True))
	return x / norm


def check_finite(tensor, what):
	data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
	if not np.all(np.isfinite(data)):
		bad = int(np.size(data) - np.isfinite(data).sum())
		raise sta.NumericalError(f"{what}: {bad} non-finite value(s) in tensor of shape {np.shape(data)}")
	return tensor
