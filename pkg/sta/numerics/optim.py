from dataclasses import dataclass, field

import numpy as np

import sta


@dataclass
class OptimizerState:
	lr: float = 1e-3
	beta1: float = 0.9
	beta2: float = 0.999
	eps: float = 1e-8
	weight_decay: float = 0.0
	t: int = 0
	m: dict = field(default_factory=dict)
	v: dict = field(default_factory=dict)

	def copy(self):
		return OptimizerState(
			lr=self.lr,
			beta1=self.beta1,
			beta2=self.beta2,
			eps=self.eps,
			weight_decay=self.weight_decay,
			t=self.t,
			m={k: a.copy() for k, a in self.m.items()},
			v={k: a.copy() for k, a in self.v.items()},
		)


def adamw_step(params, grads, state, lr=None):
	"""
	One AdamW update. Pure: returns (new_params, new_state) and leaves inputs untouched.

	Args:
	    params: dict name -> ndarray
	    grads: dict name -> ndarray (names without a gradient are left as they are)
	    state: OptimizerState
	    lr: overrides state.lr for this step (warmup)
	"""
	lr = state.lr if lr is None else lr
	for name, g in grads.items():
		if g is None:
			continue
		if name not in params:
			raise sta.ValidationError(f"Gradient given for unknown parameter '{name}'")
		if np.shape(g) != np.shape(params[name]):
			raise sta.ValidationError(f"Gradient shape {np.shape(g)} does not match parameter '{name}' {np.shape(params[name])}")
		if not np.all(np.isfinite(g)):
			raise sta.NumericalError(f"Non-finite gradient for parameter '{name}'; step rejected")

	new_state = state.copy()
	new_state.t = state.t + 1
	t = new_state.t
	bias1 = 1.0 - state.beta1**t
	bias2 = 1.0 - state.beta2**t

	new_params = {}
	for name, p in params.items():
		g = grads.get(name)
		if g is None:
			new_params[name] = p.copy()
			continue
		m = new_state.m.get(name, np.zeros_like(p))
		v = new_state.v.get(name, np.zeros_like(p))
		m = state.beta1 * m + (1.0 - state.beta1) * g
		v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
		new_state.m[name] = m
		new_state.v[name] = v

		updated = p * (1.0 - lr * state.weight_decay)
		updated = updated - lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
		new_params[name] = updated
	return new_params, new_state


class AdamW:
	"""
	In-place AdamW over named Parameters.

	Parameters listed in `frozen` are never updated.
	"""

	def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, frozen=()):
		self.params = {name: p for name, p in named_params if name not in set(frozen)}
		self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
		self.last_lr = lr

	def zero_grad(self):
		for p in self.params.values():
			p.grad = None

	def step(self, lr=None):
		self.last_lr = self.state.lr if lr is None else lr
		current = {name: p.data for name, p in self.params.items()}
		grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
		new_params, self.state = adamw_step(current, grads, self.state, lr=lr)
		for name, p in self.params.items():
			p.data = new_params[name]

	def reset_moments(self, name, rows):
		"""Zero both moment estimates of some rows of one parameter"""
		for moments in (self.state.m, self.state.v):
			if name in moments:
				moments[name][rows] = 0.0

	def state_dict(self):
		tensors = {}
		for name, m in self.state.m.items():
			tensors[f"m.{name}"] = m
		for name, v in self.state.v.items():
			tensors[f"v.{name}"] = v
		return {"t": self.state.t, "tensors": tensors}

	def load_state_dict(self, saved):
		self.state.t = int(saved["t"])
		self.state.m = {k[2:]: np.array(a) for k, a in saved["tensors"].items() if k.startswith("m.")}
		self.state.v = {k[2:]: np.array(a) for k, a in saved["tensors"].items() if k.startswith("v.")}


def warmup_lr(base_lr, step, warmup_iters):
	"""Linear warmup to `base_lr` over `warmup_iters` steps, constant afterwards"""
	if warmup_iters <= 0:
		return base_lr
	return base_lr * min(1.0, (step + 1) / warmup_iters)
