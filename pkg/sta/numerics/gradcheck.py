import numpy as np

from sta.numerics.tensor import Tensor


def numerical_gradient(f, x, eps=1e-5):
	"""Central differences of scalar `f(x)` with respect to every entry of `x`"""
	x.data = np.ascontiguousarray(x.data)
	flat = x.data.reshape(-1)
	grad = np.zeros(flat.shape[0])
	for i in range(flat.shape[0]):
		original = flat[i]
		flat[i] = original + eps
		upper = _scalar(f(x))
		flat[i] = original - eps
		lower = _scalar(f(x))
		flat[i] = original
		grad[i] = (upper - lower) / (2.0 * eps)
	return grad.reshape(x.shape)


def analytic_gradient(f, x):
	"""Reverse-mode gradient of scalar `f(x)`"""
	requires_grad, x.requires_grad = x.requires_grad, True
	x.grad = None
	try:
		out = f(x)
		if out.requires_grad:
			out.backward()
		grad = x.grad if x.grad is not None else np.zeros_like(x.data)
	finally:
		x.grad = None
		x.requires_grad = requires_grad
	return np.array(grad)


def relative_error(analytic, numeric):
	scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
	return float(np.linalg.norm(analytic - numeric) / scale)


def finite_difference_check(f, x, eps=1e-5):
	"""
	Compare reverse-mode and central-difference gradients of a scalar map.

	Returns:
	    max relative error, as ||analytic - numeric|| / max(||analytic||, ||numeric||)
	"""
	analytic = analytic_gradient(f, x)
	numeric = numerical_gradient(f, x, eps=eps)
	return relative_error(analytic, numeric)


def check_parameters(loss_fn, named_params, eps=1e-5):
	"""
	Run `finite_difference_check` on each parameter of a model.

	`loss_fn()` rebuilds the graph from the current parameter values.
	Returns dict name -> relative error.
	"""
	errors = {}
	for name, param in named_params:
		errors[name] = finite_difference_check(lambda _p: loss_fn(), param, eps=eps)
	return errors


def _scalar(value):
	if isinstance(value, Tensor):
		return value.item()
	return float(value)
