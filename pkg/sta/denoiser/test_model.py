# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import unittest

import numpy as np

import sta
from sta.denoiser.model import AdaLN, Denoiser, adaln, denoise_logits, freeze_condition
from sta.diffusion.process import diffusion_training_loss, forward_sample
from sta.diffusion.schedule import ScheduleSpec, build_schedule
from sta.numerics import tensor as F
from sta.numerics.gradcheck import check_parameters, finite_difference_check
from sta.numerics.optim import AdamW
from sta.numerics.tensor import Parameter, Tensor

M, N, T, D = 3, 4, 3, 5


def _denoiser(seed=0, **kwargs):
	options = {"codebook_size": M, "n_tokens": N, "T": T, "d_emb": D, "width": 8, "heads": 2, "blocks": 1, "ffn_mult": 2}
	options.update(kwargs)
	return Denoiser(np.random.default_rng(seed), **options)


def _inputs(rng, b=2):
	k_t = rng.integers(M + 1, size=(b, N))
	t = rng.integers(1, T + 1, size=b)
	y = rng.normal(size=(b, D))
	return k_t, t, y


def _randomize_zero_init(model, rng):
	for _, p in model.named_parameters():
		if not np.any(p.data):
			p.data = rng.normal(0.0, 0.3, size=p.shape)


class TestAdaLN(unittest.TestCase):
	def test_zero_init_is_plain_layer_norm(self):
		rng = np.random.default_rng(0)
		norm = AdaLN(6, rng)
		h = rng.normal(size=(2, 4, 6))
		cond = rng.normal(size=(2, 6))
		np.testing.assert_array_equal(norm(h, cond).data, F.layer_norm(h).data)

	def test_scale_and_shift(self):
		rng = np.random.default_rng(1)
		norm = AdaLN(3, rng)
		norm.scale.bias.data = np.array([1.0, 0.0, -1.0])
		norm.shift.bias.data = np.array([0.5, 0.5, 0.5])
		h = rng.normal(size=(4, 3))
		expected = F.layer_norm(h).data * np.array([2.0, 1.0, 0.0]) + 0.5
		np.testing.assert_allclose(norm(h, np.zeros(3)).data, expected, atol=1e-12)

	def test_gradient_wrt_condition(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			norm = AdaLN(6, rng)
			_randomize_zero_init(norm, rng)
			h = rng.normal(size=(2, 3, 6))
			w = rng.normal(size=(2, 3, 6))
			cond = Parameter(rng.normal(size=(2, 6)))
			error = finite_difference_check(lambda c: (norm(h, c) * w).sum(), cond)
			self.assertLess(error, 1e-4, msg=f"seed {seed}")
			h_param = Parameter(h)
			error = finite_difference_check(lambda x: (norm(x, cond) * w).sum(), h_param)
			self.assertLess(error, 1e-4, msg=f"seed {seed}")

	def test_width_mismatch_rejected(self):
		norm = AdaLN(4, np.random.default_rng(0))
		with self.assertRaises(sta.ValidationError):
			adaln(np.zeros((2, 5)), np.zeros(4), norm.scale, norm.shift)


class TestDenoiser(unittest.TestCase):
	def test_output_shape(self):
		k_t, t, y = _inputs(np.random.default_rng(0), b=3)
		self.assertEqual(_denoiser()(k_t, t, y).shape, (3, N, M))
		self.assertEqual(denoise_logits(_denoiser(), k_t[0], int(t[0]), y[0]).shape, (N, M))

	def test_deterministic(self):
		k_t, t, y = _inputs(np.random.default_rng(1))
		a = denoise_logits(_denoiser(seed=4), k_t, t, y)
		b = denoise_logits(_denoiser(seed=4), k_t, t, y)
		np.testing.assert_array_equal(a, b)

	def test_condition_ignored_at_construction(self):
		for mode in ("scale_shift", "additive"):
			model = _denoiser(adaln_mode=mode)
			rng = np.random.default_rng(2)
			k_t, t, y = _inputs(rng)
			base = denoise_logits(model, k_t, t, y)
			other = denoise_logits(model, k_t, (t % T) + 1, rng.normal(size=y.shape))
			np.testing.assert_array_equal(base, other)

	def test_zero_condition_projection_ignores_speech(self):
		rng = np.random.default_rng(3)
		model = _denoiser()
		_randomize_zero_init(model, rng)
		freeze_condition(model)
		k_t, t, y = _inputs(rng)
		np.testing.assert_allclose(
			denoise_logits(model, k_t, t, y),
			denoise_logits(model, k_t, t, rng.normal(size=y.shape)),
			atol=1e-12,
		)

	def test_permutation_equivariance_without_positions(self):
		rng = np.random.default_rng(4)
		model = _denoiser()
		_randomize_zero_init(model, rng)
		model.positions.data[:] = 0.0
		k_t, t, y = _inputs(rng, b=1)
		perm = np.array([2, 0, 3, 1])
		out = denoise_logits(model, k_t, t, y)
		permuted = denoise_logits(model, k_t[:, perm], t, y)
		np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)

	def test_out_of_alphabet_rejected(self):
		model = _denoiser()
		_, t, y = _inputs(np.random.default_rng(5))
		with self.assertRaises(sta.ValidationError):
			model(np.full((2, N), M + 1), t, y)
		with self.assertRaises(sta.ValidationError):
			model(np.full((2, N), -1), t, y)

	def test_timestep_range(self):
		model = _denoiser()
		k_t, _, y = _inputs(np.random.default_rng(6))
		with self.assertRaises(sta.ValidationError):
			model(k_t, np.array([0, 1]), y)
		with self.assertRaises(sta.ValidationError):
			model(k_t, np.array([1, T + 1]), y)

	def test_invalid_construction(self):
		with self.assertRaises(sta.ValidationError):
			_denoiser(blocks=0)
		with self.assertRaises(sta.ValidationError):
			_denoiser(adaln_mode="cross")

	def test_parameter_gradients(self):
		for seed in range(5):
			rng = np.random.default_rng(seed)
			for mode in ("scale_shift", "additive"):
				model = _denoiser(seed, adaln_mode=mode)
				_randomize_zero_init(model, rng)
				k_t, t, y = _inputs(rng)
				w = rng.normal(size=(2, N, M))
				errors = check_parameters(
					lambda m=model, k=k_t, s=t, c=y, w=w: (m(k, s, c) * w).sum(), model.named_parameters()
				)
				self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed} {mode}: {errors}")

	def test_every_parameter_is_trained(self):
		schedule = build_schedule(T, ScheduleSpec(), M)
		for mode in ("scale_shift", "additive"):
			rng = np.random.default_rng(7)
			model = _denoiser(adaln_mode=mode)
			optimizer = AdamW(model.named_parameters(), lr=1e-2)
			touched = set()
			for _ in range(4):
				k0 = rng.integers(M, size=(6, N))
				t = rng.integers(1, T + 1, size=6)
				k_t = forward_sample(k0, t, schedule, rng)
				optimizer.zero_grad()
				loss = diffusion_training_loss(model(k_t, t, rng.normal(size=(6, D))), k0, k_t, t, schedule)
				loss.backward()
				touched |= {name for name, p in model.named_parameters() if p.grad is not None and np.any(p.grad)}
				optimizer.step()
			self.assertEqual(sorted(set(dict(model.named_parameters())) - touched), [], msg=mode)

	def test_logits_accept_tensor_condition(self):
		k_t, t, y = _inputs(np.random.default_rng(8))
		model = _denoiser()
		np.testing.assert_array_equal(model(k_t, t, Tensor(y)).data, model(k_t, t, y).data)
