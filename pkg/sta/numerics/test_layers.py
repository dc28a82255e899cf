# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import unittest

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.gradcheck import check_parameters, finite_difference_check
from sta.numerics.layers import (
	Conv1d,
	MultiHeadAttention,
	PatchConv2d,
	PatchConvTranspose2d,
	TransformerLayer,
	patchify,
	shift_sequence,
	unpatchify,
)
from sta.numerics.tensor import Parameter, Tensor


class TestAttention(unittest.TestCase):
	def test_gradients_over_seeds(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			attn = MultiHeadAttention(8, 2, rng)
			x = Parameter(rng.normal(size=(2, 3, 8)))
			w = rng.normal(size=(2, 3, 8))
			self.assertLess(finite_difference_check(lambda t: (attn(t) * w).sum(), x), 1e-4)
			errors = check_parameters(lambda: (attn(x) * w).sum(), attn.named_parameters())
			self.assertLess(max(errors.values()), 1e-4)

	def test_masked_keys_do_not_leak(self):
		rng = np.random.default_rng(0)
		attn = MultiHeadAttention(8, 2, rng)
		x = rng.normal(size=(1, 4, 8))
		mask = np.array([[True, True, False, False]])
		base = attn(Tensor(x), key_mask=mask).data
		x[0, 2:] = rng.normal(size=(2, 8)) * 10
		changed = attn(Tensor(x), key_mask=mask).data
		np.testing.assert_allclose(base[0, :2], changed[0, :2], atol=1e-12)

	def test_width_must_split_into_heads(self):
		with self.assertRaises(sta.ValidationError):
			MultiHeadAttention(10, 3, np.random.default_rng(0))

	def test_permutation_equivariance(self):
		rng = np.random.default_rng(1)
		layer = TransformerLayer(8, 2, rng)
		x = rng.normal(size=(1, 5, 8))
		perm = np.array([3, 0, 4, 1, 2])
		out = layer(Tensor(x)).data
		permuted = layer(Tensor(x[:, perm])).data
		np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)


class TestTransformerLayer(unittest.TestCase):
	def test_gradients_over_seeds(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			layer = TransformerLayer(8, 2, rng, ffn_mult=2)
			x = Parameter(rng.normal(size=(2, 3, 8)))
			w = rng.normal(size=(2, 3, 8))
			self.assertLess(finite_difference_check(lambda t: (layer(t) * w).sum(), x), 1e-4)


class TestConvolutions(unittest.TestCase):
	def test_shift_sequence(self):
		x = Tensor(np.arange(1.0, 5.0).reshape(1, 4, 1))
		np.testing.assert_array_equal(shift_sequence(x, 1).data[0, :, 0], [2, 3, 4, 0])
		np.testing.assert_array_equal(shift_sequence(x, -1).data[0, :, 0], [0, 1, 2, 3])

	def test_conv1d_gradients(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			conv = Conv1d(3, 4, 3, rng)
			x = Parameter(rng.normal(size=(2, 5, 3)))
			w = rng.normal(size=(2, 5, 4))
			self.assertLess(finite_difference_check(lambda t: (conv(t) * w).sum(), x), 1e-4)

	def test_patchify_inverse(self):
		x = np.random.default_rng(2).normal(size=(2, 8, 8, 3))
		back = unpatchify(patchify(Tensor(x), 2), 2).data
		np.testing.assert_array_equal(back, x)

	def test_patchify_rejects_indivisible(self):
		with self.assertRaises(sta.ValidationError):
			patchify(Tensor(np.zeros((1, 6, 6, 3))), 4)

	def test_patch_conv_shapes_and_gradients(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			down = PatchConv2d(3, 5, 2, rng)
			up = PatchConvTranspose2d(5, 3, 2, rng)
			x = Parameter(rng.normal(size=(1, 4, 4, 3)))
			self.assertEqual(down(x).shape, (1, 2, 2, 5))
			self.assertEqual(up(down(x)).shape, (1, 4, 4, 3))
			self.assertLess(finite_difference_check(lambda t: (F.tanh(up(down(t))) ** 2).sum(), x), 1e-4)
