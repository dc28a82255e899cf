# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import itertools
import math
import unittest

import numpy as np

import sta
from sta.diffusion.process import (
	diffusion_loss_terms,
	diffusion_training_loss,
	forward_marginal,
	forward_sample,
	model_reverse,
	model_reverse_log,
	posterior,
	sample,
	transition_row,
)
from sta.diffusion.schedule import ScheduleSpec, build_schedule
from sta.diffusion.test_schedule import random_schedule
from sta.numerics.gradcheck import finite_difference_check
from sta.numerics.tensor import Parameter


def path_marginal(k0, t, schedule):
	"""q(k_t | k0) by summing over every corruption path of length t"""
	M = schedule.M
	paths = np.array(list(itertools.product(range(M + 1), repeat=t)))
	prob = np.ones(len(paths))
	prev = np.full(len(paths), k0)
	for step in range(1, t + 1):
		prob *= schedule.step_matrix(step)[prev, paths[:, step - 1]]
		prev = paths[:, step - 1]
	out = np.zeros(M + 1)
	np.add.at(out, paths[:, -1], prob)
	return out


def bayes_posterior(k_t, k0, t, schedule):
	"""q(k_{t-1} | k_t, k0) from explicit matrix chain products"""
	M = schedule.M
	prior = np.eye(M + 1)
	for step in range(1, t):
		prior = prior @ schedule.step_matrix(step)
	joint = prior[k0] * schedule.step_matrix(t)[:, k_t]
	return joint / joint.sum()


def explicit_loss(logits, k0, k_t, t, schedule):
	"""Variational term by direct summation over every candidate clean token"""
	M = schedule.M
	probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
	probs /= probs.sum(axis=-1, keepdims=True)
	reach = np.eye(M + 1)
	for step in range(1, t + 1):
		reach = reach @ schedule.step_matrix(step)
	total = 0.0
	for n in range(len(k0)):
		if t == 1:
			total -= math.log(probs[n, k0[n]])
			continue
		q = bayes_posterior(k_t[n], k0[n], t, schedule)
		reverse = np.zeros(M + 1)
		mass = 0.0
		for candidate in range(M):
			if reach[candidate, k_t[n]] == 0.0:
				continue
			reverse += probs[n, candidate] * bayes_posterior(k_t[n], candidate, t, schedule)
			mass += probs[n, candidate]
		reverse /= mass
		for s in range(M + 1):
			if q[s] > 0.0:
				total += q[s] * (math.log(q[s]) - math.log(reverse[s]))
	return total


class TestTransitionRow(unittest.TestCase):
	def test_worked_example(self):
		schedule = build_schedule(1, ScheduleSpec(kind="explicit", alphas=(0.5,), gammas=(0.3,)), 2)
		np.testing.assert_allclose(transition_row(0, 1, schedule), [0.6, 0.1, 0.3], atol=1e-15)

	def test_mask_absorbing(self):
		schedule = random_schedule(np.random.default_rng(0), 3, 2)
		np.testing.assert_array_equal(transition_row(3, 2, schedule), [0.0, 0.0, 0.0, 1.0])

	def test_full_gamma_sends_everything_to_mask(self):
		schedule = build_schedule(1, ScheduleSpec(kind="explicit", alphas=(0.0,), gammas=(1.0,)), 3)
		for i in range(3):
			np.testing.assert_array_equal(transition_row(i, 1, schedule), [0.0, 0.0, 0.0, 1.0])

	def test_out_of_range_state(self):
		schedule = random_schedule(np.random.default_rng(0), 3, 2)
		with self.assertRaises(sta.ValidationError):
			transition_row(4, 1, schedule)
		with self.assertRaises(sta.ValidationError):
			transition_row(-1, 1, schedule)


class TestForwardMarginal(unittest.TestCase):
	def test_matches_path_enumeration(self):
		rng = np.random.default_rng(0)
		for M in (2, 3, 4):
			for T in range(1, 6):
				for _ in range(50):
					schedule = random_schedule(rng, M, T)
					k0 = np.arange(M)
					for t in range(1, T + 1):
						closed = forward_marginal(k0, t, schedule)
						for i in range(M):
							np.testing.assert_allclose(closed[i], path_marginal(i, t, schedule), rtol=0, atol=1e-10)

	def test_identity_segment(self):
		schedule = build_schedule(2, ScheduleSpec(kind="explicit", alphas=(1.0, 1.0), gammas=(0.0, 0.0)), 3)
		np.testing.assert_array_equal(forward_marginal(np.array([2, 0]), 2, schedule), np.eye(4)[[2, 0]])

	def test_full_mask(self):
		schedule = build_schedule(2, ScheduleSpec(kind="explicit", alphas=(0.5, 0.0), gammas=(0.2, 1.0)), 3)
		np.testing.assert_array_equal(forward_marginal(np.array([0, 1, 2]), 2, schedule), np.eye(4)[[3, 3, 3]])

	def test_rows_sum_to_one_batched(self):
		schedule = build_schedule(100, ScheduleSpec(), 16)
		k0 = np.random.default_rng(1).integers(16, size=(4, 9))
		t = np.array([1, 30, 77, 100])
		rows = forward_marginal(k0, t, schedule)
		self.assertEqual(rows.shape, (4, 9, 17))
		np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-12)
		for b in range(4):
			np.testing.assert_array_equal(rows[b], forward_marginal(k0[b], int(t[b]), schedule))

	def test_timestep_out_of_range(self):
		schedule = random_schedule(np.random.default_rng(0), 3, 4)
		for t in (0, 5):
			with self.assertRaises(sta.ValidationError):
				forward_marginal(np.array([0]), t, schedule)

	def test_mask_in_k0_rejected(self):
		schedule = random_schedule(np.random.default_rng(0), 3, 4)
		with self.assertRaises(sta.ValidationError):
			forward_marginal(np.array([3]), 1, schedule)


class TestForwardSample(unittest.TestCase):
	def test_frequencies_match_marginal(self):
		schedule = random_schedule(np.random.default_rng(4), 3, 4)
		k0 = np.full(100_000, 1)
		draws = forward_sample(k0, 3, schedule, np.random.default_rng(0))
		counts = np.bincount(draws, minlength=4)
		expected = forward_marginal(np.array([1]), 3, schedule)[0]
		sigma = np.sqrt(len(k0) * expected * (1.0 - expected))
		self.assertTrue(np.all(np.abs(counts - len(k0) * expected) <= 4 * sigma + 1e-9))

	def test_full_mask_everywhere(self):
		schedule = build_schedule(1, ScheduleSpec(kind="explicit", alphas=(0.0,), gammas=(1.0,)), 5)
		draws = forward_sample(np.arange(5), 1, schedule, np.random.default_rng(0))
		np.testing.assert_array_equal(draws, np.full(5, 5))

	def test_seed_determinism(self):
		schedule = build_schedule(10, ScheduleSpec(), 8)
		k0 = np.random.default_rng(0).integers(8, size=50)
		a = forward_sample(k0, 6, schedule, np.random.default_rng(9))
		b = forward_sample(k0, 6, schedule, np.random.default_rng(9))
		np.testing.assert_array_equal(a, b)

	def test_mask_absorbing_along_a_chain(self):
		schedule = random_schedule(np.random.default_rng(5), 3, 6)
		rng = np.random.default_rng(1)
		k = np.full(2000, 0)
		masked = np.zeros(2000, dtype=bool)
		for t in range(1, 7):
			probs = np.stack([transition_row(int(s), t, schedule) for s in k])
			cdf = probs.cumsum(axis=1)
			k = np.minimum((cdf <= rng.random(len(k))[:, None]).sum(axis=1), 3)
			self.assertTrue(np.all(k[masked] == 3))
			masked |= k == 3


class TestPosterior(unittest.TestCase):
	def test_matches_bayes_enumeration(self):
		rng = np.random.default_rng(0)
		for M in (2, 3, 4):
			for T in range(1, 6):
				for _ in range(50):
					schedule = random_schedule(rng, M, T)
					for t in range(1, T + 1):
						reach = forward_marginal(np.arange(M), t, schedule)
						for k0 in range(M):
							for k_t in range(M + 1):
								if reach[k0, k_t] <= 0.0:
									continue
								got = posterior(np.array([k_t]), np.array([k0]), t, schedule)[0]
								np.testing.assert_allclose(got, bayes_posterior(k_t, k0, t, schedule), atol=1e-10)

	def test_first_step_is_one_hot_on_k0(self):
		schedule = random_schedule(np.random.default_rng(1), 4, 3)
		k0 = np.array([0, 1, 2, 3, 2])
		k_t = np.array([0, 4, 2, 1, 4])
		np.testing.assert_allclose(posterior(k_t, k0, 1, schedule), np.eye(5)[k0], atol=1e-12)

	def test_rows_normalized_and_mask_free_at_zero(self):
		schedule = build_schedule(20, ScheduleSpec(), 8)
		rng = np.random.default_rng(2)
		k0 = rng.integers(8, size=(3, 16))
		t = np.array([1, 2, 20])
		k_t = forward_sample(k0, t, schedule, rng)
		post = posterior(k_t, k0, t, schedule)
		np.testing.assert_allclose(post.sum(axis=-1), 1.0, atol=1e-9)
		self.assertTrue(np.all(post[0, :, 8] == 0.0))

	def test_impossible_pair_names_position(self):
		schedule = build_schedule(2, ScheduleSpec(kind="explicit", alphas=(1.0, 1.0), gammas=(0.0, 0.0)), 3)
		with self.assertRaisesRegex(sta.ValidationError, r"\(1,\)"):
			posterior(np.array([0, 2]), np.array([0, 1]), 2, schedule)

	def test_marginalization_consistency(self):
		rng = np.random.default_rng(3)
		for _ in range(50):
			M = int(rng.integers(2, 6))
			T = int(rng.integers(2, 8))
			schedule = random_schedule(rng, M, T)
			for t in range(2, T + 1):
				previous = forward_marginal(np.arange(M), t - 1, schedule)
				np.testing.assert_allclose(
					previous @ schedule.step_matrix(t), forward_marginal(np.arange(M), t, schedule), atol=1e-10
				)


class TestDiffusionLoss(unittest.TestCase):
	def test_perfect_model(self):
		schedule = build_schedule(10, ScheduleSpec(), 4)
		rng = np.random.default_rng(0)
		k0 = rng.integers(4, size=(3, 6))
		t = np.array([1, 4, 10])
		k_t = forward_sample(k0, t, schedule, rng)
		logits = 1e3 * np.eye(4)[k0]
		vb, aux = diffusion_loss_terms(logits, k0, k_t, t, schedule)
		self.assertTrue(np.all(np.abs(vb.data) < 1e-9))
		self.assertLess(aux.item(), 1e-9)

	def test_lambda_zero_is_pure_variational(self):
		schedule = build_schedule(10, ScheduleSpec(), 4)
		rng = np.random.default_rng(1)
		k0 = rng.integers(4, size=(2, 5))
		t = np.array([3, 7])
		k_t = forward_sample(k0, t, schedule, rng)
		logits = rng.normal(size=(2, 5, 4))
		vb, _ = diffusion_loss_terms(logits, k0, k_t, t, schedule)
		self.assertAlmostEqual(diffusion_training_loss(logits, k0, k_t, t, schedule, lam=0.0).item(), vb.data.mean())

	def test_matches_explicit_summation(self):
		rng = np.random.default_rng(2)
		for _ in range(20):
			schedule = random_schedule(rng, 3, 4)
			t = int(rng.integers(1, 5))
			k0 = rng.integers(3, size=2)
			k_t = forward_sample(k0, t, schedule, rng)
			logits = rng.normal(size=(2, 3))
			vb, _ = diffusion_loss_terms(logits[None], k0[None], k_t[None], np.array([t]), schedule)
			self.assertAlmostEqual(vb.data[0], explicit_loss(logits, k0, k_t, t, schedule), places=10)

	def test_gradient_wrt_logits(self):
		for seed in range(20):
			rng = np.random.default_rng(seed)
			schedule = random_schedule(rng, 3, 4)
			k0 = rng.integers(3, size=(2, 2))
			t = rng.integers(1, 5, size=2)
			k_t = forward_sample(k0, t, schedule, rng)
			logits = Parameter(rng.normal(size=(2, 2, 3)))
			error = finite_difference_check(
				lambda x: diffusion_training_loss(x, k0, k_t, t, schedule, lam=0.5), logits
			)
			self.assertLess(error, 1e-4)

	def test_negative_lambda_rejected(self):
		schedule = build_schedule(2, ScheduleSpec(), 3)
		with self.assertRaises(sta.ValidationError):
			diffusion_training_loss(np.zeros((1, 1, 3)), [[0]], [[0]], [1], schedule, lam=-1.0)

	def test_wrong_class_count_rejected(self):
		schedule = build_schedule(2, ScheduleSpec(), 3)
		with self.assertRaises(sta.ValidationError):
			diffusion_training_loss(np.zeros((1, 1, 4)), [[0]], [[0]], [1], schedule)


class TestModelReverse(unittest.TestCase):
	def test_drops_unreachable_clean_tokens(self):
		schedule = build_schedule(2, ScheduleSpec(kind="explicit", alphas=(0.5, 0.5), gammas=(0.5, 0.5)), 3)
		probs = np.array([[0.2, 0.3, 0.5]])
		reverse = model_reverse(probs, np.array([1]), 2, schedule).data[0]
		# only k0 = 1 can still show token 1 when no replacement happens
		np.testing.assert_allclose(reverse, posterior(np.array([1]), np.array([1]), 2, schedule)[0], atol=1e-12)

	def test_log_space_matches_linear_mixture(self):
		rng = np.random.default_rng(4)
		for _ in range(20):
			schedule = random_schedule(rng, 3, 4)
			t = int(rng.integers(2, 5))
			k0 = rng.integers(3, size=4)
			k_t = forward_sample(k0, t, schedule, rng)
			logits = rng.normal(size=(4, 3))
			log_probs = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
			linear = model_reverse(np.exp(log_probs), k_t, t, schedule).data
			logged = model_reverse_log(log_probs, k_t, t, schedule).data
			np.testing.assert_allclose(np.exp(logged), linear, atol=1e-12)

	def test_log_space_keeps_tiny_probabilities(self):
		# no replacement: a masked token can only fall back to its own clean value
		schedule = build_schedule(2, ScheduleSpec(kind="explicit", alphas=(0.5, 0.5), gammas=(0.5, 0.5)), 3)
		logits = np.array([[0.0, -200.0, -400.0]])
		log_probs = logits - np.log(np.exp(logits).sum())
		k_t = np.array([3])
		logged = model_reverse_log(log_probs, k_t, 2, schedule).data[0]
		for s in range(3):
			expected = log_probs[0, s] + np.log(posterior(k_t, np.array([s]), 2, schedule)[0, s])
			self.assertAlmostEqual(logged[s], expected, places=9)
		self.assertAlmostEqual(float(np.log(np.exp(logged).sum())), 0.0, places=12)


class TestSample(unittest.TestCase):
	def _oracle(self, grid, M):
		def denoiser(k_t, t, y):
			return np.broadcast_to(1e3 * np.eye(M)[grid], k_t.shape + (M,)).copy()

		return denoiser

	def test_oracle_denoiser_recovers_grid(self):
		schedule = build_schedule(20, ScheduleSpec(), 6)
		grid = np.random.default_rng(0).integers(6, size=9)
		out = sample(self._oracle(grid, 6), np.ones((3, 4)), schedule, np.random.default_rng(1), 9)
		np.testing.assert_array_equal(out, np.tile(grid, (3, 1)))

	def test_random_start_oracle(self):
		schedule = build_schedule(20, ScheduleSpec(), 6)
		grid = np.random.default_rng(2).integers(6, size=9)
		out = sample(self._oracle(grid, 6), np.ones((2, 4)), schedule, np.random.default_rng(3), 9, "random")
		np.testing.assert_array_equal(out, np.tile(grid, (2, 1)))

	def test_mask_free_and_deterministic(self):
		schedule = build_schedule(10, ScheduleSpec(), 5)

		def denoiser(k_t, t, y):
			return np.random.default_rng(int(t[0])).normal(size=k_t.shape + (5,))

		a = sample(denoiser, np.ones((4, 3)), schedule, np.random.default_rng(7), 16)
		b = sample(denoiser, np.ones((4, 3)), schedule, np.random.default_rng(7), 16)
		np.testing.assert_array_equal(a, b)
		self.assertTrue(np.all((a >= 0) & (a < 5)))

	def test_unknown_start_state(self):
		schedule = build_schedule(2, ScheduleSpec(), 3)
		with self.assertRaises(sta.ValidationError):
			sample(lambda k, t, y: np.zeros(k.shape + (3,)), np.ones((1, 2)), schedule, np.random.default_rng(0), 4, "noise")
