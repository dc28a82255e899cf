# Copyright (c) 2025, Apstic and Contributors
# See license.txt

import unittest

import numpy as np

import sta
from sta.metrics.scores import (
	FeatureStats,
	RetrievalIndex,
	feature_stats,
	fid,
	fid_from_features,
	inception_score,
	inception_score_splits,
	recall_at_k,
	recall_table,
)


def direct_inception_score(probs):
	marginal = probs.mean(axis=0)
	total = 0.0
	for row in probs:
		for p, q in zip(row, marginal, strict=True):
			if p > 0:
				total += p * (np.log(p) - np.log(q))
	return np.exp(total / len(probs))


class TestFeatureStats(unittest.TestCase):
	def test_two_points(self):
		stats = feature_stats([[0.0, 0.0], [2.0, 2.0]])
		np.testing.assert_array_equal(stats.mu, [1.0, 1.0])
		np.testing.assert_array_equal(stats.sigma, [[2.0, 2.0], [2.0, 2.0]])
		self.assertEqual(stats.n, 2)

	def test_identical_rows(self):
		stats = feature_stats(np.tile([1.0, -3.0, 2.0], (5, 1)))
		np.testing.assert_array_equal(stats.sigma, np.zeros((3, 3)))

	def test_matches_two_pass_computation(self):
		x = np.random.default_rng(0).normal(size=(1000, 4)) * [1.0, 2.0, 0.5, 3.0] + 5.0
		stats = feature_stats(x)
		mu = [sum(x[:, j]) / len(x) for j in range(4)]
		sigma = np.array(
			[[sum((x[:, i] - mu[i]) * (x[:, j] - mu[j])) / (len(x) - 1) for j in range(4)] for i in range(4)]
		)
		np.testing.assert_allclose(stats.sigma, sigma, rtol=0, atol=1e-10)
		np.testing.assert_allclose(stats.sigma, stats.sigma.T, rtol=0, atol=1e-12)

	def test_single_sample_rejected(self):
		with self.assertRaises(sta.ValidationError):
			feature_stats([[1.0, 2.0]])


class TestFid(unittest.TestCase):
	def test_identical(self):
		stats = feature_stats(np.random.default_rng(1).normal(size=(200, 6)))
		self.assertAlmostEqual(fid(stats, stats), 0.0, delta=1e-8)

	def test_one_dimensional_closed_form(self):
		a = FeatureStats(mu=[0.0], sigma=[[1.0]], n=10)
		b = FeatureStats(mu=[1.0], sigma=[[1.0]], n=10)
		self.assertAlmostEqual(fid(a, b), 1.0, delta=1e-8)

	def test_diagonal_closed_form(self):
		a = FeatureStats(mu=np.zeros(2), sigma=np.diag([4.0, 4.0]), n=10)
		b = FeatureStats(mu=np.zeros(2), sigma=np.diag([1.0, 1.0]), n=10)
		self.assertAlmostEqual(fid(a, b), 2.0, delta=1e-10)

	def test_symmetric_and_non_negative(self):
		rng = np.random.default_rng(2)
		for _ in range(10):
			a = feature_stats(rng.normal(size=(50, 5)) @ rng.normal(size=(5, 5)))
			b = feature_stats(rng.normal(size=(50, 5)) + rng.normal(size=5))
			self.assertAlmostEqual(fid(a, b), fid(b, a), delta=1e-8)
			self.assertGreaterEqual(fid(a, b), -1e-8)

	def test_rank_deficient_covariance(self):
		rng = np.random.default_rng(3)
		low_rank = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 5))
		stats = feature_stats(low_rank)
		self.assertAlmostEqual(fid(stats, stats), 0.0, delta=1e-8)

	def test_reference_samples_score_better(self):
		rng = np.random.default_rng(4)
		mixing = rng.normal(size=(4, 4))
		reference = rng.normal(size=(2000, 4)) @ mixing
		same = rng.normal(size=(2000, 4)) @ mixing
		shifted = rng.normal(size=(2000, 4)) @ mixing + 0.5
		self.assertLess(fid_from_features(same, reference), fid_from_features(shifted, reference))

	def test_dimension_mismatch(self):
		with self.assertRaises(sta.ValidationError):
			fid(FeatureStats(np.zeros(2), np.eye(2), 3), FeatureStats(np.zeros(3), np.eye(3), 3))

	def test_indefinite_covariance_rejected(self):
		bad = FeatureStats(mu=np.zeros(2), sigma=np.diag([1.0, -0.5]), n=3)
		with self.assertRaisesRegex(sta.NumericalError, "smallest eigenvalue -0.5"):
			fid(bad, FeatureStats(np.zeros(2), np.eye(2), 3))


class TestInceptionScore(unittest.TestCase):
	def test_uniform_rows(self):
		self.assertAlmostEqual(inception_score(np.full((20, 7), 1.0 / 7)), 1.0, delta=1e-9)

	def test_balanced_one_hot(self):
		probs = np.eye(5)[np.arange(40) % 5]
		self.assertAlmostEqual(inception_score(probs), 5.0, delta=1e-9)

	def test_matches_direct_summation(self):
		probs = np.random.default_rng(5).dirichlet(np.ones(10) * 0.5, size=100)
		self.assertAlmostEqual(inception_score(probs), direct_inception_score(probs), delta=1e-10)

	def test_range(self):
		rng = np.random.default_rng(6)
		for _ in range(20):
			probs = rng.dirichlet(np.ones(6) * rng.uniform(0.05, 5.0), size=30)
			score = inception_score(probs)
			self.assertGreaterEqual(score, 1.0 - 1e-9)
			self.assertLessEqual(score, 6.0 + 1e-9)

	def test_zero_marginal_column(self):
		probs = np.zeros((4, 3))
		probs[:, 0] = 1.0
		self.assertAlmostEqual(inception_score(probs), 1.0, delta=1e-12)

	def test_invalid_rows_rejected(self):
		with self.assertRaises(sta.ValidationError):
			inception_score([[0.5, 0.6]])
		with self.assertRaises(sta.ValidationError):
			inception_score([[1.5, -0.5]])

	def test_splits(self):
		probs = np.eye(4)[np.arange(40) % 4]
		mean, std = inception_score_splits(probs, 10)
		self.assertAlmostEqual(mean, 4.0, delta=1e-9)
		self.assertAlmostEqual(std, 0.0, delta=1e-9)
		with self.assertRaises(sta.ValidationError):
			inception_score_splits(probs[:5], 10)


class TestRecallAtK(unittest.TestCase):
	def test_self_retrieval(self):
		x = np.random.default_rng(7).normal(size=(12, 5))
		index = RetrievalIndex(candidates=x, matches=[[i] for i in range(12)])
		self.assertEqual(recall_at_k(index, x, 1), 100.0)

	def test_k_equals_candidate_count(self):
		rng = np.random.default_rng(8)
		index = RetrievalIndex(candidates=rng.normal(size=(6, 3)), matches=[[i] for i in range(4)])
		self.assertEqual(recall_at_k(index, rng.normal(size=(4, 3)), 6), 100.0)

	def test_constructed_similarities(self):
		candidates = np.eye(3)
		queries = np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.2], [1.0, 0.0, 0.3]])
		index = RetrievalIndex(candidates=candidates, matches=[[0], [1], [2]])
		self.assertAlmostEqual(recall_at_k(index, queries, 1), 200.0 / 3.0)
		self.assertEqual(recall_at_k(index, queries, 2), 100.0)

	def test_ties_broken_by_candidate_index(self):
		candidates = np.array([[1.0, 0.0], [1.0, 0.0]])
		queries = np.array([[1.0, 0.0], [1.0, 0.0]])
		index = RetrievalIndex(candidates=candidates, matches=[[0], [1]])
		self.assertEqual(recall_at_k(index, queries, 1), 50.0)

	def test_monotone_in_k(self):
		rng = np.random.default_rng(9)
		labels = rng.integers(5, size=30)
		index = RetrievalIndex.from_labels(rng.normal(size=(30, 4)), labels, labels[:20])
		queries = rng.normal(size=(20, 4))
		recalls = [recall_at_k(index, queries, k) for k in range(1, 31)]
		self.assertTrue(all(a <= b for a, b in zip(recalls, recalls[1:], strict=False)))
		self.assertEqual(recalls[-1], 100.0)

	def test_table(self):
		x = np.random.default_rng(10).normal(size=(7, 3))
		table = recall_table(RetrievalIndex(candidates=x, matches=[[i] for i in range(7)]), x)
		self.assertEqual(table, {"R@1": 100.0, "R@5": 100.0})

	def test_invalid_k(self):
		index = RetrievalIndex(candidates=np.eye(3), matches=[[0]])
		with self.assertRaises(sta.ValidationError):
			recall_at_k(index, np.eye(3)[:1], 4)
		with self.assertRaises(sta.ValidationError):
			recall_at_k(index, np.eye(3)[:1], 0)

	def test_query_without_match_rejected(self):
		with self.assertRaises(sta.ValidationError):
			RetrievalIndex(candidates=np.eye(3), matches=[[0], []])
