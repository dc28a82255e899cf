"""
Image generation metrics over extracted features and class predictions.

FID compares Gaussian fits of two feature sets. The inception score is
exp(E_x KL(p(y|x) || p(y))). Recall@k is the share of queries with at least
one ground-truth match among their k most cosine-similar candidates.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

import sta

logger = logging.getLogger(__name__)

# eigenvalues above -EIG_TOLERANCE * max(1, |largest|) are treated as rounding and clamped to 0
EIG_TOLERANCE = 1e-10
LOG_GUARD = 1e-12
ROW_SUM_TOLERANCE = 1e-9


@dataclass
class FeatureStats:
	mu: np.ndarray
	sigma: np.ndarray
	n: int

	def __post_init__(self):
		self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
		self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
		d = self.mu.shape[0]
		if self.sigma.shape != (d, d):
			raise sta.ValidationError(f"Covariance of shape {self.sigma.shape} does not match mean of dimension {d}")
		if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > 1e-12:
			raise sta.ValidationError("Covariance matrix is not symmetric")


def feature_stats(features):
	"""Mean and unbiased (n - 1) covariance of an (n, d) feature matrix"""
	features = np.asarray(features, dtype=np.float64)
	if features.ndim != 2:
		raise sta.ValidationError(f"Features must be an (n, d) matrix, got shape {features.shape}")
	n = features.shape[0]
	if n < 2:
		raise sta.ValidationError(f"Feature statistics need at least 2 samples, got {n}")
	mu = features.mean(axis=0)
	centered = features - mu
	sigma = centered.T @ centered / (n - 1)
	return FeatureStats(mu=mu, sigma=0.5 * (sigma + sigma.T), n=n)


def _psd_eigenvalues(matrix, what):
	values, vectors = linalg.eigh(0.5 * (matrix + matrix.T))
	tolerance = EIG_TOLERANCE * max(1.0, float(np.abs(values).max(initial=0.0)))
	if values.size and values.min() < -tolerance:
		raise sta.NumericalError(f"{what} is not positive semi-definite: smallest eigenvalue {values.min():.6g}")
	return np.maximum(values, 0.0), vectors


def psd_sqrt(matrix):
	"""Symmetric square root of a positive semi-definite matrix"""
	values, vectors = _psd_eigenvalues(matrix, "Covariance")
	return (vectors * np.sqrt(values)) @ vectors.T


def fid(a, b):
	"""
	||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

	The trace of the product root is taken from the eigenvalues of the
	symmetric matrix sqrt(S_a) S_b sqrt(S_a), which shares its spectrum
	with S_a S_b.
	"""
	if a.mu.shape != b.mu.shape:
		raise sta.ValidationError(f"Feature dimensions differ: {a.mu.shape[0]} vs {b.mu.shape[0]}")
	root_a = psd_sqrt(a.sigma)
	product = root_a @ b.sigma @ root_a
	values, _ = _psd_eigenvalues(product, "Covariance product")
	diff = a.mu - b.mu
	trace = np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sqrt(values).sum()
	return float(diff @ diff + trace)


def fid_from_features(features_a, features_b):
	return fid(feature_stats(features_a), feature_stats(features_b))


def check_predictions(probs):
	probs = np.asarray(probs, dtype=np.float64)
	if probs.ndim != 2 or probs.shape[0] == 0:
		raise sta.ValidationError(f"Predictions must be a non-empty (N, C) matrix, got shape {probs.shape}")
	if probs.min() < 0.0:
		raise sta.ValidationError("Predictions hold negative probabilities")
	worst = np.abs(probs.sum(axis=1) - 1.0).max()
	if worst > ROW_SUM_TOLERANCE:
		raise sta.ValidationError(f"Prediction rows must sum to 1; largest deviation {worst:.3g}")
	return probs


def inception_score(probs):
	"""exp of the mean KL between each row and the column-mean marginal"""
	probs = check_predictions(probs)
	marginal = probs.mean(axis=0)
	log_ratio = np.log(np.maximum(probs, LOG_GUARD)) - np.log(np.maximum(marginal, LOG_GUARD))
	kl = np.where(probs > 0.0, probs * log_ratio, 0.0).sum(axis=1)
	return float(np.exp(kl.mean()))


def inception_score_splits(probs, n_splits=10):
	"""
	Inception score over `n_splits` contiguous splits.

	Returns:
	    (mean, standard deviation) of the per-split scores
	"""
	probs = check_predictions(probs)
	if n_splits < 1 or n_splits > len(probs):
		raise sta.ValidationError(f"Cannot split {len(probs)} predictions into {n_splits} parts")
	scores = [inception_score(part) for part in np.array_split(probs, n_splits)]
	return float(np.mean(scores)), float(np.std(scores))


@dataclass
class RetrievalIndex:
	"""
	Candidate features and, per query, the candidate rows that count as a
	correct retrieval.
	"""

	candidates: np.ndarray
	matches: list = field(default_factory=list)

	def __post_init__(self):
		self.candidates = np.asarray(self.candidates, dtype=np.float64)
		if self.candidates.ndim != 2 or self.candidates.shape[0] == 0:
			raise sta.ValidationError(f"Candidates must be a non-empty (m, d) matrix, got shape {self.candidates.shape}")
		m = self.candidates.shape[0]
		self.matches = [np.unique(np.asarray(list(row), dtype=np.int64)) for row in self.matches]
		for q, row in enumerate(self.matches):
			if row.size == 0:
				raise sta.ValidationError(f"Query {q} has no ground-truth match")
			if row.min() < 0 or row.max() >= m:
				raise sta.ValidationError(f"Query {q} names a candidate outside [0, {m})")

	@classmethod
	def from_labels(cls, candidates, candidate_labels, query_labels):
		"""Every candidate sharing the query's label is a match"""
		candidate_labels = np.asarray(candidate_labels)
		matches = [np.flatnonzero(candidate_labels == label) for label in query_labels]
		return cls(candidates=candidates, matches=matches)


def _unit_rows(x):
	x = np.asarray(x, dtype=np.float64)
	norms = np.linalg.norm(x, axis=1, keepdims=True)
	if np.any(norms == 0.0):
		raise sta.NumericalError("Cosine similarity is undefined for a zero feature vector")
	return x / norms


def retrieval_ranks(index, queries):
	"""0-based rank of the best ground-truth match for every query"""
	queries = np.asarray(queries, dtype=np.float64)
	if queries.ndim != 2 or queries.shape[1] != index.candidates.shape[1]:
		raise sta.ValidationError(f"Queries of shape {queries.shape} do not match candidates {index.candidates.shape}")
	if len(queries) != len(index.matches):
		raise sta.ValidationError(f"{len(queries)} queries but {len(index.matches)} ground-truth rows")
	similarity = _unit_rows(queries) @ _unit_rows(index.candidates).T
	# stable sort of the negated scores breaks ties by candidate index
	order = np.argsort(-similarity, axis=1, kind="stable")
	positions = np.argsort(order, axis=1, kind="stable")
	return np.array([positions[q, row].min() for q, row in enumerate(index.matches)])


def recall_at_k(index, queries, k):
	"""Percentage of queries with a ground-truth match in their top k"""
	m = index.candidates.shape[0]
	if k < 1 or k > m:
		raise sta.ValidationError(f"k must be in [1, {m}] for {m} candidates, got {k}")
	ranks = retrieval_ranks(index, queries)
	return float(100.0 * np.mean(ranks < k))


def recall_table(index, queries, ks=(1, 5, 10)):
	"""Recall@k for every k that fits the candidate count"""
	m = index.candidates.shape[0]
	ranks = retrieval_ranks(index, queries)
	return {f"R@{k}": float(100.0 * np.mean(ranks < k)) for k in ks if 1 <= k <= m}


def metric_record(metric, value, n, extractor_checksum, seed, **extra):
	record = {"metric": metric, "value": value, "n": int(n), "extractor_checksum": extractor_checksum, "seed": seed}
	record.update(extra)
	return record
