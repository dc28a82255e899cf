"""
Forward corruption, Bayes posteriors, the training loss and the reverse
sampler over a TransitionSchedule.

Token grids are int arrays of shape (N,) or (B, N). Timesteps are an int or
a (B,) array, one per grid. Probability fields carry one trailing axis over
the M + 1 states.
"""

import logging

import numpy as np

import sta
from sta.numerics import tensor as F
from sta.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

# finite stand-in for log(0) so zero-probability states contribute 0 * finite
LOG_ZERO = -1e30


def _per_grid(values, t, like):
	"""values[t] shaped to broadcast against an array of shape `like` plus a state axis"""
	v = np.asarray(values)[np.asarray(t)]
	return v.reshape(v.shape + (1,) * (len(like) - v.ndim))


def _check_clean(k0, M, what="k0"):
	k0 = np.asarray(k0, dtype=np.int64)
	if k0.size and (k0.min() < 0 or k0.max() >= M):
		raise sta.ValidationError(f"{what} must hold clean tokens in [0, {M}); got min {k0.min()}, max {k0.max()}")
	return k0


def _check_any(k, M, what="k_t"):
	k = np.asarray(k, dtype=np.int64)
	if k.size and (k.min() < 0 or k.max() > M):
		raise sta.ValidationError(f"{what} must hold tokens in [0, {M}]; got min {k.min()}, max {k.max()}")
	return k


def transition_row(i, t, schedule):
	"""q(k_t = . | k_{t-1} = i) as an (M+1,) row"""
	M = schedule.M
	if not 0 <= i <= M:
		raise sta.ValidationError(f"State {i} outside [0, {M}]")
	schedule.check_step(t)
	row = np.zeros(M + 1)
	if i == M:
		row[M] = 1.0
		return row
	row[:M] = schedule.beta[t]
	row[i] += schedule.alpha[t]
	row[M] = schedule.gamma[t]
	return row


def _cumulative_rows(k0, t, schedule):
	"""Q_bar_t[k0, .] for every position; t may be 0"""
	M = schedule.M
	alpha_bar = _per_grid(schedule.alpha_bar, t, k0.shape)
	beta_bar = _per_grid(schedule.beta_bar, t, k0.shape)
	gamma_bar = _per_grid(schedule.gamma_bar, t, k0.shape)
	onehot = np.eye(M + 1)[k0]
	rows = onehot * alpha_bar[..., None]
	rows[..., :M] += beta_bar[..., None]
	rows[..., M] = gamma_bar
	return rows


def forward_marginal(k0, t, schedule):
	"""
	q(k_t | k0) per position.

	Returns:
	    (..., M+1) rows: alpha_bar_t + beta_bar_t on k0, beta_bar_t on every
	    other clean state, gamma_bar_t on [MASK]
	"""
	k0 = _check_clean(k0, schedule.M)
	schedule.check_step(t)
	return _cumulative_rows(k0, t, schedule)


def _categorical(probs, rng):
	"""One inverse-CDF draw per row of `probs` (..., K)"""
	cdf = np.cumsum(probs, axis=-1)
	u = rng.random(probs.shape[:-1]) * cdf[..., -1]
	return np.minimum((cdf <= u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


def forward_sample(k0, t, schedule, rng):
	"""Draw k_t ~ q(k_t | k0) independently per position"""
	return _categorical(forward_marginal(k0, t, schedule), rng)


def _step_columns(k_t, t, schedule):
	"""Q_t[., k_t] per position: the likelihood of reaching k_t from each state at t - 1"""
	M = schedule.M
	alpha = _per_grid(schedule.alpha, t, k_t.shape)
	beta = _per_grid(schedule.beta, t, k_t.shape)
	gamma = _per_grid(schedule.gamma, t, k_t.shape)
	masked = k_t == M
	cols = np.zeros(k_t.shape + (M + 1,))
	clean_cols = np.broadcast_to(beta, k_t.shape)[..., None] + alpha[..., None] * np.eye(M + 1)[k_t][..., :M]
	cols[..., :M] = np.where(masked[..., None], np.broadcast_to(gamma, k_t.shape)[..., None], clean_cols)
	cols[..., M] = masked.astype(np.float64)
	return cols


def posterior(k_t, k0, t, schedule):
	"""
	q(k_{t-1} | k_t, k0) proportional to Q_t[k_{t-1}, k_t] * Q_bar_{t-1}[k0, k_{t-1}].

	Raises ValidationError naming the first position whose (k_t, k0) pair is
	impossible at step t.
	"""
	k0 = _check_clean(k0, schedule.M)
	k_t = _check_any(k_t, schedule.M)
	t_arr = schedule.check_step(t)
	unnorm = _step_columns(k_t, t, schedule) * _cumulative_rows(k0, t_arr - 1, schedule)
	total = unnorm.sum(axis=-1, keepdims=True)
	if np.any(total <= 0.0):
		position = tuple(int(i) for i in np.argwhere(total[..., 0] <= 0.0)[0])
		raise sta.ValidationError(f"Posterior undefined at position {position}: k_t cannot follow from k0 at step {t}")
	return unnorm / total


def reverse_weights(k_t, t, schedule):
	"""
	W[..., k0, s] = q(k_{t-1} = s | k_t, k0) for every clean k0.

	Rows for k0 that cannot reach k_t at step t are all zero, with a
	(..., M) validity mask alongside.
	"""
	M = schedule.M
	k_t = _check_any(k_t, M)
	t_arr = schedule.check_step(t)
	candidates = np.broadcast_to(np.arange(M), k_t.shape + (M,))
	t_wide = t_arr.reshape(t_arr.shape + (1,) * (k_t.ndim + 1 - t_arr.ndim)) if t_arr.ndim else t_arr
	prev = _cumulative_rows(candidates, t_wide - 1, schedule)
	cols = _step_columns(k_t, t, schedule)[..., None, :]
	unnorm = prev * cols
	total = unnorm.sum(axis=-1, keepdims=True)
	valid = total[..., 0] > 0.0
	weights = np.divide(unnorm, total, out=np.zeros_like(unnorm), where=total > 0.0)
	return weights, valid


def model_reverse(probs_k0, k_t, t, schedule):
	"""
	p(k_{t-1} | k_t) = sum over k0 of p(k0) q(k_{t-1} | k_t, k0), with k0
	values that cannot produce k_t dropped and the mixture renormalized.

	Args:
	    probs_k0: (..., N, M) Tensor or array of predicted clean-token probabilities

	Returns:
	    (..., N, M+1) Tensor
	"""
	weights, valid = reverse_weights(k_t, t, schedule)
	probs_k0 = F.as_tensor(probs_k0)
	admissible = probs_k0 * valid.astype(np.float64)
	mass = admissible.data.sum(axis=-1)
	if np.any(mass <= 0.0):
		position = tuple(int(i) for i in np.argwhere(mass <= 0.0)[0])
		raise sta.NumericalError(f"Model puts no mass on any clean token that can reach k_t at position {position}")
	shape = admissible.shape
	mixed = F.matmul(admissible.reshape(shape[:-1] + (1, shape[-1])), Tensor(weights))
	mixed = mixed.reshape(shape[:-1] + (schedule.M + 1,))
	return mixed / admissible.sum(axis=-1, keepdims=True)


def model_reverse_log(log_probs_k0, k_t, t, schedule):
	"""
	log p(k_{t-1} | k_t), mixed in log space: logsumexp over admissible k0 of
	log p(k0) + log q(k_{t-1} | k_t, k0), minus the log of the admissible mass.
	Impossible states get LOG_ZERO.

	Args:
	    log_probs_k0: (..., N, M) Tensor or array of predicted clean-token log probabilities

	Returns:
	    (..., N, M+1) Tensor
	"""
	weights, valid = reverse_weights(k_t, t, schedule)
	if not np.all(valid.any(axis=-1)):
		position = tuple(int(i) for i in np.argwhere(~valid.any(axis=-1))[0])
		raise sta.NumericalError(f"No clean token can reach k_t at position {position}")
	positive = weights > 0.0
	log_weights = np.where(positive, np.log(np.where(positive, weights, 1.0)), LOG_ZERO)
	admissible = F.as_tensor(log_probs_k0) + np.where(valid, 0.0, LOG_ZERO)
	joint = admissible.reshape(admissible.shape + (1,)) + Tensor(log_weights)
	return F.logsumexp(joint, axis=-2) - F.logsumexp(admissible, axis=-1, keepdims=True)


def diffusion_loss_terms(logits_k0, k0, k_t, t, schedule):
	"""
	Per-grid variational term and mean clean-token cross entropy.

	For t > 1 the variational term is KL(q(k_{t-1} | k_t, k0) || p(k_{t-1} | k_t))
	summed over positions; for t = 1 it is -log p(k0) summed over positions.

	Args:
	    logits_k0: (B, N, M) Tensor
	    k0, k_t: (B, N) int arrays
	    t: (B,) int array

	Returns:
	    (vb (B,) Tensor, aux scalar Tensor)
	"""
	logits_k0 = F.as_tensor(logits_k0)
	M = schedule.M
	if logits_k0.ndim != 3 or logits_k0.shape[-1] != M:
		raise sta.ValidationError(f"Denoiser logits must be (B, N, {M}), got {logits_k0.shape}")
	k0 = _check_clean(k0, M)
	k_t = _check_any(k_t, M)
	t = schedule.check_step(np.asarray(t, dtype=np.int64).reshape(-1))
	b, n, _ = logits_k0.shape
	if k0.shape != (b, n) or k_t.shape != (b, n) or t.shape != (b,):
		raise sta.ValidationError(f"Shapes disagree: logits {logits_k0.shape}, k0 {k0.shape}, k_t {k_t.shape}, t {t.shape}")

	log_probs = F.log_softmax(logits_k0, axis=-1)
	target = np.eye(M)[k0]
	nll = -(log_probs * target).sum(axis=-1).sum(axis=-1)

	terms = []
	for i in range(b):
		if t[i] == 1:
			terms.append(nll[i])
			continue
		q = posterior(k_t[i], k0[i], int(t[i]), schedule)
		log_p = model_reverse_log(log_probs[i], k_t[i], int(t[i]), schedule)
		q_log_q = float((q * np.log(np.where(q > 0.0, q, 1.0))).sum())
		cross = (log_p * q).sum()
		terms.append(cross * -1.0 + q_log_q)
	vb = F.concat([term.reshape(1) for term in terms], axis=0)
	aux = F.cross_entropy(logits_k0.reshape(b * n, M), k0.reshape(-1))
	return vb, aux


def diffusion_training_loss(logits_k0, k0, k_t, t, schedule, lam=0.001):
	"""Batch mean of the variational term plus lam times the clean-token cross entropy"""
	if lam < 0:
		raise sta.ValidationError(f"Auxiliary loss weight must be >= 0, got {lam}")
	vb, aux = diffusion_loss_terms(logits_k0, k0, k_t, t, schedule)
	loss = vb.mean() + aux * lam
	if not np.isfinite(loss.item()):
		raise sta.NumericalError(
			f"Non-finite diffusion loss: variational terms {vb.data.tolist()}, auxiliary {aux.item()}"
		)
	return loss


def sample(denoiser, y, schedule, rng, n_tokens, start_state="mask"):
	"""
	Generate token grids by resampling every position at every step.

	Args:
	    denoiser: callable (k_t (B, N), t (B,), y (B, d)) -> (B, N, M) logits
	    y: (B, d) condition embeddings
	    start_state: "mask" (all [MASK]) or "random" (uniform clean tokens)

	Returns:
	    (B, N) mask-free token grids
	"""
	y = np.asarray(y, dtype=np.float64)
	if y.ndim == 1:
		y = y[None]
	b, M = y.shape[0], schedule.M
	if start_state == "mask":
		k = np.full((b, n_tokens), M, dtype=np.int64)
	elif start_state == "random":
		k = rng.integers(M, size=(b, n_tokens))
	else:
		raise sta.ValidationError(f"Unknown start state '{start_state}'. Expected 'mask' or 'random'")

	for t in range(schedule.T, 0, -1):
		steps = np.full(b, t, dtype=np.int64)
		logits = denoiser(k, steps, y)
		logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
		shifted = logits - logits.max(axis=-1, keepdims=True)
		probs_k0 = np.exp(shifted)
		probs_k0 /= probs_k0.sum(axis=-1, keepdims=True)
		if t == 1:
			k = _categorical(probs_k0, rng)
		else:
			k = _categorical(model_reverse(probs_k0, k, t, schedule).data, rng)

	if np.any(k == M):
		raise sta.NumericalError("Sampling finished with [MASK] tokens left")
	return k
