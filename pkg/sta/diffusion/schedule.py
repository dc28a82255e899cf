"""
Mask-and-replace transition schedules.

Each token has M + 1 states: the M codebook entries and [MASK] (index M).
At step t a clean token is kept with probability alpha_t + beta_t, moved to
each other clean state with beta_t and masked with gamma_t, where
alpha_t + M * beta_t + gamma_t = 1. [MASK] is absorbing.

Because the clean block of every step matrix is alpha_t * I + beta_t * J,
the t-step product keeps that form, so the cumulative values have closed
forms:

    alpha_bar_t = prod(alpha_1..t)
    gamma_bar_t = 1 - prod(1 - gamma_1..t)
    beta_bar_t  = (1 - alpha_bar_t - gamma_bar_t) / M
"""

import logging
from dataclasses import dataclass, field

import numpy as np

import sta

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear", "explicit")


@dataclass(frozen=True)
class ScheduleSpec:
	"""
	`linear` interpolates the cumulative keep (alpha_bar) and mask (gamma_bar)
	probabilities between their endpoints over t = 1..T. `explicit` takes
	per-step alpha and gamma lists of length T.
	"""

	kind: str = "linear"
	alpha_bar_start: float = 0.99999
	alpha_bar_end: float = 0.000009
	gamma_bar_start: float = 0.000009
	gamma_bar_end: float = 0.99999
	alphas: tuple = field(default_factory=tuple)
	gammas: tuple = field(default_factory=tuple)

	def as_dict(self):
		return {
			"kind": self.kind,
			"alpha_bar_start": self.alpha_bar_start,
			"alpha_bar_end": self.alpha_bar_end,
			"gamma_bar_start": self.gamma_bar_start,
			"gamma_bar_end": self.gamma_bar_end,
			"alphas": list(self.alphas),
			"gammas": list(self.gammas),
		}

	@classmethod
	def from_dict(cls, d):
		return cls(
			kind=d["kind"],
			alpha_bar_start=float(d["alpha_bar_start"]),
			alpha_bar_end=float(d["alpha_bar_end"]),
			gamma_bar_start=float(d["gamma_bar_start"]),
			gamma_bar_end=float(d["gamma_bar_end"]),
			alphas=tuple(float(a) for a in d.get("alphas", ())),
			gammas=tuple(float(g) for g in d.get("gammas", ())),
		)


@dataclass(frozen=True)
class TransitionSchedule:
	"""
	Per-step and cumulative parameters. Cumulative arrays are indexed by t
	in 0..T with t = 0 the identity (alpha_bar = 1, beta_bar = gamma_bar = 0);
	per-step arrays are indexed the same way with index 0 unused.
	"""

	T: int
	M: int
	spec: ScheduleSpec
	alpha: np.ndarray
	beta: np.ndarray
	gamma: np.ndarray
	alpha_bar: np.ndarray
	beta_bar: np.ndarray
	gamma_bar: np.ndarray

	@property
	def mask(self):
		return self.M

	def check_step(self, t, lowest=1):
		t_arr = np.asarray(t)
		if t_arr.size and (t_arr.min() < lowest or t_arr.max() > self.T):
			raise sta.ValidationError(f"Timestep {t} outside [{lowest}, {self.T}]")
		return t_arr

	def step_matrix(self, t):
		"""Q_t as an (M+1, M+1) row-stochastic matrix, Q_t[i, j] = q(k_t = j | k_{t-1} = i)"""
		self.check_step(t)
		return _block_matrix(self.M, self.alpha[t], self.beta[t], self.gamma[t])

	def cumulative_matrix(self, t):
		"""Q_bar_t = Q_1 ... Q_t from the closed form; Q_bar_0 = I"""
		self.check_step(t, lowest=0)
		return _block_matrix(self.M, self.alpha_bar[t], self.beta_bar[t], self.gamma_bar[t])

	def as_dict(self):
		return {"T": self.T, "M": self.M, "spec": self.spec.as_dict()}

	@classmethod
	def from_dict(cls, d):
		return build_schedule(int(d["T"]), ScheduleSpec.from_dict(d["spec"]), int(d["M"]))


def _block_matrix(M, alpha, beta, gamma):
	Q = np.zeros((M + 1, M + 1))
	Q[:M, :M] = beta
	Q[np.arange(M), np.arange(M)] += alpha
	Q[:M, M] = gamma
	Q[M, M] = 1.0
	return Q


def _linear_targets(start, end, T):
	if T == 1:
		return np.array([end], dtype=np.float64)
	return start + (end - start) * np.arange(T) / (T - 1)


def build_schedule(T, spec, M):
	"""
	Build a TransitionSchedule over M clean states.

	Raises ValidationError when a step would need a negative probability.
	"""
	if T < 1:
		raise sta.ValidationError(f"Schedule needs T >= 1, got {T}")
	if M < 1:
		raise sta.ValidationError(f"Schedule needs at least one clean state, got M={M}")
	if spec.kind not in SCHEDULE_KINDS:
		raise sta.ValidationError(f"Unknown schedule kind '{spec.kind}'. Expected one of {SCHEDULE_KINDS}")

	if spec.kind == "linear":
		alpha_bar = np.concatenate([[1.0], _linear_targets(spec.alpha_bar_start, spec.alpha_bar_end, T)])
		gamma_bar = np.concatenate([[0.0], _linear_targets(spec.gamma_bar_start, spec.gamma_bar_end, T)])
		if np.any(alpha_bar[1:] <= 0.0) or np.any(gamma_bar[1:] >= 1.0):
			raise sta.ValidationError("Linear schedule endpoints must keep alpha_bar > 0 and gamma_bar < 1")
		alpha = alpha_bar[1:] / alpha_bar[:-1]
		gamma = 1.0 - (1.0 - gamma_bar[1:]) / (1.0 - gamma_bar[:-1])
	else:
		if len(spec.alphas) != T or len(spec.gammas) != T:
			raise sta.ValidationError(
				f"Explicit schedule needs {T} alphas and {T} gammas, got {len(spec.alphas)} and {len(spec.gammas)}"
			)
		alpha = np.asarray(spec.alphas, dtype=np.float64)
		gamma = np.asarray(spec.gammas, dtype=np.float64)

	beta = (1.0 - alpha - gamma) / M
	beta = np.where(np.abs(beta) < 1e-15, 0.0, beta)
	for name, values in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
		bad = np.flatnonzero((values < 0.0) | (values > 1.0))
		if len(bad):
			t = int(bad[0]) + 1
			raise sta.ValidationError(f"Schedule step t={t} has {name}={values[bad[0]]:.6g} outside [0, 1]")

	alpha = np.concatenate([[1.0], alpha])
	beta = np.concatenate([[0.0], beta])
	gamma = np.concatenate([[0.0], gamma])
	alpha_bar = np.cumprod(alpha)
	gamma_bar = 1.0 - np.cumprod(1.0 - gamma)
	beta_bar = (1.0 - alpha_bar - gamma_bar) / M
	# rounding can leave -1e-17 where the clean mass is exactly exhausted
	beta_bar = np.maximum(beta_bar, 0.0)

	if gamma_bar[T] < 0.99:
		logger.warning("Schedule ends with mask probability %.4f < 0.99; sampling from [MASK] is mismatched", gamma_bar[T])

	for array in (alpha, beta, gamma, alpha_bar, beta_bar, gamma_bar):
		array.setflags(write=False)
	return TransitionSchedule(
		T=T,
		M=M,
		spec=spec,
		alpha=alpha,
		beta=beta,
		gamma=gamma,
		alpha_bar=alpha_bar,
		beta_bar=beta_bar,
		gamma_bar=gamma_bar,
	)


def schedule_from_config(config, M):
	cfg = config.section("diffusion")
	spec = ScheduleSpec(
		kind=cfg.schedule,
		alpha_bar_start=cfg.alpha_bar_start,
		alpha_bar_end=cfg.alpha_bar_end,
		gamma_bar_start=cfg.gamma_bar_start,
		gamma_bar_end=cfg.gamma_bar_end,
		alphas=_float_list(cfg.alphas),
		gammas=_float_list(cfg.gammas),
	)
	return build_schedule(cfg.T, spec, M)


def _float_list(text):
	return tuple(float(v) for v in str(text or "").split(",") if v.strip())
