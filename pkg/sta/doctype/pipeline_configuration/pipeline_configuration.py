# Copyright (c) 2025, Apstic and contributors
# For license information, please see license.txt

import hashlib
from types import SimpleNamespace

import sta
from sta.hooks import CAPTION_LANGUAGES
from sta.model.record import Record


class PipelineConfiguration(Record):
	schema = "pipeline_configuration"

	def section(self, name):
		"""Every value of one section as attributes named by plain fieldname"""
		prefix = f"{name}."
		values = {key[len(prefix) :]: value for key, value in self._values.items() if key.startswith(prefix)}
		if not values:
			raise sta.DoesNotExistError(f"Unknown configuration section '{name}'")
		return SimpleNamespace(**values)

	def get_list(self, key):
		return [part.strip() for part in str(self.get(key, "")).split(",") if part.strip()]

	@property
	def languages(self):
		return self.get_list("data.languages")

	def validate(self):
		stride = self.get("vqvae.stride")
		if stride < 1 or stride & (stride - 1):
			raise sta.ValidationError(f"vqvae.stride must be a power of two, got {stride}")
		size = self.get("data.image_size")
		if size < 4 or size % stride or size % 4:
			raise sta.ValidationError(f"data.image_size {size} must be divisible by 4 and by vqvae.stride {stride}")
		for section in ("encoder", "denoiser"):
			width, heads = self.get(f"{section}.width"), self.get(f"{section}.heads")
			if heads < 1 or width % heads:
				raise sta.ValidationError(f"{section}.width {width} is not divisible by {section}.heads {heads}")
		if self.get("encoder.kernel") % 2 == 0:
			raise sta.ValidationError(f"encoder.kernel must be odd, got {self.get('encoder.kernel')}")
		if self.get("diffusion.T") < 1:
			raise sta.ValidationError("diffusion.T must be >= 1")
		if self.get("denoiser.blocks") < 1:
			raise sta.ValidationError("denoiser.blocks must be >= 1")
		if self.get("vqvae.codebook_size") < 2:
			raise sta.ValidationError("vqvae.codebook_size must be >= 2")
		for key in ("vqvae.batch", "encoder.batch", "diffusion.batch", "evaluator.batch", "metrics.k", "metrics.is_splits"):
			if self.get(key) < 1:
				raise sta.ValidationError(f"{key} must be >= 1")

		languages = self.languages
		if not languages:
			raise sta.ValidationError("data.languages names no language")
		for language in languages:
			if language not in CAPTION_LANGUAGES:
				raise sta.DoesNotExistError(
					f"Caption language '{language}' is not registered. Known: {sorted(CAPTION_LANGUAGES)}"
				)
		if len(set(languages)) != len(languages):
			raise sta.ValidationError(f"data.languages repeats a language: {languages}")
		if not 1 <= self.get("data.speakers_per_caption") <= self.get("data.speaker_pool"):
			raise sta.ValidationError("data.speakers_per_caption must be between 1 and data.speaker_pool")

	def normalize(self):
		"""Normalise the language list so equal configs render identically"""
		self._values["data.languages"] = ",".join(self.languages)

	def render(self, sections=None, digest_only=False):
		"""Canonical `key = value` text, sorted by key"""
		lines = []
		for key in sorted(self._values):
			field = self.fields[key]
			if sections is not None and field.section not in sections:
				continue
			if digest_only and field.no_digest:
				continue
			lines.append(f"{key} = {_format(self._values[key])}")
		return "\n".join(lines) + "\n"

	def digest(self, sections=None):
		"""SHA-256 of the canonical rendering; path-like fields are left out"""
		return hashlib.sha256(self.render(sections, digest_only=True).encode("utf-8")).hexdigest()


def _format(value):
	if value is None:
		return ""
	if isinstance(value, float):
		return repr(value)
	return str(value)
