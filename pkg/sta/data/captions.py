"""
Spoken-caption surrogate.

A caption is a continuous (L, d_frame) feature matrix. Each word of the
caption program becomes a run of frames gliding between two word-specific
prototype vectors; runs are concatenated and smoothed, so nothing marks
where one word ends and the next begins. Speakers change tempo, amplitude
and a constant offset, and add noise. The speaker id is never part of
the output.
"""

import zlib
from dataclasses import dataclass

import numpy as np

import sta
from sta.hooks import CAPTION_LANGUAGES


@dataclass(frozen=True)
class CaptionProgram:
	words: tuple
	language: str
	speaker: str

	def template_ids(self):
		return [f"{self.language}.{w}" for w in self.words]


@dataclass(frozen=True)
class SpeakerProfile:
	tempo: float
	amplitude: float
	offset: np.ndarray
	noise: float


def _stable_rng(*parts):
	"""Generator seeded from strings, independent of PYTHONHASHSEED"""
	entropy = [zlib.crc32(str(p).encode("utf-8")) for p in parts]
	return np.random.default_rng(np.random.SeedSequence(entropy))


def language_words(language):
	"""Every word of a language's vocabulary"""
	grammar = get_language(language)
	words = []
	for role in ("shape", "color", "size"):
		words.extend(grammar[role].values())
	words.extend(grammar["row"])
	words.extend(grammar["col"])
	return words


def get_language(language):
	if language not in CAPTION_LANGUAGES:
		raise sta.DoesNotExistError(
			f"Language '{language}' is not registered. Registered: {sorted(CAPTION_LANGUAGES)}"
		)
	return CAPTION_LANGUAGES[language]


def caption_program(spec, language, speaker):
	"""Ordered word list describing `spec`, following the language's grammar"""
	grammar = get_language(language)
	by_role = {
		"shape": grammar["shape"][spec.shape],
		"color": grammar["color"][spec.color],
		"size": grammar["size"][spec.size],
		"row": grammar["row"][spec.row],
		"col": grammar["col"][spec.col],
	}
	return CaptionProgram(words=tuple(by_role[role] for role in grammar["order"]), language=language, speaker=speaker)


def word_prototypes(language, word, d_frame):
	"""Start and end prototype vectors for a word (fixed per language and word)"""
	rng = _stable_rng("word", language, word, d_frame)
	return rng.normal(0.0, 1.0, size=(2, d_frame))


def speaker_profile(speaker, d_frame):
	rng = _stable_rng("speaker", speaker, d_frame)
	return SpeakerProfile(
		tempo=float(rng.uniform(0.75, 1.3)),
		amplitude=float(rng.uniform(0.8, 1.2)),
		offset=rng.normal(0.0, 0.3, size=d_frame),
		noise=0.1,
	)


def synthesize_caption(spec, language, speaker, rng, d_frame=8, frames_per_symbol=8):
	"""
	Render a scene's caption as a frame matrix.

	Args:
	    spec: SceneSpec
	    language: registered language tag
	    speaker: speaker id; drives tempo/amplitude/offset
	    rng: numpy Generator for duration jitter and frame noise

	Returns:
	    (L, d_frame) float array, L >= 1
	"""
	program = caption_program(spec, language, speaker)
	profile = speaker_profile(speaker, d_frame)

	runs = []
	for word in program.words:
		start, end = word_prototypes(language, word, d_frame)
		duration = max(2, int(round(frames_per_symbol * profile.tempo * rng.uniform(0.8, 1.2))))
		w = np.linspace(0.0, 1.0, duration)[:, None]
		runs.append((1.0 - w) * start + w * end)
	frames = np.concatenate(runs, axis=0)

	# 3-tap smoothing blurs word joins
	padded = np.concatenate([frames[:1], frames, frames[-1:]], axis=0)
	frames = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0

	frames = profile.amplitude * frames + profile.offset
	frames = frames + profile.noise * rng.normal(size=frames.shape)
	return frames
