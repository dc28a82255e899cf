"""
Speech-to-image generation: caption -> embedding -> token grid -> image.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

import sta
from sta.data.captions import get_language, synthesize_caption
from sta.data.formats import contact_sheet, read_caption, read_png, write_png
from sta.data.scenes import SceneSpec
from sta.denoiser.model import denoise_logits
from sta.diffusion.process import sample
from sta.encoder.speech import embed_captions
from sta.vq.codec import decode_tokens

SAMPLES_NAME = "samples.json"
GRID_NAME = "grid.png"
# seed-sequence stream of `sta sample`; the training stages use 0..3
SAMPLE_STREAM = 16

logger = logging.getLogger(__name__)


@dataclass
class Prompt:
	"""One spoken caption to generate from, with what is known about its origin"""

	caption: np.ndarray
	scene_key: str = None
	language: str = None
	speaker: str = None
	source: str = None

	def as_dict(self):
		return {"scene_key": self.scene_key, "language": self.language, "speaker": self.speaker, "source": self.source}


def sample_rng(seed):
	return np.random.default_rng(np.random.SeedSequence([seed, SAMPLE_STREAM]))


def prompt_from_caption_file(path, language=None):
	"""
	A caption file as a prompt. Corpus caption files are named
	`<scene>-<speaker>-<language>.stac`; the language is taken from the name
	when not given.
	"""
	path = Path(path)
	if not path.exists():
		raise sta.DoesNotExistError(f"Caption file {path} not found")
	if language is None:
		parts = path.stem.split("-")
		language = parts[-1] if len(parts) == 3 else None
	if language is not None:
		get_language(language)
	return Prompt(caption=read_caption(path), language=language, source=str(path))


def prompt_from_scene(config, scene, language, speaker, rng):
	"""Synthesize the caption of a scene spec such as `shape=circle,color=red,size=small,position=4`"""
	spec = scene if isinstance(scene, SceneSpec) else SceneSpec.parse(scene)
	get_language(language)
	frames = synthesize_caption(
		spec,
		language,
		speaker,
		rng,
		d_frame=config.get("data.d_frame"),
		frames_per_symbol=config.get("data.frames_per_symbol"),
	)
	return Prompt(caption=frames, scene_key=spec.key, language=language, speaker=speaker, source="scene")


def prompts_from_split(manifest, languages, split="test"):
	"""Every caption of a split in the given languages, in manifest order"""
	prompts = []
	for record in manifest.split(split):
		for language in languages:
			if language in record.captions:
				prompts.append(
					Prompt(
						caption=manifest.load_caption(record, language),
						scene_key=record.scene.key,
						language=language,
						speaker=record.speaker,
						source=record.captions[language],
					)
				)
	if not prompts:
		raise sta.DoesNotExistError(f"Split '{split}' holds no captions in {languages}")
	return prompts


class Generator:
	"""The three frozen stages wired together for sampling"""

	def __init__(self, engine, allow_mismatch=False):
		self.codec = engine.load_stage("vqvae", allow_mismatch=allow_mismatch)
		self.encoder = engine.load_stage("encoder", allow_mismatch=allow_mismatch)
		self.denoiser = engine.load_stage("diffusion", allow_mismatch=allow_mismatch)
		self.schedule = engine.load_schedule(allow_mismatch=allow_mismatch)
		self.start_state = engine.config.get("diffusion.start_state")
		self.batch = engine.config.get("diffusion.batch")
		self.progress = engine.progress

	def embed(self, prompts):
		return embed_captions(self.encoder, [p.caption for p in prompts])

	def _logits(self, k_t, t, y):
		return denoise_logits(self.denoiser, k_t, t, y)

	def generate(self, embeddings, rng):
		"""(B, d_emb) embeddings -> (B, H, W, 3) images"""
		images = []
		starts = range(0, len(embeddings), self.batch)
		for start in tqdm(starts, desc="sample", disable=not self.progress):
			y = embeddings[start : start + self.batch]
			tokens = sample(self._logits, y, self.schedule, rng, self.denoiser.n_tokens, self.start_state)
			images.append(decode_tokens(self.codec, tokens))
		return np.concatenate(images, axis=0)


def noise_images(n, image_size, rng):
	"""Uniform pixel noise; the floor any generator should beat"""
	return rng.uniform(0.0, 1.0, size=(n, image_size, image_size, 3))


def write_samples(directory, images, prompts, meta):
	"""
	Write `0000.png, 0001.png, ...`, a contact sheet and `samples.json`
	listing, per file, the scene and caption it was generated for.
	"""
	directory = Path(directory)
	directory.mkdir(parents=True, exist_ok=True)
	for stale in directory.glob("[0-9][0-9][0-9][0-9].png"):
		stale.unlink()
	entries = []
	for i, (image, prompt) in enumerate(zip(images, prompts, strict=True)):
		name = f"{i:04d}.png"
		write_png(directory / name, image)
		entries.append({"file": name, **prompt.as_dict()})
	write_png(directory / GRID_NAME, contact_sheet(list(images)))
	path = directory / SAMPLES_NAME
	path.write_text(json.dumps({**meta, "samples": entries}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
	logger.info("Wrote %d samples to %s", len(entries), directory)
	return path


@dataclass
class ImageSet:
	images: np.ndarray
	scene_keys: list
	meta: dict

	def __len__(self):
		return len(self.scene_keys)


def load_image_set(directory):
	"""The images listed in a directory's samples.json, with their scene keys"""
	directory = Path(directory)
	path = directory / SAMPLES_NAME
	if not path.exists():
		raise sta.DoesNotExistError(f"No {SAMPLES_NAME} in {directory}")
	meta = json.loads(path.read_text(encoding="utf-8"))
	entries = meta.pop("samples", [])
	if not entries:
		raise sta.ValidationError(f"{directory} lists no images")
	images = np.stack([read_png(directory / entry["file"]) for entry in entries])
	return ImageSet(images=images, scene_keys=[entry.get("scene_key") for entry in entries], meta=meta)


def reference_set(manifest, split=None):
	"""One corpus image per scene, of one split or (by default) of the whole corpus"""
	scenes = manifest.scenes(split)
	if not scenes:
		raise sta.DoesNotExistError(f"Split '{split}' is empty" if split else "The corpus holds no scenes")
	return ImageSet(
		images=np.stack([manifest.load_image(r) for r in scenes]),
		scene_keys=[r.scene.key for r in scenes],
		meta={"source": f"corpus:{split}" if split else "corpus"},
	)
