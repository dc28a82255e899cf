import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

import sta
from sta.data.captions import get_language, synthesize_caption
from sta.data.formats import read_caption, read_png, write_caption, write_png
from sta.data.scenes import SceneSpec, all_scenes, render
from sta.hooks import SCENE_COLORS, SCENE_POSITIONS, SCENE_SHAPES, SCENE_SIZES

SPLITS = ("train", "dev", "test")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SPLIT_PERIOD = len(SCENE_POSITIONS)

logger = logging.getLogger(__name__)


@dataclass
class CorpusRecord:
	id: str
	scene_index: int
	image: str
	captions: dict
	speaker: str
	scene: SceneSpec
	split: str

	@property
	def languages(self):
		return sorted(self.captions)

	def as_dict(self):
		return {
			"id": self.id,
			"scene_index": self.scene_index,
			"image": self.image,
			"captions": dict(sorted(self.captions.items())),
			"languages": self.languages,
			"speaker": self.speaker,
			"scene": self.scene.as_dict(),
			"scene_key": self.scene.key,
			"split": self.split,
		}

	@classmethod
	def from_dict(cls, d):
		return cls(
			id=d["id"],
			scene_index=int(d["scene_index"]),
			image=d["image"],
			captions=dict(d["captions"]),
			speaker=d["speaker"],
			scene=SceneSpec.from_dict(d["scene"]),
			split=d["split"],
		)


@dataclass
class CorpusManifest:
	root: Path
	seed: int
	languages: list
	settings: dict
	records: list = field(default_factory=list)

	def split(self, name):
		if name not in SPLITS:
			raise sta.ValidationError(f"Unknown split '{name}'. Expected one of {SPLITS}")
		return [r for r in self.records if r.split == name]

	def scenes(self, split=None):
		"""One record per distinct scene index (first speaker), in index order"""
		seen, out = set(), []
		for r in self.records:
			if (split is None or r.split == split) and r.scene_index not in seen:
				seen.add(r.scene_index)
				out.append(r)
		return out

	def load_image(self, record):
		return read_png(self.root / record.image)

	def load_caption(self, record, language):
		if language not in record.captions:
			raise sta.DoesNotExistError(f"Record {record.id} has no caption in language '{language}'")
		return read_caption(self.root / record.captions[language])

	def as_dict(self):
		return {
			"version": MANIFEST_VERSION,
			"seed": self.seed,
			"languages": list(self.languages),
			"settings": dict(sorted(self.settings.items())),
			"records": [r.as_dict() for r in self.records],
		}

	def save(self):
		path = Path(self.root) / MANIFEST_NAME
		path.write_text(json.dumps(self.as_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
		return path


def load_manifest(root):
	root = Path(root)
	path = root / MANIFEST_NAME
	if not path.exists():
		raise sta.DoesNotExistError(f"No corpus manifest at {path}. Run `sta gen-data` first.")
	d = json.loads(path.read_text(encoding="utf-8"))
	return CorpusManifest(
		root=root,
		seed=int(d["seed"]),
		languages=list(d["languages"]),
		settings=dict(d.get("settings", {})),
		records=[CorpusRecord.from_dict(r) for r in d["records"]],
	)


def split_of(spec, offset):
	"""
	Split for an attribute combination.

	The residue runs over all nine positions for every fixed shape, color and
	size, so each of those combinations puts exactly one position in test and
	one in dev.
	"""
	a = spec.attribute_indices()
	residue = (a["position"] + a["shape"] + 3 * a["color"] + offset) % SPLIT_PERIOD
	if residue == 0:
		return "test"
	if residue == 1:
		return "dev"
	return "train"


def select_scenes(combos, n_scenes, offset, rng):
	"""
	Pick `n_scenes` combinations with every split receiving its proportional
	share, each split's pool taken in a seeded order and cycled when the
	request exceeds it.
	"""
	pools = {name: [] for name in SPLITS}
	for index in rng.permutation(len(combos)):
		spec = combos[index]
		pools[split_of(spec, offset)].append(spec)

	quota = {name: max(1, round(n_scenes * len(pools[name]) / len(combos))) for name in ("test", "dev")}
	quota["train"] = n_scenes - quota["test"] - quota["dev"]
	if quota["train"] < 1:
		raise sta.ValidationError(
			f"Cannot build attribute-disjoint splits for {n_scenes} scenes: train would be empty. "
			"Request more scenes."
		)

	picked = [(pools[name][i % len(pools[name])], name) for name in SPLITS for i in range(quota[name])]
	picked = [picked[i] for i in rng.permutation(len(picked))]
	return [spec for spec, _ in picked], [name for _, name in picked]


def generate_corpus(
	root,
	n_scenes,
	languages,
	speakers_per_caption,
	seed,
	image_size=16,
	d_frame=8,
	frames_per_symbol=8,
	speaker_pool=6,
	progress=False,
):
	"""
	Render a paired corpus to `root` and write its manifest.

	Every scene gets one image and, for each of `speakers_per_caption`
	distinct speakers, one caption in every requested language. A scene's
	attribute combination belongs to exactly one split, so test scenes
	never share a combination with train or dev.

	Returns:
	    CorpusManifest
	"""
	for language in languages:
		get_language(language)
	if not languages:
		raise sta.ValidationError("At least one caption language is required")
	if n_scenes < 1:
		raise sta.ValidationError(f"n_scenes must be >= 1, got {n_scenes}")
	if not 1 <= speakers_per_caption <= speaker_pool:
		raise sta.ValidationError(f"speakers_per_caption must be in [1, {speaker_pool}], got {speakers_per_caption}")

	root = Path(root)
	combos = all_scenes()
	rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
	offset = int(rng.integers(SPLIT_PERIOD))
	chosen, splits = select_scenes(combos, n_scenes, offset, rng)

	pool = [f"spk{j}" for j in range(speaker_pool)]
	records = []
	for i in tqdm(range(n_scenes), desc="scenes", disable=not progress):
		spec = chosen[i]
		image_rel = f"images/{i:04d}.png"
		write_png(root / image_rel, render(spec, image_size))

		scene_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, i]))
		speakers = sorted(scene_rng.choice(len(pool), size=speakers_per_caption, replace=False).tolist())
		for s in speakers:
			speaker = pool[s]
			captions = {}
			for li, language in enumerate(languages):
				caption_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, i, s, li]))
				frames = synthesize_caption(spec, language, speaker, caption_rng, d_frame, frames_per_symbol)
				rel = f"captions/{i:04d}-{speaker}-{language}.stac"
				write_caption(root / rel, frames)
				captions[language] = rel
			records.append(
				CorpusRecord(
					id=f"{i:04d}-{speaker}",
					scene_index=i,
					image=image_rel,
					captions=captions,
					speaker=speaker,
					scene=spec,
					split=splits[i],
				)
			)

	manifest = CorpusManifest(
		root=root,
		seed=seed,
		languages=list(languages),
		settings={
			"n_scenes": n_scenes,
			"speakers_per_caption": speakers_per_caption,
			"image_size": image_size,
			"d_frame": d_frame,
			"frames_per_symbol": frames_per_symbol,
			"speaker_pool": speaker_pool,
			"split_offset": offset,
		},
		records=records,
	)
	manifest.save()
	logger.info("Wrote corpus of %d scenes / %d records to %s", n_scenes, len(records), root)
	return manifest


def audit_split_disjointness(manifest):
	"""Raise if any test attribute combination also appears in train or dev"""
	keys = {name: {r.scene.key for r in manifest.split(name)} for name in SPLITS}
	leaked = keys["test"] & (keys["train"] | keys["dev"])
	if leaked:
		raise sta.ValidationError(f"Test combinations leak into train/dev: {sorted(leaked)[:5]}")
	return True


def attribute_balance(manifest):
	"""
	Largest absolute deviation, over splits, attributes and attribute values,
	between a value's share of a split's scenes and the uniform share.
	"""
	values = {
		"shape": SCENE_SHAPES,
		"color": SCENE_COLORS,
		"size": SCENE_SIZES,
		"position": SCENE_POSITIONS,
	}
	worst = 0.0
	for name in SPLITS:
		scenes = [r.scene.as_dict() for r in manifest.scenes(name)]
		if not scenes:
			continue
		for attribute, options in values.items():
			for option in options:
				share = sum(1 for s in scenes if s[attribute] == option) / len(scenes)
				worst = max(worst, abs(share - 1.0 / len(options)))
	return worst


def summary(manifest):
	return {
		"scenes": len({r.scene_index for r in manifest.records}),
		"records": len(manifest.records),
		"captions": sum(len(r.captions) for r in manifest.records),
		"languages": list(manifest.languages),
		"splits": {name: len(manifest.scenes(name)) for name in SPLITS},
	}
