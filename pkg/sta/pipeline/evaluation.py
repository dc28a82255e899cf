import math

import numpy as np

import sta
from sta.data.scenes import SceneSpec
from sta.encoder.speech import embed_captions
from sta.encoder.teacher import embed_image_teacher
from sta.metrics.extractor import attribute_accuracy, eval_feature_extractor
from sta.metrics.scores import (
	RetrievalIndex,
	feature_stats,
	fid,
	inception_score_splits,
	metric_record,
	recall_at_k,
	recall_table,
)

RETRIEVAL_KS = (1, 5, 10)
K_RATIONALE = "k covers the same 5% of a 200-image test set that R@50 covers of a 1000-image set"


def _scene_labels(keys, what):
	if any(key is None for key in keys):
		raise sta.ValidationError(f"Every {what} image needs a scene key for retrieval scoring")
	return np.asarray(keys)


def evaluate_images(classifier, generated, reference, k, is_splits, seed, retrieval_reference=None):
	"""
	Score a generated image set against a reference set with the frozen
	attribute classifier.

	FID compares feature statistics of `generated` and `reference`; IS uses
	the joint color-shape head; R@k retrieves, for every generated image,
	images of the same scene from `retrieval_reference` (default
	`reference`) by feature cosine similarity.
	"""
	candidates = reference if retrieval_reference is None else retrieval_reference
	if not len(generated) or not len(reference) or not len(candidates):
		raise sta.ValidationError("Evaluation needs non-empty generated and reference sets")
	checksum = classifier.checksum()
	gen = eval_feature_extractor(classifier, generated.images)
	ref = eval_feature_extractor(classifier, reference.images)
	cand = ref if candidates is reference else eval_feature_extractor(classifier, candidates.images)

	fid_value = fid(feature_stats(ref.features), feature_stats(gen.features))
	splits = max(1, min(is_splits, len(generated)))
	is_mean, is_std = inception_score_splits(gen.probs, splits)

	index = RetrievalIndex.from_labels(
		cand.features,
		_scene_labels(candidates.scene_keys, "reference"),
		_scene_labels(generated.scene_keys, "generated"),
	)
	if k > len(candidates):
		raise sta.ValidationError(f"--k {k} exceeds the {len(candidates)} retrieval candidates")
	recall = {"R@1": recall_at_k(index, gen.features, 1), f"R@{k}": recall_at_k(index, gen.features, k)}
	specs = [SceneSpec.from_key(key) for key in generated.scene_keys]
	accuracy = attribute_accuracy(classifier, generated.images, specs)

	n = len(generated)
	return {
		"fid": fid_value,
		"is_mean": is_mean,
		"is_std": is_std,
		"recall": recall,
		"k": k,
		"k_rationale": K_RATIONALE,
		"attribute_accuracy": accuracy,
		"extractor_checksum": checksum,
		"n_generated": n,
		"n_reference": len(reference),
		"n_retrieval_candidates": len(candidates),
		"metrics": [
			metric_record("FID", fid_value, n, checksum, seed, n_reference=len(reference)),
			metric_record("IS", is_mean, n, checksum, seed, std=is_std, splits=splits),
			*[metric_record(name, value, n, checksum, seed) for name, value in recall.items()],
		],
	}


def chance_recall(n_candidates, n_matches, k):
	"""Recall@k (percent) of a uniformly random ranking with `n_matches` relevant candidates"""
	if k >= n_candidates:
		return 100.0
	return 100.0 * (1.0 - math.comb(n_candidates - n_matches, k) / math.comb(n_candidates, k))


def _directional_tables(speech, speech_scenes, images, image_scenes):
	to_images = RetrievalIndex.from_labels(images, image_scenes, speech_scenes)
	to_speech = RetrievalIndex.from_labels(speech, speech_scenes, image_scenes)
	return recall_table(to_images, speech, RETRIEVAL_KS), recall_table(to_speech, images, RETRIEVAL_KS)


def retrieval_report(encoder, teacher, manifest, languages, split="test"):
	"""
	Speech->image and image->speech Recall@{1,5,10} between caption
	embeddings and teacher image embeddings, overall and per language.
	"""
	scenes = manifest.scenes(split)
	if not scenes:
		raise sta.DoesNotExistError(f"Split '{split}' is empty")
	images = np.stack([embed_image_teacher(manifest.load_image(r), teacher) for r in scenes])
	image_scenes = np.asarray([r.scene_index for r in scenes])

	captions, caption_scenes, caption_languages = [], [], []
	for record in manifest.split(split):
		for language in languages:
			if language in record.captions:
				captions.append(manifest.load_caption(record, language))
				caption_scenes.append(record.scene_index)
				caption_languages.append(language)
	if not captions:
		raise sta.DoesNotExistError(f"Split '{split}' holds no captions in {languages}")
	speech = embed_captions(encoder, captions)
	caption_scenes = np.asarray(caption_scenes)
	caption_languages = np.asarray(caption_languages)

	report = {"speech_to_image": {}, "image_to_speech": {}, "chance": {}}
	groups = {"all": np.ones(len(captions), dtype=bool)}
	if len(languages) > 1:
		groups.update({language: caption_languages == language for language in languages})
	for name, keep in groups.items():
		if not keep.any():
			continue
		s2i, i2s = _directional_tables(speech[keep], caption_scenes[keep], images, image_scenes)
		report["speech_to_image"][name] = s2i
		report["image_to_speech"][name] = i2s
		per_scene = keep.sum() / len(scenes)
		report["chance"][name] = {
			"speech_to_image": {f"R@{k}": chance_recall(len(scenes), 1, k) for k in RETRIEVAL_KS},
			"image_to_speech": {
				f"R@{k}": chance_recall(int(keep.sum()), max(1, int(round(per_scene))), k) for k in RETRIEVAL_KS
			},
		}
	report["n_scenes"] = len(scenes)
	report["n_captions"] = len(captions)
	report["languages"] = list(languages)
	return report
