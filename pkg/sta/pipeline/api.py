import json
import logging
import shutil
from pathlib import Path

import sta
from sta.config import archive_config

logger = logging.getLogger(__name__)


def _ensure_status(results):
	if not isinstance(results, dict):
		return {"status": "success", "message": str(results)}
	if "status" not in results:
		results["status"] = "success"
	return results


def cmd_gen_data(config, out=None, force=False, bilingual=False, n_scenes=None, speakers=None, progress=False):
	"""
	Render the paired speech/image corpus into `data.corpus_dir` (or `out`).
	A non-empty target is only replaced with `force`.
	"""
	try:
		from sta.data.corpus import attribute_balance, audit_split_disjointness, generate_corpus, summary

		if out:
			config.set("data.corpus_dir", out)
		if bilingual:
			config.set("data.languages", "A,B")
		if n_scenes is not None:
			config.set("data.n_scenes", n_scenes)
		if speakers is not None:
			config.set("data.speakers_per_caption", speakers)
		config.run_validation()

		root = Path(config.get("data.corpus_dir"))
		if root.exists() and any(root.iterdir()):
			if not force:
				raise sta.ValidationError(f"{root} is not empty. Pass --force to regenerate the corpus there.")
			for name in ("images", "captions"):
				shutil.rmtree(root / name, ignore_errors=True)
		cfg = config.section("data")
		manifest = generate_corpus(
			root,
			cfg.n_scenes,
			config.languages,
			cfg.speakers_per_caption,
			config.get("run.seed"),
			image_size=cfg.image_size,
			d_frame=cfg.d_frame,
			frames_per_symbol=cfg.frames_per_symbol,
			speaker_pool=cfg.speaker_pool,
			progress=progress,
		)
		audit_split_disjointness(manifest)
		archive_config(config, root)
		return {
			"status": "success",
			"corpus_dir": str(root),
			"summary": summary(manifest),
			"attribute_balance": attribute_balance(manifest),
		}
	except Exception as e:
		logger.exception("Generate data failed: %s", e)
		return {"status": "error", "message": str(e)}


def cmd_train(config, stage, out=None, resume=False, progress=False):
	"""Train one stage; its dependencies must already be trained"""
	try:
		from sta.pipeline.engine import PipelineEngine

		if out:
			config.set("run.work_dir", out)
		engine = PipelineEngine(config, progress=progress)
		return _ensure_status(engine.train(stage, resume=resume))
	except Exception as e:
		logger.exception("Train failed: %s", e)
		return {"status": "error", "message": str(e)}


def cmd_sample(
	config,
	out=None,
	caption=None,
	scene=None,
	language=None,
	speaker="spk0",
	count=None,
	shuffle_captions=False,
	noise=False,
	allow_mismatch=False,
	progress=False,
):
	"""
	Generate images from spoken captions.

	The condition comes from a caption file (`caption`), a synthesized
	caption of a scene spec (`scene`), or by default every test-split
	caption. `shuffle_captions` pairs each entry with another entry's
	caption; `noise` writes uniform-noise images instead of sampling.
	"""
	try:
		from sta.pipeline.engine import PipelineEngine
		from sta.pipeline.sampling import (
			Generator,
			noise_images,
			prompt_from_caption_file,
			prompt_from_scene,
			prompts_from_split,
			sample_rng,
			write_samples,
		)

		engine = PipelineEngine(config, progress=progress)
		seed = config.get("run.seed")
		rng = sample_rng(seed)
		if caption and scene:
			raise sta.ValidationError("Give either a caption file or a scene spec, not both")
		if caption:
			prompts = [prompt_from_caption_file(caption, language)] * (count or 4)
		elif scene:
			prompt = prompt_from_scene(config, scene, language or config.languages[0], speaker, rng)
			prompts = [prompt] * (count or 4)
		else:
			prompts = prompts_from_split(engine.manifest, config.languages)
			if count:
				prompts = prompts[:count]
		if not prompts:
			raise sta.ValidationError("Nothing to sample: count must be >= 1")

		order = list(range(len(prompts)))
		if shuffle_captions:
			order = rng.permutation(len(prompts)).tolist()
		if noise:
			images = noise_images(len(prompts), config.get("data.image_size"), rng)
		else:
			generator = Generator(engine, allow_mismatch=allow_mismatch)
			embeddings = generator.embed(prompts)[order]
			images = generator.generate(embeddings, rng)

		directory = Path(out) if out else engine.work_dir / "samples"
		meta = {
			"seed": seed,
			"config_digest": engine.stage_digest("diffusion"),
			"start_state": config.get("diffusion.start_state"),
			"shuffled_captions": bool(shuffle_captions),
			"caption_order": order,
			"noise": bool(noise),
		}
		path = write_samples(directory, images, prompts, meta)
		archive_config(config, directory)
		return {"status": "success", "out": str(directory), "samples": len(prompts), "index": str(path)}
	except Exception as e:
		logger.exception("Sample failed: %s", e)
		return {"status": "error", "message": str(e)}


def cmd_evaluate(config, generated=None, reference=None, out=None, k=None, allow_mismatch=False, progress=False):
	"""
	FID, IS (mean and sd over splits), R@1 and R@k of generated images
	against reference images. By default FID compares with every corpus
	scene and R@k retrieves from the test-split scenes.
	"""
	try:
		from sta.pipeline.engine import PipelineEngine
		from sta.pipeline.evaluation import evaluate_images
		from sta.pipeline.sampling import load_image_set, reference_set

		engine = PipelineEngine(config, progress=progress)
		generated_dir = Path(generated) if generated else engine.work_dir / "samples"
		generated_set = load_image_set(generated_dir)
		digest = engine.stage_digest("diffusion")
		sampled_under = generated_set.meta.get("config_digest")
		if sampled_under != digest:
			message = (
				f"{generated_dir} was sampled under config digest {str(sampled_under)[:12]}, "
				f"current config gives {digest[:12]}"
			)
			if not allow_mismatch:
				raise sta.ChecksumError(message + ". Resample or pass --allow-mismatch.")
			logger.warning(message)
		if reference:
			reference_images = retrieval_images = load_image_set(reference)
		else:
			reference_images = reference_set(engine.manifest)
			retrieval_images = reference_set(engine.manifest, "test")
			if not set(generated_set.scene_keys) <= set(retrieval_images.scene_keys):
				logger.info("Generated scenes outside the test split; retrieving from the whole corpus")
				retrieval_images = reference_images

		classifier = engine.load_stage("evaluator", allow_mismatch=allow_mismatch)
		report = evaluate_images(
			classifier,
			generated_set,
			reference_images,
			k=k or config.get("metrics.k"),
			is_splits=config.get("metrics.is_splits"),
			seed=config.get("run.seed"),
			retrieval_reference=retrieval_images,
		)
		report.update(
			{
				"generated": str(generated_dir),
				"reference": str(reference) if reference else reference_images.meta["source"],
				"retrieval_reference": str(reference) if reference else retrieval_images.meta["source"],
				"config_digest": digest,
				"evaluator_digest": engine.stage_digest("evaluator"),
			}
		)
		directory = Path(out) if out else generated_dir
		directory.mkdir(parents=True, exist_ok=True)
		(directory / "evaluation.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
		archive_config(config, directory)
		return _ensure_status(report)
	except Exception as e:
		logger.exception("Evaluate failed: %s", e)
		return {"status": "error", "message": str(e)}


def cmd_retrieval_eval(config, out=None, untrained=False, allow_mismatch=False, progress=False):
	"""
	Speech<->image retrieval with the speech encoder against teacher image
	embeddings. `untrained` scores a freshly initialized encoder instead.
	"""
	try:
		from sta.encoder.teacher import build_teacher
		from sta.pipeline.engine import PipelineEngine
		from sta.pipeline.evaluation import retrieval_report

		engine = PipelineEngine(config, progress=progress)
		if untrained:
			encoder = engine.build_stage("encoder")
		else:
			encoder = engine.load_stage("encoder", allow_mismatch=allow_mismatch)
		report = retrieval_report(encoder, build_teacher(config), engine.manifest, config.languages)
		report.update({"untrained": bool(untrained), "config_digest": engine.stage_digest("encoder")})

		directory = Path(out) if out else engine.work_dir / "retrieval"
		directory.mkdir(parents=True, exist_ok=True)
		name = "retrieval.untrained.json" if untrained else "retrieval.json"
		(directory / name).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
		archive_config(config, directory)
		return _ensure_status(report)
	except Exception as e:
		logger.exception("Retrieval eval failed: %s", e)
		return {"status": "error", "message": str(e)}
