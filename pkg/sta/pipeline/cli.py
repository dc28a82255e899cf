"""
`sta gen-data | train | sample | evaluate | retrieval-eval`

Global flags come before the command:

    sta --config desk.conf --seed 3 --set diffusion.T=50 train diffusion
"""

import argparse
import json
import logging
import sys
from pkgutil import resolve_name

import sta
from sta.config import load_config
from sta.hooks import app_description, commands, train_stages

logger = logging.getLogger(__name__)


def build_parser():
	parser = argparse.ArgumentParser(prog="sta", description=app_description)
	parser.add_argument("--config", help="flat `section.key = value` config file")
	parser.add_argument("--seed", type=int, help="overrides run.seed")
	parser.add_argument(
		"--out",
		help="corpus directory for gen-data, work directory for train, output directory otherwise",
	)
	parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
	parser.add_argument("--verbose", action="store_true")
	parser.add_argument("--progress", action="store_true", help="show progress bars")
	sub = parser.add_subparsers(dest="command", required=True)

	gen = sub.add_parser("gen-data", help="render the synthetic paired corpus")
	gen.add_argument("--force", action="store_true", help="replace a non-empty corpus directory")
	gen.add_argument("--bilingual", action="store_true", help="captions in languages A and B")
	gen.add_argument("--scenes", type=int, dest="n_scenes")
	gen.add_argument("--speakers", type=int)

	train = sub.add_parser("train", help="train one stage")
	train.add_argument("stage", choices=list(train_stages))
	train.add_argument("--resume", action="store_true", help="continue from the stage's last checkpoint")

	sample = sub.add_parser("sample", help="generate images from spoken captions")
	sample.add_argument("--caption", help="caption file (.stac)")
	sample.add_argument("--scene", help="scene spec, e.g. shape=circle,color=red,size=small,position=4")
	sample.add_argument("--language")
	sample.add_argument("--speaker", default="spk0")
	sample.add_argument("--count", type=int)
	sample.add_argument("--shuffle-captions", action="store_true", help="shuffled-pair baseline")
	sample.add_argument("--noise", action="store_true", help="uniform-noise baseline")
	sample.add_argument("--allow-mismatch", action="store_true")

	evaluate = sub.add_parser("evaluate", help="FID, IS and R@k of generated images")
	evaluate.add_argument("--generated", help="directory written by `sta sample`")
	evaluate.add_argument("--reference", help="reference image directory; test-split scenes by default")
	evaluate.add_argument("--k", type=int)
	evaluate.add_argument("--allow-mismatch", action="store_true")

	retrieval = sub.add_parser("retrieval-eval", help="speech<->image retrieval with the speech encoder")
	retrieval.add_argument("--untrained", action="store_true", help="score a randomly initialized encoder")
	retrieval.add_argument("--allow-mismatch", action="store_true")
	return parser


def configure_logging(verbose=False):
	handler = logging.StreamHandler(sys.stderr)
	handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
	package = logging.getLogger("sta")
	package.handlers[:] = [handler]
	package.setLevel(logging.DEBUG if verbose else logging.INFO)
	package.propagate = False


def run(argv=None):
	"""Parse `argv`, dispatch to the command's api function and return its result dict"""
	args = build_parser().parse_args(argv)
	configure_logging(args.verbose)
	try:
		config = load_config(args.config, overrides=args.set, seed=args.seed)
	except Exception as e:
		logger.error("Configuration failed: %s", e)
		return {"status": "error", "message": str(e)}

	options = {
		key: value
		for key, value in vars(args).items()
		if key not in ("config", "seed", "set", "verbose", "command")
	}
	return resolve_name(commands[args.command])(config, **options)


def main(argv=None):
	result = run(argv)
	print(json.dumps(result, indent=1, sort_keys=True, default=str))
	return 1 if result.get("status") == "error" else 0


if __name__ == "__main__":
	sys.exit(main())
