"""
Loading the flat `section.key = value` configuration files.

    # comments and blank lines are ignored
    diffusion.T = 100
    data.languages = A,B

Command-line `--set key=value` overrides are applied after the file, then
the result is validated as a Pipeline Configuration.
"""

from pathlib import Path

import sta
from sta.doctype.pipeline_configuration.pipeline_configuration import PipelineConfiguration

RESOLVED_NAME = "resolved.conf"


def parse_config_text(text, source="<config>"):
	"""`key = value` lines -> dict, in file order; a repeated key keeps its last value"""
	values = {}
	for number, raw in enumerate(text.splitlines(), start=1):
		line = raw.split("#", 1)[0].strip()
		if not line:
			continue
		if "=" not in line:
			raise sta.ValidationError(f"{source}:{number}: expected `section.key = value`, got '{raw.strip()}'")
		key, value = (part.strip() for part in line.split("=", 1))
		if not key:
			raise sta.ValidationError(f"{source}:{number}: missing key")
		values[key] = value
	return values


def parse_overrides(overrides):
	values = {}
	for item in overrides or ():
		if "=" not in item:
			raise sta.ValidationError(f"Override '{item}' is not key=value")
		key, value = item.split("=", 1)
		values[key.strip()] = value.strip()
	return values


def load_config(path=None, overrides=(), seed=None):
	"""
	Build and validate a PipelineConfiguration from defaults, an optional
	file, `--set` overrides and an optional seed.
	"""
	values = {}
	if path:
		path = Path(path)
		if not path.exists():
			raise sta.DoesNotExistError(f"Config file {path} not found")
		values.update(parse_config_text(path.read_text(encoding="utf-8"), source=str(path)))
	values.update(parse_overrides(overrides))
	if seed is not None:
		values["run.seed"] = seed
	config = PipelineConfiguration(values)
	return config.run_validation()


def archive_config(config, directory):
	"""Write the resolved configuration beside a command's outputs"""
	directory = Path(directory)
	directory.mkdir(parents=True, exist_ok=True)
	path = directory / RESOLVED_NAME
	path.write_text(config.render(), encoding="utf-8")
	return path
