"""
Schema-backed records.

A schema is declared as JSON under `sta/doctype/<name>/<name>.json`: a
list of fields with fieldname, fieldtype, default, options, reqd,
non_negative and no_digest. "Section Break" fields group the fields that
follow them; a field's key is `<section>.<fieldname>` inside a section and
plain `fieldname` before the first one.
"""

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import sta

SCHEMA_ROOT = Path(__file__).resolve().parent.parent / "doctype"
VALUE_TYPES = ("Int", "Float", "Check", "Data", "Small Text", "Select", "Datetime")


@dataclass(frozen=True)
class Field:
	key: str
	fieldname: str
	fieldtype: str
	section: str | None = None
	default: object = None
	options: str = ""
	reqd: bool = False
	non_negative: bool = False
	no_digest: bool = False
	description: str = ""

	@classmethod
	def from_json(cls, field, section):
		key = f"{section}.{field['fieldname']}" if section else field["fieldname"]
		return cls(
			key=key,
			fieldname=field["fieldname"],
			fieldtype=field["fieldtype"],
			section=section,
			default=field.get("default"),
			options=field.get("options", ""),
			reqd=bool(field.get("reqd")),
			non_negative=bool(field.get("non_negative")),
			no_digest=bool(field.get("no_digest")),
			description=field.get("description", ""),
		)

	@property
	def choices(self):
		return self.options.split("\n") if self.options else []


@lru_cache(maxsize=None)
def load_schema(name):
	"""Fields of the schema `name` (a directory under sta/doctype), keyed by field key, in declaration order"""
	path = SCHEMA_ROOT / name / f"{name}.json"
	if not path.exists():
		raise sta.DoesNotExistError(f"Schema {name} not found at {path}")
	fields = {}
	section = None
	for raw in json.loads(path.read_text(encoding="utf-8"))["fields"]:
		if raw["fieldtype"] == "Section Break":
			section = raw["fieldname"]
			continue
		if raw["fieldtype"] not in VALUE_TYPES:
			raise sta.ValidationError(f"{name}: unsupported fieldtype {raw['fieldtype']} for {raw['fieldname']}")
		field = Field.from_json(raw, section)
		fields[field.key] = field
	return fields


def coerce(field, value):
	"""Convert text or a Python value to the field's type; raise ValidationError when impossible"""
	fieldtype = field.fieldtype
	if value is None:
		return None
	try:
		if fieldtype == "Int":
			if isinstance(value, float) and not value.is_integer():
				raise ValueError(value)
			return int(str(value).strip()) if isinstance(value, str) else int(value)
		if fieldtype == "Float":
			return float(value)
		if fieldtype == "Check":
			text = str(value).strip().lower()
			if text in ("1", "true", "yes", "on"):
				return 1
			if text in ("0", "false", "no", "off", ""):
				return 0
			raise ValueError(value)
	except (TypeError, ValueError):
		raise sta.ValidationError(f"{field.key}: cannot read {value!r} as {fieldtype}")
	return str(value).strip()


def utc_timestamp():
	return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Record:
	"""
	One record of a schema. Values live in `self._values` keyed by field
	key; plain keys are also readable as attributes.
	"""

	schema = None

	def __init__(self, values=None, **kwargs):
		self.fields = load_schema(self.schema)
		self._values = {
			key: coerce(field, field.default) if field.default is not None else None
			for key, field in self.fields.items()
		}
		for key, value in {**(values or {}), **kwargs}.items():
			self.set(key, value)

	def __getattr__(self, key):
		values = self.__dict__.get("_values")
		if values is not None and key in values:
			return values[key]
		raise AttributeError(key)

	def get(self, key, default=None):
		if key not in self.fields:
			raise sta.DoesNotExistError(f"{self.schema} has no field {key}")
		value = self._values.get(key)
		return default if value is None else value

	def set(self, key, value):
		field = self.fields.get(key)
		if field is None:
			raise sta.ValidationError(f"Unknown {self.schema} field '{key}'")
		self._values[key] = coerce(field, value)

	def as_dict(self):
		return dict(self._values)

	def run_validation(self):
		"""Type-level checks from the schema, then the record's own `validate` and `normalize`"""
		for key, field in self.fields.items():
			value = self._values.get(key)
			if field.reqd and value in (None, ""):
				raise sta.ValidationError(f"{self.schema}: {key} is required")
			if value is None:
				continue
			if field.fieldtype == "Select" and value not in field.choices:
				raise sta.ValidationError(f"{key} must be one of {field.choices}, got '{value}'")
			if field.non_negative and field.fieldtype in ("Int", "Float") and value < 0:
				raise sta.ValidationError(f"{key} must be >= 0, got {value}")
		self.validate()
		self.normalize()
		return self

	def validate(self):
		pass

	def normalize(self):
		pass
