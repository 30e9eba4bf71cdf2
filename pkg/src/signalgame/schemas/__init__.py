"""Versioned JSON Schemas for the package's file formats."""

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import ValidationError

NAMES = ("game-spec", "inventory", "fixture", "case", "proposition")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(name)
    text = resources.files(__package__).joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_document(doc, name: str) -> None:
    """Raise ValidationError listing every schema violation in ``doc``."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ValidationError(f"{name} document invalid: " + "; ".join(msgs), msgs)
