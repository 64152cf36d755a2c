"""JSON schemas for everything that crosses a process boundary.

Remote inference responses are validated on receipt (violations are
transport errors: the wire broke contract). Output documents like the
simulate bundle are validated on write and on read (violations there are
input errors).
"""

from __future__ import annotations

import jsonschema

from .errors import InputError, TransportError

GENERATE_RESPONSE = {
    "type": "object",
    "properties": {"text": {"type": "string"}},
    "required": ["text"],
}

EMBED_RESPONSE = {
    "type": "object",
    "properties": {
        "vectors": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}},
        },
        "d": {"type": "integer", "minimum": 1},
    },
    "required": ["vectors", "d"],
}

LABELS_RESPONSE = {
    "type": "object",
    "properties": {
        "subclass_names": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 1,
        },
        "scores": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
    "required": ["subclass_names", "scores"],
}

HEALTH_RESPONSE = {
    "type": "object",
    "properties": {
        "version": {"type": "string"},
        "d": {"type": "integer", "minimum": 1},
    },
    "required": ["version", "d"],
}

# Error body the inference service sends with non-2xx statuses; a 422 with
# code "reply_only_violation" is the constraint-rejection signal.
ERROR_RESPONSE = {
    "type": "object",
    "properties": {
        "error": {
            "type": "object",
            "properties": {
                "code": {"type": "string"},
                "message": {"type": "string"},
            },
            "required": ["code", "message"],
        },
    },
    "required": ["error"],
}

_METRIC_STAT = {
    "type": "object",
    "properties": {"mean": {"type": "number"}, "std": {"type": "number", "minimum": 0}},
    "required": ["mean", "std"],
}

METRIC_REPORT = {
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "n_samples": {"type": "integer", "minimum": 1},
        "k_repetitions": {"type": "integer", "minimum": 1},
        "task": {"enum": ["post", "reply"]},
        "language": {"enum": ["en", "de"]},
        "condition": {"type": "string"},
        "distance": {"enum": ["euclidean", "cosine"]},
        "seed": {"type": "integer"},
        "metrics": {
            "type": "object",
            "additionalProperties": _METRIC_STAT,
            "minProperties": 1,
        },
        "missing_subclasses": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "string"}},
        },
    },
    "required": [
        "schema_version", "n_samples", "k_repetitions", "task", "language",
        "condition", "distance", "seed", "metrics",
    ],
}

MECHANICS_RESULT = {
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "config": {"type": "object"},
        "loss": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "observations": {"type": "integer", "minimum": 1},
        "family_size": {"type": "integer", "minimum": 1},
    },
    "required": ["schema_version", "config", "loss"],
}

# The simulate bundle: q never travels without the realism context.
SIMULATION_BUNDLE = {
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "seed": {"type": "integer"},
        "n_ticks": {"type": "integer", "minimum": 1},
        "transcript_path": {"type": "string"},
        "message_count": {"type": "integer", "minimum": 0},
        "q": {
            "type": "object",
            "properties": {
                "value": {"type": "number"},
                "plugin": {"type": "string"},
            },
            "required": ["value", "plugin"],
        },
        "behavior_realism": METRIC_REPORT,
        "mechanics_realism": MECHANICS_RESULT,
    },
    "required": [
        "schema_version", "seed", "n_ticks", "transcript_path",
        "q", "behavior_realism", "mechanics_realism",
    ],
}


def validate_response(data: object, schema: dict, source: str) -> None:
    """Check a remote response against its schema; failure means the
    service broke the wire contract, which is a transport problem."""
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        raise TransportError(f"{source}: response violates schema: {exc.message}") from None


def validate_document(data: object, schema: dict, name: str) -> None:
    """Check a local document (bundle, report) against its schema."""
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        raise InputError(f"{name} violates schema: {exc.message}") from None
