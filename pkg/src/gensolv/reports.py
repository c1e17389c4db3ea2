"""Report documents: canonical JSON emission and the versioned schema.

Reports are deterministic: identical scenario and seed produce
byte-identical files (sorted keys, shortest round-trip float formatting,
no timestamps).  The schema carries a version; changing any field set
requires bumping it, which the golden-file test enforces.
"""

from __future__ import annotations

import json

import numpy as np

SCHEMA_VERSION = "1"


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and report values to plain
    JSON types; complex numbers become [re, im] pairs."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.complexfloating, complex)):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj)!r}")


def envelope(task, name, passed, seed, details):
    return {
        "schema_version": SCHEMA_VERSION,
        "task": task,
        "name": name,
        "passed": bool(passed),
        "seed": int(seed),
        "details": to_jsonable(details),
    }


def dumps(report):
    """Canonical JSON: sorted keys, fixed separators, shortest floats."""
    return json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n"


def moderateness_details(rep):
    return {
        "verdict": rep.verdict,
        "fitted_exponent": rep.fitted_exponent,
        "fit_residual": rep.fit_residual,
        "strictly_nonzero": rep.strictly_nonzero,
        "lower_exponent": rep.lower_exponent,
    }


_MODERATENESS = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "verdict",
        "fitted_exponent",
        "fit_residual",
        "strictly_nonzero",
        "lower_exponent",
    ],
    "properties": {
        "verdict": {"enum": ["Negligible", "Moderate", "SlowScale", "NotModerate"]},
        "fitted_exponent": {"type": ["number", "string"]},
        "fit_residual": {"type": ["number", "string"]},
        "strictly_nonzero": {"type": "boolean"},
        "lower_exponent": {"type": ["number", "string"]},
    },
}

_NUMBER = {"type": ["number", "string"]}
_NUM_ARRAY = {"type": "array", "items": _NUMBER}


def _details_schema(properties, required=None):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": sorted(required if required is not None else properties),
        "properties": properties,
    }


_TASK_DETAILS = {
    "classify": _details_schema(
        {
            "nets": {
                "type": "object",
                "additionalProperties": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["classification", "valuation", "ultra_norm"],
                    "properties": {
                        "classification": _MODERATENESS,
                        "valuation": _NUMBER,
                        "ultra_norm": _NUMBER,
                    },
                },
            },
        }
    ),
    "compare": _details_schema(
        {
            "q": {"type": "string"},
            "p": {"type": "string"},
            "verdict": {"type": "boolean"},
            "indeterminate": {"type": "boolean"},
            "diverging": {"type": "boolean"},
            "radius_slope": _NUMBER,
            "lambda": _NUM_ARRAY,
            "lambda_class": _MODERATENESS,
            "witnesses": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["xi", "eps_index", "ratio"],
                    "properties": {
                        "xi": _NUM_ARRAY,
                        "eps_index": {"type": "integer"},
                        "ratio": _NUMBER,
                    },
                },
            },
        }
    ),
    "ellipticity": _details_schema(
        {
            "symbol": {"type": "string"},
            "verdict": {"type": "boolean"},
            "c": _NUMBER,
            "a": _NUMBER,
            "gradient": {"type": "boolean"},
            "inf_net": _NUM_ARRAY,
            "principal_type_verdict": {"type": "boolean"},
        }
    ),
    "fundsol": _details_schema(
        {
            "symbol": {"type": "string"},
            "theta": _NUM_ARRAY,
            "residuals": _NUM_ARRAY,
            "min_symbol": _NUM_ARRAY,
            "e_norms": _NUM_ARRAY,
            "energy_class": _MODERATENESS,
            "uniform_weight_constants": _NUM_ARRAY,
            "truncated_weight_constants": _NUM_ARRAY,
        }
    ),
    "solve-bp": _details_schema(
        {
            "delta": _NUMBER,
            "eps1_index": {"type": "integer"},
            "eps1": _NUMBER,
            "contraction_factor": _NUM_ARRAY,
            "iterations": {"type": "integer"},
            "residuals": _NUM_ARRAY,
            "convergence_ratios": _NUM_ARRAY,
            "accepted": {"type": "array", "items": {"type": "boolean"}},
            "hypotheses": {
                "type": "object",
                "additionalProperties": False,
                "required": ["h1", "h2", "h3", "mode", "mode_ok", "verdict"],
                "properties": {
                    "h1": {"type": "boolean"},
                    "h2": {"type": "boolean"},
                    "h3": {"type": "array", "items": {"type": "boolean"}},
                    "mode": {"type": "string"},
                    "mode_ok": {"type": "boolean"},
                    "verdict": {"type": "boolean"},
                },
            },
            "solution_csv": {"type": ["string", "null"]},
        }
    ),
    "parametrix": _details_schema(
        {
            "profile": {
                "type": "object",
                "additionalProperties": False,
                "required": ["a", "a_prime", "m_prime", "R", "c", "route", "R_capped"],
                "properties": {
                    "a": _NUMBER,
                    "a_prime": _NUMBER,
                    "m_prime": _NUMBER,
                    "R": _NUMBER,
                    "c": _NUMBER,
                    "route": {"type": "string"},
                    "R_capped": {"type": "boolean"},
                },
            },
            "term_radii": _NUM_ARRAY,
            "term_decay": _NUM_ARRAY,
            "term_exponents": _NUM_ARRAY,
            "telescoping": {"type": "object", "additionalProperties": _NUMBER},
            "remainder_exponents": {"type": "object", "additionalProperties": _NUMBER},
            "remainder_bounded": {"type": "boolean"},
            "kernel_sup": _NUM_ARRAY,
            "solve": {
                "type": ["object", "null"],
                "additionalProperties": False,
                "required": ["delta", "eps1_index", "residuals", "operator_norms"],
                "properties": {
                    "delta": _NUMBER,
                    "eps1_index": {"type": "integer"},
                    "residuals": _NUM_ARRAY,
                    "operator_norms": _NUM_ARRAY,
                },
            },
        }
    ),
    "sobolev-check": _details_schema(
        {
            "s": _NUMBER,
            "delta": _NUMBER,
            "verdict": {"type": "boolean"},
            "certified_on_battery": {"type": "boolean"},
            "small_support_ok": {"type": "boolean"},
            "battery_size": {"type": "integer"},
            "lambda": _NUM_ARRAY,
            "lambda_class": _MODERATENESS,
        }
    ),
    "solve-weak": _details_schema(
        {
            "s": _NUMBER,
            "delta": _NUMBER,
            "dim_V": {"type": "integer"},
            "weak_residual": _NUM_ARRAY,
            "strong_residual": _NUM_ARRAY,
            "condition_numbers": _NUM_ARRAY,
            "solution_class": _MODERATENESS,
            "bound_ok": {"type": "boolean"},
            "solution_csv": {"type": ["string", "null"]},
        }
    ),
    "error": _details_schema(
        {
            "error": {"type": "string"},
            "message": {"type": "string"},
            "expected": {"type": "boolean"},
        }
    ),
}


def report_schema():
    """Machine-readable schema of every report document (versioned)."""
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "gensolv report",
        "version": SCHEMA_VERSION,
        "type": "object",
        "additionalProperties": False,
        "required": ["schema_version", "task", "name", "passed", "seed", "details"],
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "task": {"enum": sorted(_TASK_DETAILS)},
            "name": {"type": "string"},
            "passed": {"type": "boolean"},
            "seed": {"type": "integer"},
            "details": {"anyOf": [_TASK_DETAILS[t] for t in sorted(_TASK_DETAILS)]},
        },
    }


def validate_report(report, strict=True):
    """Validate against the schema; strict mode also pins the task-detail
    pairing (unknown fields are rejected either way by the schema)."""
    import jsonschema

    jsonschema.validate(report, report_schema())
    if strict:
        detail_schema = _TASK_DETAILS[report["task"]]
        jsonschema.validate(report["details"], detail_schema)
