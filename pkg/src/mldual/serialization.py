"""JSON and CSV encoding of matrices, critical points and solution sets.

Complex numbers are written as ``[re, im]`` pairs. Python writes floats with
the shortest decimal string that reads back to the same double (at most 17
significant digits), so files round-trip bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .critsys import CriticalPoint
from .models import ModelSpec, SpecError
from .numkit import InputError

FORMAT_VERSION = 1


def encode_complex(z) -> list[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def decode_complex(v) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(float(Fraction(v)))
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"bad number {v!r}") from exc
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(decode_complex(v[0]).real), float(decode_complex(v[1]).real))
    raise InputError(f"cannot read {v!r} as a complex number")


def encode_matrix(M) -> dict:
    M = np.asarray(M, dtype=complex)
    rows, cols = M.shape
    return {"rows": rows, "cols": cols, "entries": [encode_complex(z) for z in M.ravel()]}


def decode_matrix(obj) -> np.ndarray:
    """Matrix from ``{rows, cols, entries}`` or a plain nested list of rows.

    Entries may be ``[re, im]`` pairs, real numbers or fraction strings such
    as ``"2/41"``.
    """
    if isinstance(obj, dict):
        try:
            rows, cols, entries = int(obj["rows"]), int(obj["cols"]), obj["entries"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError("matrix needs rows, cols and entries") from exc
        if len(entries) != rows * cols:
            raise InputError(f"matrix has {len(entries)} entries, expected {rows * cols}")
        M = np.array([decode_complex(v) for v in entries], dtype=complex).reshape(rows, cols)
        scale = obj.get("scale")
        return M * decode_complex(scale) if scale is not None else M
    if isinstance(obj, list) and obj and all(isinstance(row, list) for row in obj):
        width = len(obj[0])
        if any(len(row) != width for row in obj):
            raise InputError("ragged matrix rows")
        return np.array([[decode_complex(v) for v in row] for row in obj], dtype=complex)
    raise InputError("matrix must be an object {rows, cols, entries} or a list of rows")


def encode_spec(spec: ModelSpec) -> dict:
    return spec.as_dict()


def decode_spec(obj) -> ModelSpec:
    try:
        return ModelSpec(str(obj["kind"]), int(obj["m"]), int(obj.get("n", obj["m"])), int(obj["r"]))
    except (KeyError, TypeError, ValueError, SpecError) as exc:
        raise InputError(f"bad model description: {exc}") from exc


def encode_point(point: CriticalPoint) -> dict:
    return {
        "P": encode_matrix(point.P),
        "lambda": encode_complex(point.lam),
        "residual": float(point.residual),
        "rank": int(point.num_rank),
        "loglik": encode_complex(point.loglik),
    }


def decode_point(spec: ModelSpec, obj) -> CriticalPoint:
    try:
        return CriticalPoint(spec, decode_matrix(obj["P"]), decode_complex(obj.get("lambda", 0.0)),
                             float(obj.get("residual", float("nan"))), int(obj.get("rank", -1)),
                             decode_complex(obj.get("loglik", [float("nan"), 0.0])), None)
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad point record: {exc}") from exc


def solution_document(spec: ModelSpec, U, points, certificate: dict | None = None,
                      meta: dict | None = None, **extra) -> dict:
    doc = {
        "model": encode_spec(spec),
        "U": encode_matrix(U),
        "points": [encode_point(p) for p in points],
        "certificate": certificate or {},
    }
    doc.update(extra)
    doc["meta"] = {"version": __version__, "format": FORMAT_VERSION, **(meta or {})}
    return doc


def certificate_dict(solset) -> dict:
    cert = solset.trace_certificate
    return {
        "loops": solset.loops_run,
        "quiet_loops": solset.loops_since_new,
        "trace_residual": None if cert is None else float(cert.collinearity_residual),
        "pass": bool(cert is not None and cert.passed),
    }


def read_solution(path) -> tuple[ModelSpec, np.ndarray, list[CriticalPoint], dict]:
    doc = read_json(path)
    try:
        spec = decode_spec(doc["model"])
        U = decode_matrix(doc["U"])
        points = [decode_point(spec, p) for p in doc.get("points", [])]
    except KeyError as exc:
        raise InputError(f"solution file lacks {exc}") from exc
    if U.shape != spec.shape:
        raise InputError(f"U has shape {U.shape}, model needs {spec.shape}")
    for p in points:
        if p.P.shape != spec.shape:
            raise InputError(f"point of shape {p.P.shape}, model needs {spec.shape}")
    return spec, U, points, doc


def read_data(path) -> np.ndarray:
    """Data matrix from a JSON file: a matrix object, a list of rows, or ``{"U": ...}``."""
    doc = read_json(path)
    if isinstance(doc, dict) and "U" in doc:
        doc = doc["U"]
    return decode_matrix(doc)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def dumps(doc) -> str:
    return json.dumps(doc, allow_nan=True)


def write_output(text: str, path=None) -> None:
    if path is None or str(path) == "-":
        print(text)
        return
    Path(path).write_text(text + ("" if text.endswith("\n") else "\n"))


def points_csv(spec: ModelSpec, points) -> str:
    """One row per point: scalars followed by the entries of P as re/im columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    m, n = spec.shape
    header = ["index", "residual", "rank", "lambda_re", "lambda_im", "loglik_re", "loglik_im"]
    header += [f"p{i + 1}{j + 1}_{part}" for i in range(m) for j in range(n) for part in ("re", "im")]
    w.writerow(header)
    for k, p in enumerate(points):
        row = [k, repr(float(p.residual)), p.num_rank, *map(repr, encode_complex(p.lam)),
               *map(repr, encode_complex(p.loglik))]
        row += [repr(v) for z in np.asarray(p.P).ravel() for v in encode_complex(z)]
        w.writerow(row)
    return buf.getvalue()
