"""Volume and affine files.

A volume is stored as a small JSON sidecar (``name.json``) next to a raw
little-endian payload (``name.raw``).  An affine is a single JSON document
holding the row-major 4x4 matrix and, optionally, the decoupled parameters
it was composed from.
"""
import json
import os
from dataclasses import dataclass

import numpy as np

from .affine import GeometricParams, compose, recenter
from .volume import LabelVolume, Volume3D, check_affine

VOLUME_FORMAT = "c2fvit-volume/1"
AFFINE_FORMAT = "c2fvit-affine/1"
CONVENTION = "normalized-align-corners;axes=xyz;out(x)=moving(A@x)"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u16": np.dtype("<u2")}
KINDS = ("image", "labels")


class VolumeFileError(ValueError):
    """Base class for unreadable volume files."""


class MalformedSidecarError(VolumeFileError):
    pass


class UnknownDtypeError(VolumeFileError):
    pass


class PayloadLengthError(VolumeFileError):
    pass


class KindMismatchError(VolumeFileError):
    pass


class AffineFileError(ValueError):
    pass


def _paths(path):
    stem = str(path)
    for ext in (".json", ".raw"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    return stem + ".json", stem + ".raw"


def write_volume(path, vol, dtype=None):
    """Write ``vol`` (Volume3D or LabelVolume); returns the sidecar path."""
    meta_path, raw_path = _paths(path)
    if isinstance(vol, LabelVolume):
        kind, data, dtype = "labels", vol.labels, dtype or "u16"
    elif isinstance(vol, Volume3D):
        kind, data, dtype = "image", vol.data, dtype or "f64"
    else:
        raise TypeError(f"cannot write {type(vol).__name__}")
    if dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    out = data.astype(DTYPES[dtype])
    if not np.array_equal(out.astype(data.dtype), data):
        raise ValueError(f"values are not representable as {dtype}")
    meta = {
        "format": VOLUME_FORMAT,
        "kind": kind,
        "dims": list(data.shape),
        "spacing": [float(s) for s in vol.spacing],
        "dtype": dtype,
        "byte_order": "little",
        "payload": os.path.basename(raw_path),
    }
    if kind == "labels":
        meta["num_labels"] = int(vol.num_labels)
    with open(raw_path, "wb") as fh:
        fh.write(np.ascontiguousarray(out).tobytes())
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return meta_path


def _read_meta(meta_path):
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedSidecarError(f"{meta_path}: not valid JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise MalformedSidecarError(f"{meta_path}: expected a JSON object")
    missing = [k for k in ("kind", "dims", "spacing", "dtype", "byte_order") if k not in meta]
    if missing:
        raise MalformedSidecarError(f"{meta_path}: missing fields {missing}")
    dims, spacing = meta["dims"], meta["spacing"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(n, int) and n > 0 for n in dims)):
        raise MalformedSidecarError(f"{meta_path}: dims must be three positive integers, got {dims!r}")
    if not (isinstance(spacing, list) and len(spacing) == 3):
        raise MalformedSidecarError(f"{meta_path}: spacing must have three entries")
    if meta["kind"] not in KINDS:
        raise MalformedSidecarError(f"{meta_path}: kind must be one of {KINDS}, got {meta['kind']!r}")
    if meta["byte_order"] != "little":
        raise MalformedSidecarError(f"{meta_path}: only little-endian payloads are supported")
    if meta["dtype"] not in DTYPES:
        raise UnknownDtypeError(f"{meta_path}: unknown dtype {meta['dtype']!r}")
    return meta


def read_volume(path, kind=None):
    """Load a volume; pass ``kind`` ('image' or 'labels') to insist on a type."""
    meta_path, raw_path = _paths(path)
    meta = _read_meta(meta_path)
    if kind is not None and meta["kind"] != kind:
        raise KindMismatchError(f"{meta_path}: expected kind {kind!r}, file holds {meta['kind']!r}")
    dt = DTYPES[meta["dtype"]]
    payload_path = os.path.join(os.path.dirname(meta_path), meta.get("payload", os.path.basename(raw_path)))
    with open(payload_path, "rb") as fh:
        raw = fh.read()
    expected = int(np.prod(meta["dims"])) * dt.itemsize
    if len(raw) != expected:
        raise PayloadLengthError(f"{payload_path}: payload has {len(raw)} bytes, dims and dtype need {expected}")
    data = np.frombuffer(raw, dtype=dt).reshape(meta["dims"]).astype(dt.newbyteorder("="))
    spacing = tuple(float(s) for s in meta["spacing"])
    if meta["kind"] == "labels":
        return LabelVolume(data.astype(np.int64), meta.get("num_labels"), spacing)
    return Volume3D(data.astype(np.float64) if meta["dtype"] == "u16" else data, spacing)


@dataclass
class AffineRecord:
    matrix: np.ndarray
    params: GeometricParams = None
    pivot: np.ndarray = None
    convention: str = CONVENTION
    provenance: str = ""


def write_affine(path, matrix, params=None, pivot=None, provenance=""):
    """Write a 4x4 matrix, optionally with the parameters and pivot it came from."""
    A = check_affine(matrix)
    doc = {
        "format": AFFINE_FORMAT,
        "convention": CONVENTION,
        "matrix": [float(x) for x in A.reshape(-1)],
        "provenance": provenance,
    }
    if params is not None:
        pivot = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=float)
        _check_recompose(A, params, pivot, path)
        doc["params"] = {k: [float(x) for x in getattr(params, k)] for k in ("t", "r", "s", "h")}
        doc["pivot"] = [float(x) for x in pivot]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def _check_recompose(A, params, pivot, path):
    err = np.abs(recenter(compose(params), pivot) - A).max()
    if err > 1e-9:
        raise AffineFileError(f"{path}: parameters re-compose to a matrix {err:.3g} away from the stored one")


def read_affine(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AffineFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "matrix" not in doc:
        raise AffineFileError(f"{path}: missing 'matrix'")
    values = doc["matrix"]
    if not (isinstance(values, list) and len(values) == 16):
        raise AffineFileError(f"{path}: matrix must hold 16 numbers")
    A = np.array(values, dtype=np.float64).reshape(4, 4)
    if not np.array_equal(A[3], [0.0, 0.0, 0.0, 1.0]):
        raise AffineFileError(f"{path}: last row must be (0, 0, 0, 1)")
    rec = AffineRecord(A, convention=doc.get("convention", CONVENTION), provenance=doc.get("provenance", ""))
    if doc.get("params") is not None:
        p = doc["params"]
        try:
            rec.params = GeometricParams(*(np.array(p[k], dtype=np.float64) for k in ("t", "r", "s", "h")))
        except (KeyError, TypeError, ValueError) as exc:
            raise AffineFileError(f"{path}: bad params block ({exc})") from exc
        rec.pivot = np.array(doc.get("pivot", [0.0, 0.0, 0.0]), dtype=np.float64)
        _check_recompose(A, rec.params, rec.pivot, path)
    return rec
