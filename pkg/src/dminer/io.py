"""File formats: tensor dumps, detection lists, and flat config files.

A tensor dump is a single JSON object::

    {"dims": [H, W, C], "dtype": "f64", "layout": "yxc",
     "data_b64": "<base64 of row-major little-endian float64>"}

A writer may instead reference a raw sidecar file via "data_file" (path
relative to the JSON); the loader accepts either. Detections are a JSON list
of {image_id, cx, cy, w, h, category_id, score}. Config files are flat
``key = value`` lines with ``#`` comments.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BBox
from .errors import DMinerError, DumpFormatError, MalformedAnnotationsError
from .evaluation import Detection

DUMP_DTYPE = "f64"
DUMP_LAYOUT = "yxc"


def save_tensor(path: str | Path, arr: np.ndarray):
    """Write a (H, W, C) float64 array as a self-contained dump."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if a.ndim != 3:
        raise ValueError(f"dumps hold 3-D (y, x, channel) arrays, got shape {a.shape}")
    payload = base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")
    header = {
        "dims": list(a.shape),
        "dtype": DUMP_DTYPE,
        "layout": DUMP_LAYOUT,
        "data_b64": payload,
    }
    with open(path, "w") as fh:
        json.dump(header, fh)
        fh.write("\n")


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a dump written by save_tensor (or one using a data_file sidecar)."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DumpFormatError(f"cannot read {path}: {exc}") from exc
    if not isinstance(header, dict):
        raise DumpFormatError(f"{path}: dump must be a JSON object")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or any(not isinstance(d, int) or d < 0 for d in dims)
    ):
        raise DumpFormatError(f"{path}: dims must be three non-negative integers")
    if header.get("dtype") != DUMP_DTYPE:
        raise DumpFormatError(f"{path}: dtype must be {DUMP_DTYPE!r}")
    if header.get("layout") != DUMP_LAYOUT:
        raise DumpFormatError(f"{path}: layout must be {DUMP_LAYOUT!r}")
    if "data_b64" in header:
        try:
            raw = base64.b64decode(header["data_b64"], validate=True)
        except Exception as exc:
            raise DumpFormatError(f"{path}: invalid base64 payload: {exc}") from exc
    elif "data_file" in header:
        sidecar = path.parent / header["data_file"]
        try:
            raw = sidecar.read_bytes()
        except OSError as exc:
            raise DumpFormatError(f"{path}: cannot read sidecar {sidecar}: {exc}") from exc
    else:
        raise DumpFormatError(f"{path}: one of data_b64 or data_file is required")
    expected = dims[0] * dims[1] * dims[2] * 8
    if len(raw) != expected:
        raise DumpFormatError(
            f"{path}: payload holds {len(raw)} bytes, dims require {expected}"
        )
    arr = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise DumpFormatError(f"{path}: payload contains non-finite values")
    return arr


def save_detections(path: str | Path, detections: Sequence[Detection]):
    rows = [
        {
            "image_id": d.image_id,
            "cx": d.bbox.cx,
            "cy": d.bbox.cy,
            "w": d.bbox.w,
            "h": d.bbox.h,
            "category_id": d.category,
            "score": d.score,
        }
        for d in detections
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def load_detections(path: str | Path, box_format: str = "cxcywh") -> list[Detection]:
    """Read a detection list; box_format works as in load_dataset."""
    if box_format not in ("cxcywh", "xywh"):
        raise ValueError(f"unknown box_format {box_format!r}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedAnnotationsError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedAnnotationsError(f"{path}: top level must be a list")
    dets: list[Detection] = []
    for i, row in enumerate(raw):
        ctx = f"{path}: [{i}]"
        if not isinstance(row, dict):
            raise MalformedAnnotationsError(f"{ctx} must be an object")
        keys = ("cx", "cy", "w", "h") if box_format == "cxcywh" else ("x", "y", "w", "h")
        try:
            vals = {k: float(row[k]) for k in keys}
            image_id = int(row["image_id"])
            category = int(row["category_id"])
            score = float(row["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedAnnotationsError(f"{ctx}: {exc}") from exc
        if box_format == "xywh":
            vals = {
                "cx": vals["x"] + vals["w"] / 2.0,
                "cy": vals["y"] + vals["h"] / 2.0,
                "w": vals["w"],
                "h": vals["h"],
            }
        try:
            dets.append(
                Detection(
                    image_id=image_id,
                    bbox=BBox(**vals),
                    category=category,
                    score=score,
                )
            )
        except (ValueError, DMinerError) as exc:
            raise MalformedAnnotationsError(f"{ctx}: {exc}") from exc
    return dets


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            key = key.strip()
            value = value.strip().strip("\"'")
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def coerce_config_value(value: str):
    """Interpret a config string as bool, int, float, or leave it a string."""
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value
