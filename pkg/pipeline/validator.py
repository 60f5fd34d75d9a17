# pipeline/validator.py

"""
Validator for Stack Manifests
-----------------------------
Checks a parsed manifest.json before any voxel data is read:
1.  The schema version is one this reader understands.
2.  Geometry fields (dims, spacing_mm) and encodings (dtype, byte_order) are well formed.
3.  Phases are listed with strictly increasing t and a mask file each.
4.  Every referenced raw file exists and has the byte length the geometry implies.

Returns the cleaned manifest and a report in the pipeline's usual
{status, warnings, errors} shape; each error carries a stable code.
"""

import os
from copy import deepcopy
from typing import Any, Dict, List, Optional, Tuple

SCHEMA_VERSION = "1"
BYTE_ORDER = "little"
# Bytes per voxel of every supported encoding.
DTYPE_SIZES = {"u8": 1, "f32": 4}
MASK_DTYPES = ("u8", "f32")
INTENSITY_DTYPES = ("f32",)
KNOWN_KEYS = ("schema_version", "dims", "spacing_mm", "dtype", "byte_order", "intensity_dtype", "phases")
TYPICAL_PHASE_RANGE = (11, 13)


def _error(report: Dict[str, Any], code: str, message: str) -> None:
    report["errors"].append({"code": code, "message": message})
    report["status"] = "error"


def _positive_numbers(values: Any, count: int, integral: bool) -> Optional[List]:
    if not isinstance(values, list) or len(values) != count:
        return None
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            return None
        if integral and int(v) != v:
            return None
        out.append(int(v) if integral else float(v))
    return out


def _check_file(report: Dict[str, Any], base_dir: str, rel_path: str, expected: int) -> None:
    path = os.path.join(base_dir, rel_path)
    if not os.path.isfile(path):
        _error(report, "missing_file", f"Referenced file not found: {rel_path}")
        return
    actual = os.path.getsize(path)
    if actual != expected:
        _error(report, "size_mismatch", f"{rel_path} holds {actual} bytes, expected {expected}")


def validate_manifest(data: Any, base_dir: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """
    Validates a manifest dict whose relative paths resolve against `base_dir`.

    Returns:
        A tuple containing:
        - The cleaned manifest (numeric fields normalized, key order fixed).
        - A validation report dictionary.
    """
    report: Dict[str, Any] = {"status": "success", "warnings": [], "errors": []}
    if not isinstance(data, dict):
        _error(report, "invalid_manifest", "Manifest must be a JSON object")
        return {}, report
    data = deepcopy(data)

    version = data.get("schema_version")
    if str(version) != SCHEMA_VERSION:
        _error(report, "unknown_schema_version", f"Unsupported schema_version {version!r}")
        return data, report

    for key in data:
        if key not in KNOWN_KEYS:
            report["warnings"].append(f"Ignoring unknown manifest key '{key}'")

    dims = _positive_numbers(data.get("dims"), 3, integral=True)
    spacing = _positive_numbers(data.get("spacing_mm"), 3, integral=False)
    if dims is None:
        _error(report, "invalid_manifest", f"dims must be three positive integers, got {data.get('dims')!r}")
    if spacing is None:
        _error(report, "invalid_manifest", f"spacing_mm must be three positive numbers, got {data.get('spacing_mm')!r}")
    dtype = data.get("dtype")
    if dtype not in MASK_DTYPES:
        _error(report, "invalid_manifest", f"dtype must be one of {MASK_DTYPES}, got {dtype!r}")
    if data.get("byte_order") != BYTE_ORDER:
        _error(report, "invalid_manifest", f"byte_order must be '{BYTE_ORDER}', got {data.get('byte_order')!r}")
    intensity_dtype = data.get("intensity_dtype", "f32")
    if intensity_dtype not in INTENSITY_DTYPES:
        _error(report, "invalid_manifest", f"intensity_dtype must be one of {INTENSITY_DTYPES}, got {intensity_dtype!r}")

    phases = data.get("phases")
    if not isinstance(phases, list) or len(phases) < 2:
        _error(report, "invalid_manifest", "phases must list at least 2 entries")
        return data, report

    cleaned_phases = []
    previous_t = None
    for i, entry in enumerate(phases):
        if not isinstance(entry, dict) or not isinstance(entry.get("mask"), str):
            _error(report, "invalid_manifest", f"Phase entry {i} needs a 'mask' path")
            continue
        t = entry.get("t")
        if isinstance(t, bool) or not isinstance(t, int):
            _error(report, "invalid_manifest", f"Phase entry {i} has a non-integer t {t!r}")
            continue
        if previous_t is not None and t <= previous_t:
            _error(report, "invalid_manifest", f"Phase t values must be strictly increasing ({previous_t} then {t})")
        previous_t = t
        cleaned = {"t": t, "mask": entry["mask"]}
        if entry.get("intensity") is not None:
            if not isinstance(entry["intensity"], str):
                _error(report, "invalid_manifest", f"Phase entry {i} has a non-string intensity path")
                continue
            cleaned["intensity"] = entry["intensity"]
        cleaned_phases.append(cleaned)

    if report["status"] == "error":
        return data, report

    n_voxels = dims[0] * dims[1] * dims[2]
    for entry in cleaned_phases:
        _check_file(report, base_dir, entry["mask"], n_voxels * DTYPE_SIZES[dtype])
        if "intensity" in entry:
            _check_file(report, base_dir, entry["intensity"], n_voxels * DTYPE_SIZES[intensity_dtype])

    with_intensity = sum("intensity" in e for e in cleaned_phases)
    if 0 < with_intensity < len(cleaned_phases):
        report["warnings"].append(f"Only {with_intensity} of {len(cleaned_phases)} phases carry intensities")
    if not TYPICAL_PHASE_RANGE[0] <= len(cleaned_phases) <= TYPICAL_PHASE_RANGE[1]:
        report["warnings"].append(f"{len(cleaned_phases)} phases; acquired cycles have "
                                  f"{TYPICAL_PHASE_RANGE[0]}-{TYPICAL_PHASE_RANGE[1]}")

    cleaned_data = {
        "schema_version": SCHEMA_VERSION,
        "dims": dims,
        "spacing_mm": spacing,
        "dtype": dtype,
        "byte_order": BYTE_ORDER,
    }
    if with_intensity:
        cleaned_data["intensity_dtype"] = intensity_dtype
    cleaned_data["phases"] = cleaned_phases

    if report["warnings"] and report["status"] == "success":
        report["status"] = "success_with_warnings"
    return cleaned_data, report
