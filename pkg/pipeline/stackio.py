# pipeline/stackio.py

"""
Stack and Report I/O
--------------------
Reads and writes stack datasets (a manifest.json plus raw little-endian voxel
files, z-major) and the pipeline's JSON/CSV reports. This is the only module
that touches the filesystem.

Dataset layout:
    manifest.json   schema_version, dims [nz, ny, nx], spacing_mm [dx, dy, dz],
                    dtype ("u8" masks or "f32" probability maps), byte_order,
                    optional intensity_dtype ("f32"), phases [{t, mask, intensity}]
    mask_%03d.raw   one file per phase
    int_%03d.raw    optional intensity stack per phase
"""

import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from evaluation.agreement import PairedMeasurements
from pipeline.errors import (
    STACKIO_ERRORS, DomainError, InvalidManifestError, MissingFileError, NonBinaryMaskError,
    StackIOError, UsageError,
)
from pipeline.mesh import TriangleMesh, to_stl
from pipeline.phantom import GroundTruth
from pipeline.validator import BYTE_ORDER, SCHEMA_VERSION, validate_manifest
from pipeline.volgrid import BinaryMask, IntensityVolume, Phase, ProbabilityMap, Spacing, StackSeries, threshold

logger = logging.getLogger("ventriq.stackio")

MANIFEST_NAME = "manifest.json"
MASK_FILE = "mask_%03d.raw"
INTENSITY_FILE = "int_%03d.raw"
NUMPY_DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4")}
PAIR_COLUMNS = ("subject", "reference", "estimate")


# --- Datasets ---

def _load_manifest(manifest_path: str) -> Tuple[Dict[str, Any], str]:
    if not os.path.isfile(manifest_path):
        raise MissingFileError(f"Manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidManifestError(f"Could not parse {manifest_path}: {e}") from e
    except OSError as e:
        raise StackIOError(f"Could not read {manifest_path}: {e}") from e

    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    cleaned, report = validate_manifest(data, base_dir)
    for warning in report["warnings"]:
        logger.warning(f"{manifest_path}: {warning}")
    if report["status"] == "error":
        first = report["errors"][0]
        error_cls = STACKIO_ERRORS.get(first["code"], StackIOError)
        raise error_cls(f"{manifest_path}: {first['message']}")
    return cleaned, base_dir


def _read_raw(path: str, dtype: str, dims: Sequence[int]) -> np.ndarray:
    try:
        data = np.fromfile(path, dtype=NUMPY_DTYPES[dtype])
    except OSError as e:
        raise StackIOError(f"Could not read {path}: {e}") from e
    return data.reshape(tuple(dims))


def _spacing_of(manifest: Dict[str, Any]) -> Spacing:
    dx, dy, dz = manifest["spacing_mm"]
    return Spacing(dx=dx, dy=dy, dz=dz)


def read_probability_maps(manifest_path: str) -> Tuple[ProbabilityMap, ...]:
    """Per-phase foreground probabilities; u8 datasets give their masks as 0/1 maps."""
    manifest, base_dir = _load_manifest(manifest_path)
    spacing = _spacing_of(manifest)
    maps = []
    for entry in manifest["phases"]:
        values = _read_raw(os.path.join(base_dir, entry["mask"]), manifest["dtype"], manifest["dims"])
        values = values.astype(np.float64)
        if values.min() < 0 or values.max() > 1 or not np.all(np.isfinite(values)):
            raise NonBinaryMaskError(f"{entry['mask']}: probabilities must lie in [0, 1]")
        maps.append(ProbabilityMap(values, spacing))
    return tuple(maps)


def read_stack_series(manifest_path: str) -> StackSeries:
    """
    Load a dataset. u8 masks must hold only 0 and 1; f32 probability maps are
    thresholded at 0.5.
    """
    manifest, base_dir = _load_manifest(manifest_path)
    spacing = _spacing_of(manifest)
    dims = manifest["dims"]
    phases = []
    for entry in manifest["phases"]:
        raw = _read_raw(os.path.join(base_dir, entry["mask"]), manifest["dtype"], dims)
        if manifest["dtype"] == "u8":
            if raw.max() > 1:
                raise NonBinaryMaskError(f"{entry['mask']}: mask voxels must be 0 or 1, found {int(raw.max())}")
            mask = BinaryMask(raw, spacing)
        else:
            values = raw.astype(np.float64)
            if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
                raise NonBinaryMaskError(f"{entry['mask']}: probabilities must lie in [0, 1]")
            mask = threshold(ProbabilityMap(values, spacing))
        intensity = None
        if "intensity" in entry:
            values = _read_raw(os.path.join(base_dir, entry["intensity"]), manifest["intensity_dtype"], dims)
            try:
                intensity = IntensityVolume(values.astype(np.float64), spacing)
            except DomainError as e:
                raise InvalidManifestError(f"{entry['intensity']}: {e}") from e
        phases.append(Phase(entry["t"], mask, intensity))
    logger.debug(f"Read {len(phases)} phases from {manifest_path}")
    return StackSeries(tuple(phases))


def _write_bytes(path: str, payload: bytes) -> None:
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise StackIOError(f"Could not write {path}: {e}") from e


def _manifest_text(manifest: Dict[str, Any]) -> str:
    return json.dumps(manifest, indent=2) + "\n"


def write_stack_series(
    series: StackSeries,
    out_dir: str,
    probabilities: Optional[Sequence[ProbabilityMap]] = None,
) -> str:
    """
    Write a dataset and return its manifest path. With `probabilities` the mask
    files hold those f32 maps instead of the series' binary masks.
    """
    if probabilities is not None and len(probabilities) != len(series):
        raise DomainError("One probability map per phase is required")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise StackIOError(f"Could not create {out_dir}: {e}") from e

    spacing = series.spacing
    dtype = "u8" if probabilities is None else "f32"
    entries = []
    for i, phase in enumerate(series.phases):
        mask_name = MASK_FILE % phase.index
        if probabilities is None:
            payload = phase.mask.voxels.astype(NUMPY_DTYPES["u8"]).tobytes()
        else:
            payload = probabilities[i].voxels.astype(NUMPY_DTYPES["f32"]).tobytes()
        _write_bytes(os.path.join(out_dir, mask_name), payload)
        entry = {"t": phase.index, "mask": mask_name}
        if phase.intensity is not None:
            int_name = INTENSITY_FILE % phase.index
            _write_bytes(os.path.join(out_dir, int_name), phase.intensity.voxels.astype(NUMPY_DTYPES["f32"]).tobytes())
            entry["intensity"] = int_name
        entries.append(entry)

    manifest: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "dims": list(series.dims),
        "spacing_mm": [spacing.dx, spacing.dy, spacing.dz],
        "dtype": dtype,
        "byte_order": BYTE_ORDER,
    }
    if series.has_intensities:
        manifest["intensity_dtype"] = "f32"
    manifest["phases"] = entries

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    _write_bytes(manifest_path, _manifest_text(manifest).encode("utf-8"))
    logger.info(f"Wrote {len(series)}-phase dataset to {out_dir}")
    return manifest_path


# --- Reports ---

def _format_value(value: Any) -> Any:
    """Round floats to 6 significant digits; numpy scalars become plain Python values."""
    if isinstance(value, dict):
        return {str(k): _format_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_format_value(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return None
        return float(f"{value:.6g}")
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _as_payload(report: Any) -> Any:
    if hasattr(report, "to_dict"):
        return report.to_dict()
    return report


def _as_rows(report: Any) -> List[Dict[str, Any]]:
    if hasattr(report, "to_rows"):
        return report.to_rows()
    if isinstance(report, dict):
        return [report]
    if hasattr(report, "to_dict"):
        return [report.to_dict()]
    return list(report)


def report_json_text(report: Any) -> str:
    return json.dumps(_format_value(_as_payload(report)), indent=2, ensure_ascii=False) + "\n"


def write_report(report: Any, path: str, fmt: str = "json") -> None:
    """
    JSON: keys in the report's own order, floats as %.6g.
    CSV: header row, UTF-8, "\\n" line endings; list-valued cells are joined with ';'.
    """
    if fmt == "json":
        text = report_json_text(report)
        _write_text(path, text)
    elif fmt == "csv":
        write_rows_csv(_as_rows(report), path)
    else:
        raise UsageError(f"Unknown report format {fmt!r}, expected 'json' or 'csv'")


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    try:
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise StackIOError(f"Could not write {path}: {e}") from e


def _csv_cell(value: Any) -> Any:
    value = _format_value(value)
    if isinstance(value, list):
        return ";".join(str(v) for v in value)
    return "" if value is None else value


def write_rows_csv(rows: Iterable[Dict[str, Any]], path: str, fieldnames: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    if fieldnames is None:
        if not rows:
            raise DomainError(f"Nothing to write to {path}")
        fieldnames = list(rows[0].keys())
    parent = os.path.dirname(path)
    try:
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
            writer.writeheader()
            writer.writerows({k: _csv_cell(row.get(k)) for k in fieldnames} for row in rows)
    except OSError as e:
        raise StackIOError(f"Could not write {path}: {e}") from e


def read_pairs_csv(path: str) -> PairedMeasurements:
    """Read a subject,reference,estimate table."""
    if not os.path.isfile(path):
        raise MissingFileError(f"Pairs file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"subject": str})
    except pd.errors.EmptyDataError as e:
        raise UsageError(f"{path} is empty") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise UsageError(f"Could not parse {path}: {e}") from e

    missing = [c for c in PAIR_COLUMNS if c not in frame.columns]
    if missing:
        raise UsageError(f"{path} lacks column(s) {missing}; expected {','.join(PAIR_COLUMNS)}")
    try:
        reference = pd.to_numeric(frame["reference"], errors="raise").to_numpy(dtype=np.float64)
        estimate = pd.to_numeric(frame["estimate"], errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise UsageError(f"{path}: reference and estimate must be numeric ({e})") from e
    if np.isnan(reference).any() or np.isnan(estimate).any():
        raise UsageError(f"{path}: missing reference or estimate values")
    return PairedMeasurements(reference, estimate, tuple(frame["subject"].fillna("").astype(str)))


# --- Meshes and ground truth ---

def write_mesh_stl(mesh: TriangleMesh, path: str, name: str = "ventriq") -> None:
    _write_text(path, to_stl(mesh, name))


def write_ground_truth(gt: GroundTruth, path: str) -> None:
    write_report(gt, path, "json")


def read_ground_truth(path: str) -> GroundTruth:
    if not os.path.isfile(path):
        raise MissingFileError(f"Ground truth not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return GroundTruth.from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InvalidManifestError(f"Could not parse ground truth {path}: {e}") from e
