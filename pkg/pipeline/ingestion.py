# pipeline/ingestion.py

"""
Dataset discovery for batch runs.
---------------------------------
Walks an input folder and returns every stack dataset in it, i.e. every
directory holding a manifest.json. A path pointing straight at a manifest is
returned as the only dataset. Results are sorted so batch output order does not
depend on the filesystem.
"""

import os
from typing import List

MANIFEST_NAME = "manifest.json"


def find_datasets(input_path: str, logger=None) -> List[str]:
    """
    Args:
        input_path (str): A manifest file or a directory to search below.
        logger (optional): Logger instance for logging events.

    Returns:
        Sorted list of manifest paths.
    """
    if os.path.isfile(input_path):
        return [input_path]
    if not os.path.isdir(input_path):
        if logger:
            logger.error(f"Input path not found: {input_path}")
        raise FileNotFoundError(f"Input path not found: {input_path}")

    manifests: List[str] = []
    for root, dirs, files in os.walk(input_path):
        dirs.sort()
        if MANIFEST_NAME in files:
            manifests.append(os.path.join(root, MANIFEST_NAME))

    manifests.sort()
    if logger:
        logger.info(f"Discovery complete. Found {len(manifests)} dataset(s) under {input_path}.")
    return manifests


def subject_name(manifest_path: str, root: str) -> str:
    """Dataset directory relative to the search root; its own name for a single manifest."""
    if os.path.isfile(root):
        return os.path.basename(os.path.dirname(os.path.abspath(manifest_path))) or "."
    rel = os.path.relpath(os.path.dirname(manifest_path), root)
    return rel.replace(os.sep, "/")
