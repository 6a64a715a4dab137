"""
Versioned persistence of curiosity modules, agents and configurations, and the
schema-headed CSV files written by the flows.

State files are JSON documents. Floats are written with `repr` precision, so
a reloaded module scores a probe sequence bit-identically.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import pandas as pd
from prefect.logging import get_logger

from farcuriosity_lab.agent import PpoAgent
from farcuriosity_lab.blocks import ExperimentConfig
from farcuriosity_lab.constants import CSV_SCHEMA_HEADER, STATE_FORMAT_VERSION
from farcuriosity_lab.curiosity import (
    CountCuriosity,
    ObservationNormalizer,
    RndCuriosity,
    RndModule,
    VisitCounter,
)
from farcuriosity_lab.exceptions import StateFormatError, VersionMismatchError
from farcuriosity_lab.memory import FarCuriosity
from farcuriosity_lab.nnkit import check_version

logger = get_logger("farcuriosity_lab.persistence")

STATE_FORMAT = "farcuriosity-lab-state"
PathLike = Union[str, Path]


def _encode(obj: Any) -> Tuple[str, Dict[str, Any]]:
    if isinstance(obj, FarCuriosity):
        return "far", obj.to_dict()
    if isinstance(obj, RndCuriosity):
        return "rnd", {
            "module": obj.module.to_dict(include_target=True),
            "obs_norm": None if obj.obs_norm is None else obj.obs_norm.to_dict(),
        }
    if isinstance(obj, RndModule):
        return "rnd-module", obj.to_dict(include_target=True)
    if isinstance(obj, CountCuriosity):
        return "count", obj.counter.to_dict()
    if isinstance(obj, VisitCounter):
        return "counter", obj.to_dict()
    if isinstance(obj, PpoAgent):
        return "agent", obj.to_dict()
    if isinstance(obj, ExperimentConfig):
        return "config", obj.config_dict()
    raise TypeError(f"Cannot persist objects of type {type(obj).__name__}.")


def _decode(kind: str, state: Dict[str, Any]) -> Any:
    if kind == "far":
        return FarCuriosity.from_dict(state)
    if kind == "rnd":
        obs_norm = state["obs_norm"]
        if obs_norm is not None:
            obs_norm = ObservationNormalizer.from_dict(obs_norm)
        return RndCuriosity(RndModule.from_dict(state["module"]), obs_norm=obs_norm)
    if kind == "rnd-module":
        return RndModule.from_dict(state)
    if kind == "count":
        return CountCuriosity(VisitCounter.from_dict(state))
    if kind == "counter":
        return VisitCounter.from_dict(state)
    if kind == "agent":
        return PpoAgent.from_dict(state)
    if kind == "config":
        return ExperimentConfig(**state)
    raise StateFormatError(f"Unknown state kind {kind!r}.")


def save_state(
    obj: Any, path: PathLike, metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write `obj` (a curiosity module, counter, agent or configuration) to `path`.

    Args:
        obj: Object to persist.
        path: Destination file; parent directories are created.
        metadata: Extra JSON-serializable fields stored next to the state,
            such as the configuration hash or the step count.

    Returns:
        The path written.
    """
    path = Path(path)
    kind, state = _encode(obj)
    doc = {
        "format": STATE_FORMAT,
        "version": STATE_FORMAT_VERSION,
        "kind": kind,
        "metadata": metadata or {},
        "state": state,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc))
    os.replace(tmp, path)
    logger.debug("Saved %s state to %s", kind, path)
    return path


def read_state_document(path: PathLike) -> Dict[str, Any]:
    """Parse and version-check a state file without decoding it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StateFormatError(
            f"{path} is truncated or not valid JSON: {exc}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("format") != STATE_FORMAT:
        raise StateFormatError(f"{path} is not a farcuriosity-lab state file.")
    check_version(doc, "state file", STATE_FORMAT_VERSION)
    return doc


def load_state(path: PathLike, with_metadata: bool = False):
    """
    Inverse of `save_state`.

    Raises:
        StateFormatError: The file is truncated or malformed.
        VersionMismatchError: The file was written by another format version.
    """
    doc = read_state_document(path)
    try:
        obj = _decode(doc["kind"], doc["state"])
    except (KeyError, TypeError) as exc:
        raise StateFormatError(f"Malformed state in {path}: {exc}") from exc
    if with_metadata:
        return obj, doc.get("metadata", {})
    return obj


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write `frame` below the schema header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(CSV_SCHEMA_HEADER + "\n")
        frame.to_csv(handle, index=False)
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    """Read a CSV written by `write_csv`, checking its schema header."""
    path = Path(path)
    with path.open() as handle:
        header = handle.readline().strip()
        if header != CSV_SCHEMA_HEADER:
            if header.startswith("# farcuriosity-lab"):
                raise VersionMismatchError(
                    "CSV schema", CSV_SCHEMA_HEADER.split()[-1], header.split()[-1]
                )
            raise StateFormatError(f"{path} lacks the farcuriosity-lab header.")
        return pd.read_csv(handle)
