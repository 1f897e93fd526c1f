"""Deterministic result writers.

Two runs with the same config must produce byte-identical files, so JSON is written with
sorted keys and floats rounded to a fixed number of decimals, and CSV floats are formatted
with 9 significant digits. Every CSV starts with ``#`` comment lines holding the schema
version and the run metadata as one line of canonical JSON; ``pandas.read_csv(path,
comment="#")`` skips them.
"""

import json
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

RESULT_SCHEMA_VERSION = 1
FLOAT_DECIMALS = 9
CSV_FLOAT_FORMAT = "%.9g"
METADATA_PREFIX = "# metadata: "


def _normalize(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(key): _normalize(item) for key, item in value.items()}
    if isinstance(value, list | tuple | np.ndarray):
        return [_normalize(item) for item in value]
    if isinstance(value, bool | np.bool_):
        return bool(value)
    if isinstance(value, int | np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        if not math.isfinite(value):
            raise ValueError(f"Cannot serialize non-finite value {value}")
        # + 0.0 folds -0.0 into 0.0
        return round(float(value), FLOAT_DECIMALS) + 0.0
    return value


def canonical_json(data: Any, indent: int | None = 2) -> str:
    """Serialize with sorted keys and rounded floats; ends with a newline when indented."""
    text = json.dumps(_normalize(data), sort_keys=True, indent=indent, allow_nan=False)
    return text + "\n" if indent is not None else text


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(canonical_json(data))
    return path


def write_csv(path: Path, frame: pd.DataFrame, metadata: Mapping[str, Any]) -> Path:
    """Write ``frame`` without index after the schema/metadata comment preamble."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"# schema_version: {RESULT_SCHEMA_VERSION}\n")
        handle.write(f"{METADATA_PREFIX}{canonical_json(metadata, indent=None)}\n")
        frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_metadata(path: Path) -> dict[str, Any]:
    """Metadata embedded in the comment preamble of a result CSV."""
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            if line.startswith(METADATA_PREFIX):
                return json.loads(line[len(METADATA_PREFIX) :])
    raise ValueError(f"No metadata preamble in {path}")
