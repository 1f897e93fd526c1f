"""Result file formats."""

from .results import (
    RESULT_SCHEMA_VERSION,
    canonical_json,
    read_csv,
    read_metadata,
    write_csv,
    write_json,
)

__all__ = [
    "RESULT_SCHEMA_VERSION",
    "canonical_json",
    "read_csv",
    "read_metadata",
    "write_csv",
    "write_json",
]
