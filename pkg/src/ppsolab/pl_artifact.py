# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module defines how results are written to and read from disk.

Every artifact carries the schema version and the resolved configuration.
JSON artifacts are written with sorted keys. CSV artifacts start with two
comment lines followed by the table. Floats keep their shortest round-trip
representation, so identical runs give identical files.
"""

# Python std modules:
from typing import Any
import json
import logging
import math
import pathlib

# External modules:
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION: int = 1


def _plain(value: Any) -> Any:
    # JSON has no infinities or NaN, they become null.
    match value:
        case bool() | None | str():
            return value
        case float() | np.floating():
            return float(value) if math.isfinite(value) else None
        case int() | np.integer():
            return int(value)
        case dict():
            return {str(k): _plain(v) for k, v in value.items()}
        case list() | tuple():
            return [_plain(v) for v in value]
        case np.ndarray():
            return [_plain(v) for v in value.tolist()]
        case _:
            return value


def encode_artifact(body: dict[str, Any], config: dict[str, Any]) -> dict[str, Any]:
    """
    Wraps an artifact body with the schema version and the configuration.

    :param body: The results.
    :param config: The resolved configuration, see PLConfiguration.to_dict().
    :return: A JSON ready document.
    :rtype: dict[str, Any]
    """

    return {"schema_version": SCHEMA_VERSION, "config": _plain(config), "body": _plain(body)}


def encode_json(body: dict[str, Any], config: dict[str, Any]) -> str:
    return json.dumps(encode_artifact(body, config), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json_artifact(path: pathlib.Path, body: dict[str, Any], config: dict[str, Any]) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(encode_json(body, config))
    logger.info(f"Wrote {path}")

    return path


def write_csv_artifact(path: pathlib.Path, frame: pd.DataFrame, config: dict[str, Any]) -> pathlib.Path:
    """
    Writes a table after the schema and configuration comment lines.

    :param path: Target file.
    :param frame: The table, its column order is kept.
    :param config: The resolved configuration.
    :return: The path written.
    :rtype: pathlib.Path
    """

    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", newline="") as f:
        f.write(f"# schema_version: {SCHEMA_VERSION}\n")
        f.write(f"# config: {json.dumps(_plain(config), sort_keys=True)}\n")
        frame.to_csv(f, index=False, lineterminator="\n")

    logger.info(f"Wrote {path}")

    return path


def read_json_artifact(path: pathlib.Path) -> dict[str, Any]:
    with open(path, "r") as f:
        data = json.load(f)

    assert data.get("schema_version") == SCHEMA_VERSION, \
        f"Unsupported schema version in {path}: {data.get('schema_version')}"

    return data


def read_csv_artifact(path: pathlib.Path) -> tuple[dict[str, Any], pd.DataFrame]:
    """
    Reads a CSV artifact back.

    :param path: The file to read.
    :return: The embedded configuration and the table.
    :rtype: tuple[dict[str, Any], pd.DataFrame]
    """

    with open(path, "r") as f:
        version_line = f.readline().strip()
        config_line = f.readline().strip()

    assert version_line == f"# schema_version: {SCHEMA_VERSION}", f"Unsupported schema in {path}: {version_line}"
    assert config_line.startswith("# config: "), f"Missing configuration line in {path}"

    config = json.loads(config_line[len("# config: "):])
    frame = pd.read_csv(path, skiprows=2)

    return config, frame
