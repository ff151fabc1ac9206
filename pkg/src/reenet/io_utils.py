"""Artifact IO: atomic writes, manifest hashing, comment-header CSVs.

Every emitted artifact starts with a ``# manifest: <hash>`` comment line
(CSV) or carries a ``manifest`` key (JSON), where the hash digests the run
configuration and the input files a stage consumed. Writes go to a temp
file in the target directory followed by an atomic rename, so an
interrupted stage never leaves a partial artifact at its final path.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import pandas as pd

from reenet.errors import MissingInputError


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_hash(config_dict: dict, input_paths: list) -> str:
    """Deterministic digest of the configuration and input-file digests."""
    payload = {
        "config": config_dict,
        "inputs": {str(Path(p).name): file_digest(p) for p in sorted(map(str, input_paths))},
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_artifact(df: pd.DataFrame, path, manifest: str) -> None:
    body = df.to_csv(index=False, float_format="%.12g")
    atomic_write_text(path, f"# manifest: {manifest}\n{body}")


def write_json_artifact(payload: dict, path, manifest: str) -> None:
    document = {"manifest": manifest}
    document.update(payload)
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_csv_artifact(path, dtypes: dict | None = None) -> pd.DataFrame:
    if not Path(path).exists():
        raise MissingInputError(Path(path).name)
    return pd.read_csv(path, dtype=dtypes or {}, comment="#")


def read_json_artifact(path) -> dict:
    if not Path(path).exists():
        raise MissingInputError(Path(path).name)
    with open(path) as fh:
        return json.load(fh)


def require_inputs(out_dir, names: list[str]) -> None:
    for name in names:
        if not (Path(out_dir) / name).exists():
            raise MissingInputError(name)
