"""
Versioned JSON documents shared by scenario, trajectory, model, and report files.
"""
import hashlib
import json
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

from volume_inference.errors import ScenarioParseError, ScenarioVersionError

M = TypeVar("M", bound=BaseModel)


def write_document(path: str | Path, payload: dict[str, Any]) -> None:
    """Write a JSON document. Key order is kept so identical payloads give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr-based float formatting keeps full precision
    path.write_text(json.dumps(payload, separators=(",", ":"), allow_nan=False))


def read_document(path: str | Path, version: int) -> dict[str, Any]:
    """Read a JSON document and check its schema version.

    Args:
        path: File to read.
        version: The only schema version this build understands.

    Returns:
        The decoded document.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioParseError(f"Cannot read {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: expected a JSON object at the top level")
    if "version" not in data:
        raise ScenarioParseError(f"{path}: field 'version' is missing")
    if data["version"] != version:
        raise ScenarioVersionError(found=data["version"], expected=version)
    return data


def parse_model(model: type[M], data: Any, where: str) -> M:
    """Validate part of a document, reporting the failing field path."""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ScenarioParseError(f"{where}: field '{field}': {first['msg']}") from e


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
