"""JSON loading with schema validation and file/line diagnostics."""

from __future__ import annotations

import json
import re
from pathlib import Path

from pydantic import ValidationError

from .errors import ConfigError


def _line_of(text: str, loc) -> int:
    keys = [k for k in loc if isinstance(k, str)]
    for key in reversed(keys):
        m = re.search(r'"%s"\s*:' % re.escape(key), text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return 1


def load_validated(path, model):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return validate(data, model, path, text)


def validate(data, model, path="<input>", text: str = ""):
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        line = _line_of(text, err["loc"]) if text else 1
        more = f" (+{len(exc.errors()) - 1} more)" if len(exc.errors()) > 1 else ""
        raise ConfigError(f"{path}:{line}: {where}: {err['msg']}{more}") from exc
