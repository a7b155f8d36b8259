"""Key = value configuration files and the run manifest written beside outputs."""
import json
import os
import sys
import tempfile
from datetime import datetime, timezone

from .errors import InvalidConfigError, ParseError

# key -> parser; names match the long CLI flags with dashes turned into underscores
KEYS = {
    "backend": str,
    "embedder_model": str,
    "stylizer_model": str,
    "seed": int,
    "backend_seed": int,
    "steps": int,
    "lr": float,
    "batch_size": int,
    "lambda_dir": float,
    "lambda_patch": float,
    "lambda_dis": float,
    "n_patches": int,
    "patch_size": int,
    "threshold": float,
    "distortion": float,
    "source_text": str,
    "mode": str,
    "ridge": float,
}


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ParseError(f"unknown config key {key!r}", line=lineno)
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {value!r}", line=lineno) from exc
    return values


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc


def merge(defaults, file_values, overrides):
    """Later sources win; ``None`` in ``overrides`` means "not given"."""
    out = dict(defaults)
    out.update(file_values)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def write_atomic(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def manifest_path(output):
    return f"{output}.manifest.json"


def write_manifest(output, command, argv, settings, fingerprints, outputs, started):
    """Record how an artifact was made. Timestamps make manifests differ between runs."""
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": settings,
        "seed": settings.get("seed"),
        "backends": fingerprints,
        "python": sys.version.split()[0],
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [os.path.abspath(p) for p in outputs],
    }
    path = manifest_path(output)
    write_atomic(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path
