from __future__ import annotations

import configparser
import json
import os
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

# =========================
# Package-relative paths
# =========================

# Package root: .../site-packages/lite_nvist
PACKAGE_ROOT = Path(__file__).resolve().parent
CONFIGS_DIR = PACKAGE_ROOT / "configs"

MANIFEST_NAME = "manifest.json"
IMAGES_DIRNAME = "images"
METRICS_NAME = "metrics.csv"
RESOLVED_CONFIG_NAME = "config.ini"


def view_path(root: Path, scene_id: str, view_idx: int) -> Path:
    return root / IMAGES_DIRNAME / scene_id / f"{view_idx}.ppm"


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / f"ckpt_{step:07d}.nvst"


# =========================
# Errors
# =========================

class NvistError(Exception):
    """Base error; the CLI maps `exit_code` to the process exit status."""

    exit_code = 1


class UsageError(NvistError, ValueError):
    exit_code = 2


class DatasetIOError(NvistError, OSError):
    exit_code = 3


class ConfigError(NvistError, ValueError):
    exit_code = 4


class DimensionError(ConfigError):
    """Shape disagreement between operands or between a config and its inputs."""


class ContractError(NvistError, ValueError):
    pass


class ValidationError(NvistError, ValueError):
    pass


class NormalizationError(NvistError, ValueError):
    pass


class MetricError(NvistError, ValueError):
    pass


class EvaluationError(NvistError, RuntimeError):
    pass


class CheckpointError(NvistError, RuntimeError):
    exit_code = 4


class CorruptCheckpointError(CheckpointError):
    exit_code = 3


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


# =========================
# JSON helpers
# =========================

def read_json(path: Path) -> Any:
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise DatasetIOError(f"File not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DatasetIOError(f"Malformed JSON in {path}: {e}") from e


def write_json(path: Path, obj: Any) -> None:
    # sorted keys + fixed indent so identical content gives identical bytes
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


# =========================
# Config files
# =========================

def resolve_config_path(name_or_path: str) -> Path:
    """
    name_or_path is either a preset name in lite_nvist/configs ("toy", "full.ini")
    or a path to an .ini file.
    """
    p = Path(name_or_path)
    if p.suffix == ".ini" and p.exists():
        return p
    preset = CONFIGS_DIR / (p.name if p.suffix == ".ini" else f"{p.name}.ini")
    if preset.exists():
        return preset
    choices = sorted(c.stem for c in CONFIGS_DIR.glob("*.ini"))
    raise ConfigError(f"Unknown config '{name_or_path}'. Choose a file or one of: {choices}")


def read_ini(path: Path) -> Dict[str, Dict[str, str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DatasetIOError(f"Config file not found: {path}") from e
    return parse_ini(text, str(path))


def parse_ini(text: str, source: str = "<string>") -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Malformed config {source}: {e}") from e
    return {s: dict(parser.items(s)) for s in parser.sections()}


def format_ini(sections: Mapping[str, Mapping[str, Any]]) -> str:
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            lines.append(f"{k} = {format_value(v)}")
        lines.append("")
    return "\n".join(lines)


def write_ini(path: Path, sections: Mapping[str, Mapping[str, Any]]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_ini(sections), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, current: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [x.strip() for x in raw.split(",") if x.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(x) for x in parts)
            return tuple(float(x) for x in parts)
    except ValueError as e:
        raise ConfigError(f"Bad value for '{key}': {raw!r}") from e
    return raw


def apply_overrides(obj: Any, values: Mapping[str, Any], section: str) -> Any:
    """
    Return a copy of dataclass `obj` with `values` applied. String values are
    coerced to the type of the current field value; unknown keys are errors.
    """
    if not is_dataclass(obj):
        raise TypeError(f"{type(obj).__name__} is not a dataclass")
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"Unknown key '{key}' in section [{section}]. Known: {sorted(known)}")
        current = getattr(obj, key)
        updates[key] = _coerce(raw, current, key) if isinstance(raw, str) else raw
    return type(obj)(**{**{f.name: getattr(obj, f.name) for f in fields(obj)}, **updates})


def dataclass_items(obj: Any) -> Dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


# =========================
# Lightweight logger
# =========================

def log_info(msg: str) -> None:
    print(f"[INFO] {msg}", flush=True)


def log_warn(msg: str) -> None:
    print(f"[WARN] {msg}", flush=True)


def log_err(msg: str) -> None:
    print(f"[ERROR] {msg}", flush=True)


def log_debug(msg: str) -> None:
    if os.getenv("NVIST_DEBUG"):
        print(f"[DEBUG] {msg}", flush=True)


# =========================
# Small utilities
# =========================

def configure_threads(threads: Optional[int]) -> int:
    """
    Pin BLAS thread pools. Must run before numpy is first imported to have an effect,
    which is why the runner imports compute modules lazily.
    """
    if threads is None:
        env = os.getenv("NVIST_THREADS")
        threads = int(env) if env else 0
    if threads and threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return threads or 0


def chunks(items: Iterable[Any], size: int) -> Iterable[list]:
    cur = []
    for it in items:
        cur.append(it)
        if len(cur) == size:
            yield cur
            cur = []
    if cur:
        yield cur

