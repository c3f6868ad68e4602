"""JSON/JSONL reading and atomic, byte-stable writing."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TypeVar

import numpy as np

from .errors import SchemaError, ValidationError
from .estimation import EMConfig, EMResult, TransitionMatrix, build_structural_mask
from .taxonomy import NUM_STATES, STATE_NAMES

FORMAT_VERSION = "1"

T = TypeVar("T")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any, indent: int | None = None) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats."""
    seps = (",", ": ") if indent else (",", ":")
    return json.dumps(obj, sort_keys=True, indent=indent, separators=seps, default=_default, allow_nan=False)


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def read_records(path: str | os.PathLike, parse: Callable[[dict], T]) -> list[T]:
    """Parse every JSONL line, tagging validation failures with the line number."""
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            out.append(parse(rec))
        except ValidationError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


def read_json(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> int:
    lines = [dumps({**rec, "format_version": FORMAT_VERSION}) for rec in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def write_json(path: str | os.PathLike, obj: dict) -> None:
    atomic_write_text(path, dumps({**obj, "format_version": FORMAT_VERSION}, indent=1) + "\n")


def check_version(rec: dict, where: str) -> None:
    version = rec.get("format_version")
    if version is not None and str(version) != FORMAT_VERSION:
        raise SchemaError(f"{where}: format_version {version!r} is not supported (expected {FORMAT_VERSION!r})")


def em_result_to_json(result: EMResult) -> dict:
    cfg = result.config
    return {
        "states": list(STATE_NAMES[: result.matrix.num_states]) if result.matrix.num_states == NUM_STATES
        else list(range(result.matrix.num_states)),
        "matrix": result.matrix.values,
        "mask": result.matrix.mask.astype(int),
        "soft_counts": result.soft_counts,
        "posterior": result.posterior,
        "config": {
            "max_iter": cfg.max_iter,
            "tol": cfg.tol,
            "dp": cfg.dp,
            "smoothing_alpha": cfg.smoothing_alpha,
        },
        "iterations_run": result.iterations_run,
        "final_delta": result.final_delta,
        "prior_fallback": result.prior_fallback,
    }


def save_em_result(path: str | os.PathLike, result: EMResult) -> None:
    write_json(path, em_result_to_json(result))


def load_em_result(path: str | os.PathLike) -> EMResult:
    doc = read_json(path)
    check_version(doc, str(path))
    try:
        states = doc["states"]
        if len(states) == NUM_STATES and list(states) != list(STATE_NAMES):
            raise SchemaError(f"{path}: state order does not match the fixed 17-state ordering")
        values = np.asarray(doc["matrix"], dtype=np.float64)
        if "mask" in doc:
            mask = np.asarray(doc["mask"], dtype=np.int8)
        else:
            mask = build_structural_mask(values.shape[0])
        cfg = EMConfig(**doc.get("config", {}))
        matrix = TransitionMatrix(values, mask)
        return EMResult(
            matrix=matrix,
            soft_counts=np.asarray(doc.get("soft_counts", np.zeros_like(values)), dtype=np.float64),
            posterior=np.asarray(doc.get("posterior", np.zeros_like(values)), dtype=np.float64),
            iterations_run=int(doc.get("iterations_run", 0)),
            final_delta=float(doc.get("final_delta", 0.0)),
            config=cfg,
            prior_fallback=bool(doc.get("prior_fallback", False)),
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: matrix file missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise SchemaError(f"{path}: malformed matrix file ({exc})") from None


def fingerprint(*paths: str | os.PathLike) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]
