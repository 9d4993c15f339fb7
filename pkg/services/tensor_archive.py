"""
Архив тензоров для чекпоинтов: каталог из трёх файлов.

    header.hdr   : метаданные (key = value, та же грамматика, что у заголовков кубов)
    manifest.hdr : `<tensor name> = <dtype> <shape> @<byte offset>`
    tensors.raw  : сырые little-endian тензоры подряд
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from services.hsi_data import CubeFormatError, format_header_text, parse_header_text

logger = logging.getLogger(__name__)

HEADER_FILE = "header.hdr"
MANIFEST_FILE = "manifest.hdr"
PAYLOAD_FILE = "tensors.raw"

_DTYPES: dict[torch.dtype, tuple[str, str]] = {
    torch.float32: ("f32le", "<f4"),
    torch.float64: ("f64le", "<f8"),
    torch.int64: ("i64le", "<i8"),
    torch.uint8: ("u8", "u1"),
}
_BY_TAG = {tag: (dt, np_dt) for dt, (tag, np_dt) in _DTYPES.items()}


class CheckpointError(RuntimeError):
    """Архив чекпоинта повреждён или не подходит к архитектуре"""
    pass


def _shape_text(shape: tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split("x"))


def save_archive(path: str | Path, tensors: Mapping[str, torch.Tensor], header: Mapping[str, Any]) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    manifest: dict[str, str] = {}
    offset = 0
    chunks: list[bytes] = []
    for name, t in tensors.items():
        if name != name.lower() or "=" in name:
            raise CheckpointError(f"tensor name {name!r} must be lowercase and contain no '='")
        t = t.detach().cpu()
        if t.dtype == torch.bool:
            t = t.to(torch.uint8)
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {t.dtype} for {name!r}")
        tag, np_dt = _DTYPES[t.dtype]
        raw = t.contiguous().numpy().astype(np_dt, copy=False).tobytes(order="C")
        manifest[name] = f"{tag} {_shape_text(tuple(t.shape))} @{offset}"
        chunks.append(raw)
        offset += len(raw)

    (root / PAYLOAD_FILE).write_bytes(b"".join(chunks))
    (root / MANIFEST_FILE).write_text(format_header_text({"total_bytes": offset, **manifest}), encoding="utf-8")
    (root / HEADER_FILE).write_text(format_header_text(dict(header)), encoding="utf-8")


def load_archive(path: str | Path) -> tuple[dict[str, str], dict[str, torch.Tensor]]:
    root = Path(path)
    for name in (HEADER_FILE, MANIFEST_FILE, PAYLOAD_FILE):
        if not (root / name).exists():
            raise CheckpointError(f"archive {root} misses {name}")

    try:
        header = parse_header_text((root / HEADER_FILE).read_text(encoding="utf-8"))
        manifest = parse_header_text((root / MANIFEST_FILE).read_text(encoding="utf-8"))
    except CubeFormatError as e:
        raise CheckpointError(f"corrupt archive {root}: {e}") from e

    payload = (root / PAYLOAD_FILE).read_bytes()
    try:
        total = int(manifest.pop("total_bytes"))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"corrupt manifest in {root}: no total_bytes") from e
    if total != len(payload):
        raise CheckpointError(f"payload of {root} holds {len(payload)} bytes, manifest says {total}")

    tensors: dict[str, torch.Tensor] = {}
    for name, entry in manifest.items():
        try:
            tag, shape_text, off_text = entry.split()
            dt, np_dt = _BY_TAG[tag]
            shape = _parse_shape(shape_text)
            offset = int(off_text.lstrip("@"))
        except (ValueError, KeyError) as e:
            raise CheckpointError(f"corrupt manifest entry {name!r} = {entry!r}") from e

        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(np_dt).itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(f"tensor {name!r} runs past the end of {PAYLOAD_FILE}")
        arr = np.frombuffer(payload, dtype=np_dt, count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy()).to(dt)

    return header, tensors


# ---------- pydantic configs <-> header ----------

def config_to_header(config: BaseModel) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in config.model_dump().items():
        if isinstance(value, bool):
            out[key] = "true" if value else "false"
        elif isinstance(value, float):
            out[key] = repr(value)
        elif isinstance(value, (tuple, list)):
            out[key] = ", ".join(str(v) for v in value)
        else:
            out[key] = str(value)
    return out


def config_from_header(cls: type[BaseModel], header: Mapping[str, str]) -> BaseModel:
    payload: dict[str, Any] = {}
    for key, field in cls.model_fields.items():
        if key not in header:
            continue
        value = header[key]
        if isinstance(field.default, tuple):
            payload[key] = tuple(p.strip() for p in value.split(",") if p.strip())
        else:
            payload[key] = value
    try:
        return cls.model_validate(payload)
    except ValidationError as e:
        raise CheckpointError(f"cannot rebuild {cls.__name__} from archive header: {e}") from e
