"""
manifest.cfg: командная строка, сиды, конфиг, артефакты, время и версия.
Пишется только если все перечисленные артефакты существуют.
"""

from __future__ import annotations

import configparser
import shlex
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from config import TOOL_VERSION


@dataclass
class RunManifest:
    command: list[str]
    seeds: dict[str, int] = field(default_factory=dict)
    config_path: str = ""
    artifacts: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    tool_version: str = TOOL_VERSION
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def add(self, *paths: str | Path) -> None:
        for p in paths:
            s = str(p)
            if s not in self.artifacts:
                self.artifacts.append(s)

    def write(self, path: str | Path) -> Path:
        missing = [a for a in self.artifacts if not Path(a).exists()]
        if missing:
            raise FileNotFoundError(f"manifest lists missing artifacts: {missing}")

        parser = configparser.ConfigParser(interpolation=None)
        parser["run"] = {
            "command": shlex.join(self.command),
            "config": self.config_path,
            "started_at": self.started_at,
            "wall_clock_s": f"{time.monotonic() - self._t0:.3f}",
            "tool_version": self.tool_version,
        }
        parser["seeds"] = {k: str(v) for k, v in self.seeds.items()}
        parser["artifacts"] = {f"a{i:03d}": a for i, a in enumerate(self.artifacts)}
        parser["extra"] = {k: str(v) for k, v in self.extra.items()}

        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", encoding="utf-8") as fh:
            parser.write(fh)
        return out


def read_manifest(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"manifest not found: {path}")
    return parser
