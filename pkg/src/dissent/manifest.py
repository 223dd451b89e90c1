"""Run manifests: the single config file a run is reproducible from.

Every output artifact of a run carries its run id; the manifest snapshot
itself is immutable once written.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    created: str
    config: dict = field(default_factory=dict)

    @classmethod
    def new(cls, config: dict, run_id: str | None = None) -> "RunManifest":
        return cls(
            run_id=run_id or uuid.uuid4().hex[:12],
            created=datetime.now(timezone.utc).isoformat(),
            config=dict(config),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        try:
            raw = json.loads(Path(path).read_text())
            return cls(run_id=raw["run_id"], created=raw["created"], config=raw["config"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestError(f"unreadable manifest {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.exists():
            existing = RunManifest.load(path)
            if existing != self:
                raise ManifestError(f"manifest {path} already exists and differs")
            return
        path.write_text(
            json.dumps(
                {"run_id": self.run_id, "created": self.created, "config": self.config},
                indent=2,
                sort_keys=True,
            )
        )
