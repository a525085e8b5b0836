"""Run manifests: what a command produced and the content hash of each artifact."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from ..utils.helpers import read_json, sha256_file, write_json

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
# Files that legitimately differ between identical runs.
UNHASHED = frozenset({MANIFEST_FILE, "run.log"})


@dataclass
class RunManifest:
    """One per command run, written to ``<out>/manifest.json``."""

    command: str
    config_hash: str
    corpus_id: str
    seed: int
    artifacts: Dict[str, str] = field(default_factory=dict)
    duration_seconds: float = 0.0

    def add_artifacts(self, root: Path, paths: Optional[Iterable[Path]] = None) -> None:
        """Hash ``paths`` (default: every file under ``root``) keyed by root-relative POSIX path."""
        root = Path(root)
        candidates = sorted(paths) if paths is not None else sorted(p for p in root.rglob("*") if p.is_file())
        for path in candidates:
            rel = Path(path).resolve().relative_to(root.resolve()).as_posix()
            if Path(rel).name in UNHASHED or Path(rel).name.startswith("."):
                continue
            self.artifacts[rel] = sha256_file(path)

    def verify(self, root: Path) -> List[str]:
        """Artifacts that are missing or whose hash no longer matches."""
        problems = []
        for rel, digest in sorted(self.artifacts.items()):
            path = Path(root) / rel
            if not path.exists():
                problems.append(f"{rel}: missing")
            elif sha256_file(path) != digest:
                problems.append(f"{rel}: hash mismatch")
        return problems

    def save(self, root: Path) -> Path:
        path = Path(root) / MANIFEST_FILE
        write_json(path, asdict(self))
        logger.info(f"Wrote manifest {path} ({len(self.artifacts)} artifacts)")
        return path

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        data = read_json(path)
        return cls(
            command=data["command"],
            config_hash=data["config_hash"],
            corpus_id=data["corpus_id"],
            seed=int(data["seed"]),
            artifacts=dict(data.get("artifacts", {})),
            duration_seconds=float(data.get("duration_seconds", 0.0)),
        )
