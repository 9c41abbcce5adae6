"""Artifact persistence: atomic writes, content hashing, and the run manifest.

Every pipeline stage writes through these helpers so a crash never leaves a
half-written file and no stage silently clobbers an artifact it does not own.
The manifest records path, content hash and kind for everything a run
produced; re-running a stage with unchanged inputs must reproduce the exact
bytes, so hash mismatches mean "someone else wrote this" and block the write.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ._version import __version__

MANIFEST_NAME = "manifest.json"

# artifact kinds with a binary magic we can verify without a full parse
_MAGICS = {
    "model": b"DRLIRPMF",
    "index": b"DRLIRANN",
    "checkpoint": b"DRLIRCKP",
}


class ArtifactError(RuntimeError):
    """An artifact is missing, corrupt, or owned by a different run."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file plus rename so readers never see a torn file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(mapping: dict, exclude: tuple[str, ...] = ()) -> str:
    """Short stable digest of a flat config; excluded keys do not affect it."""
    lines = [f"{k}={mapping[k]!r}" for k in sorted(mapping) if k not in exclude]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]


def check_magic(path: str | Path, kind: str) -> None:
    """Cheap header check for binary artifact kinds; no-op for text kinds."""
    magic = _MAGICS.get(kind)
    if magic is None:
        return
    with open(path, "rb") as fh:
        head = fh.read(len(magic))
    if head != magic:
        raise ArtifactError(f"{path}: bad header for kind {kind!r} (got {head!r})")


@dataclass
class RunManifest:
    """Ledger of one run directory's artifacts, persisted as manifest.json."""

    root: Path
    seed: int | None = None
    config_hash: str | None = None
    artifacts: dict[str, dict] = field(default_factory=dict)
    version: str = __version__

    @classmethod
    def load_or_create(cls, root: str | Path) -> "RunManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            return cls(root=root)
        raw = json.loads(path.read_text())
        return cls(
            root=root,
            seed=raw.get("seed"),
            config_hash=raw.get("config_hash"),
            artifacts=raw.get("artifacts", {}),
            version=raw.get("version", __version__),
        )

    def save(self) -> None:
        payload = {
            "version": self.version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "artifacts": self.artifacts,
        }
        atomic_write_text(self.root / MANIFEST_NAME, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def _relative(self, path: str | Path) -> str:
        path = Path(path)
        try:
            return str(path.relative_to(self.root))
        except ValueError:
            return str(path)

    def guard_overwrite(self, name: str, path: str | Path, force: bool = False) -> None:
        """Refuse to replace a file this manifest does not own, unless forced.

        A file whose bytes no longer match what we recorded was changed by
        someone (or some run) else; overwriting it would destroy their work.
        """
        path = Path(path)
        if force or not path.exists():
            return
        entry = self.artifacts.get(name)
        if entry is None:
            raise ArtifactError(
                f"{path} exists but is not recorded in this run's manifest; "
                "use --force to overwrite"
            )
        current = sha256_file(path)
        if entry.get("sha256") != current:
            raise ArtifactError(
                f"{path} changed since this run recorded it "
                f"(recorded {entry.get('sha256', '?')[:12]}, found {current[:12]}); "
                "use --force to overwrite"
            )

    def record(self, name: str, path: str | Path, kind: str) -> None:
        path = Path(path)
        check_magic(path, kind)
        self.artifacts[name] = {
            "path": self._relative(path),
            "kind": kind,
            "sha256": sha256_file(path),
            "mtime": os.stat(path).st_mtime,
        }

    def resolve(self, name: str) -> Path:
        entry = self.artifacts.get(name)
        if entry is None:
            raise ArtifactError(f"manifest has no artifact named {name!r}")
        path = Path(entry["path"])
        return path if path.is_absolute() else self.root / path

    def validate(self) -> None:
        """Every recorded artifact exists, hashes clean, and has a sane header."""
        for name, entry in sorted(self.artifacts.items()):
            path = self.resolve(name)
            if not path.exists():
                raise ArtifactError(f"artifact {name!r} missing at {path}")
            actual = sha256_file(path)
            if actual != entry["sha256"]:
                raise ArtifactError(
                    f"artifact {name!r} at {path} does not match its recorded hash"
                )
            check_magic(path, entry.get("kind", ""))
