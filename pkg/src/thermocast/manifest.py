"""Run manifests: what a command read, resolved, and wrote.

Every successful command drops a manifest.json next to its outputs. It
holds the fully resolved configuration, content hashes of the inputs,
and hashes of the artifacts, so a re-run can be checked for bit-identical
results. Files whose content is inherently unreproducible (wall-clock
timing tables) are listed with a null hash and excluded from that
contract.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ValidationError

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    inputs: dict          # label -> {"path": str, "sha256": hex}
    artifacts: dict       # out-dir-relative path -> sha256 hex, or None
    defaulted: tuple = ()  # "section.key" scenario entries filled from defaults
    version: int = MANIFEST_VERSION

    def reproducible_artifacts(self):
        return {k: v for k, v in self.artifacts.items() if v is not None}


def hash_bytes(data):
    return hashlib.sha256(data).hexdigest()


def hash_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_tree(root, pattern="*.csv"):
    """One digest over (name, content hash) of every matching file."""
    root = Path(root)
    digest = hashlib.sha256()
    for p in sorted(root.glob(pattern)):
        digest.update(p.name.encode())
        digest.update(bytes.fromhex(hash_file(p)))
    return digest.hexdigest()


def collect_artifacts(out_dir, unhashed=(), exclude=()):
    """Hash every file under out_dir except the manifest itself.

    Paths in `unhashed` (out-dir relative, posix separators) are listed
    with a null hash; paths in `exclude` are left out entirely.
    """
    out_dir = Path(out_dir)
    skip = {MANIFEST_NAME, *exclude}
    artifacts = {}
    for p in sorted(out_dir.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(out_dir).as_posix()
        if rel in skip:
            continue
        artifacts[rel] = None if rel in set(unhashed) else hash_file(p)
    return artifacts


def write_manifest(manifest, out_dir, name=MANIFEST_NAME):
    path = Path(out_dir) / name
    payload = asdict(manifest)
    payload["defaulted"] = list(manifest.defaulted)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        payload = json.loads(path.read_text())
    except OSError as err:
        raise ValidationError("manifest", f"cannot read {path}: {err}")
    except json.JSONDecodeError as err:
        raise ValidationError("manifest", f"{path} is not valid JSON: {err}")
    if not isinstance(payload, dict):
        raise ValidationError("manifest", f"{path}: expected a JSON object")
    version = payload.get("version")
    if version != MANIFEST_VERSION:
        raise ValidationError("manifest", f"unsupported version {version!r}")
    missing = {"command", "config", "inputs", "artifacts"} - payload.keys()
    if missing:
        raise ValidationError("manifest", f"missing fields {sorted(missing)}")
    return RunManifest(
        command=payload["command"], config=payload["config"],
        inputs=payload["inputs"], artifacts=payload["artifacts"],
        defaulted=tuple(payload.get("defaulted", ())), version=version)
