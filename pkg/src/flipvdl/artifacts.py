"""Content hashes and provenance for pipeline artifacts.

JSON artifacts carry a ``provenance`` block with the hashes of their
inputs and a digest of their own content; directory artifacts carry a
``manifest.json`` listing every file with its SHA-256.  Readers verify
both before use.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class IntegrityError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dump_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def stamp(obj: dict, inputs: dict | None = None, kind: str = "") -> dict:
    """Return a copy of ``obj`` with a provenance block and content digest."""
    out = {k: v for k, v in obj.items() if k != "provenance"}
    out["provenance"] = {"kind": kind, "inputs": dict(sorted((inputs or {}).items()))}
    out["provenance"]["sha256"] = hashlib.sha256(_canonical(out)).hexdigest()
    return out


def verify_stamp(obj: dict, source="artifact") -> dict:
    prov = obj.get("provenance")
    if not prov or "sha256" not in prov:
        raise IntegrityError(f"{source}: no provenance digest")
    body = {k: v for k, v in obj.items() if k != "provenance"}
    body["provenance"] = {k: v for k, v in prov.items() if k != "sha256"}
    if hashlib.sha256(_canonical(body)).hexdigest() != prov["sha256"]:
        raise IntegrityError(f"{source}: content does not match its recorded hash")
    return obj


def write_stamped(obj: dict, path, inputs: dict | None = None, kind: str = "") -> dict:
    out = stamp(obj, inputs, kind)
    dump_json(out, path)
    return out


def read_stamped(path, kind: str | None = None) -> dict:
    path = Path(path)
    obj = verify_stamp(json.loads(path.read_text(encoding="utf-8")), str(path))
    if kind and obj["provenance"].get("kind") != kind:
        raise IntegrityError(f"{path}: expected a {kind!r} artifact, found {obj['provenance'].get('kind')!r}")
    return obj


def input_hashes(**paths) -> dict:
    """``{name: sha256}`` for the given input files (None entries skipped)."""
    return {k: sha256_file(p) for k, p in paths.items() if p is not None}


def write_dir_manifest(directory, meta: dict | None = None, name: str = "manifest.json") -> dict:
    """Hash every file under ``directory`` (except the manifest) into a manifest."""
    directory = Path(directory)
    files = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name != name:
            files[p.relative_to(directory).as_posix()] = sha256_file(p)
    manifest = dict(meta or {})
    manifest["files"] = files
    dump_json(manifest, directory / name)
    return manifest


def read_dir_manifest(directory, name: str = "manifest.json") -> dict:
    directory = Path(directory)
    path = directory / name
    if not path.exists():
        raise IntegrityError(f"{directory}: missing {name}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    for rel, digest in manifest.get("files", {}).items():
        f = directory / rel
        if not f.exists():
            raise IntegrityError(f"{directory}: listed file {rel} is missing")
        if sha256_file(f) != digest:
            raise IntegrityError(f"{directory}: {rel} does not match its recorded hash")
    return manifest
