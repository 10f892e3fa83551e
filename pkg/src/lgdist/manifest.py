"""Reproducibility manifests.

Every subcommand writes a manifest.json into its output directory carrying
the tool version, the fully resolved config, all seeds, and content digests
of inputs and outputs. Timestamps are deliberately excluded so reruns with
identical inputs produce byte-identical artifacts, manifest included.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(root) -> str:
    """Digest of a directory: file names and contents, order-independent."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\x00")
        h.update(bytes.fromhex(file_digest(path)))
    return h.hexdigest()


def config_digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def write_manifest(out_dir, subcommand: str, config: dict, seeds, inputs: dict, outputs):
    """inputs: name -> path (file or directory); outputs: paths relative to out_dir."""
    from lgdist import __version__

    out_dir = Path(out_dir)
    in_digests = {}
    for name, path in sorted(inputs.items()):
        p = Path(path)
        in_digests[name] = {
            "path": str(p),
            "digest": tree_digest(p) if p.is_dir() else file_digest(p),
        }
    out_digests = {}
    for rel in sorted(str(o) for o in outputs):
        target = out_dir / rel
        out_digests[rel] = tree_digest(target) if target.is_dir() else file_digest(target)
    manifest = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "config": config,
        "config_digest": config_digest(config),
        "seeds": seeds,
        "inputs": in_digests,
        "outputs": out_digests,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
