"""Run-report serialization.

Reports are JSON with sorted keys; the output samples go to an .npy
sidecar referenced by name and SHA-256.  Everything except the
``timing`` block is a deterministic function of (config, seed), so two
runs of the same experiment produce byte-identical reports once that
block is dropped; ``canonical_bytes`` implements exactly that
comparison form.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def samples_filename(report_path) -> Path:
    p = Path(report_path)
    return p.with_name(p.stem + ".samples.npy")


def attach_samples(report: dict, samples: np.ndarray, report_path) -> Path:
    path = samples_filename(report_path)
    with open(path, "wb") as fh:
        np.save(fh, samples)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    report["samples_file"] = path.name
    report["samples_sha256"] = digest
    return path


def finalize(report: dict, wall_time_s: float) -> dict:
    report["schema_version"] = SCHEMA_VERSION
    report["timing"] = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall_time_s,
    }
    return report


def to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=True)


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(report) + "\n", encoding="utf-8")
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


_VOLATILE_KEYS = {"timing", "samples_file"}


def canonical_bytes(report: dict) -> bytes:
    """Report bytes in the determinism-comparison form: the volatile
    timing block, path-derived names, and in-memory payloads are
    dropped (sample content is still pinned via samples_sha256)."""
    trimmed = {k: v for k, v in report.items()
               if k not in _VOLATILE_KEYS and not k.startswith("_")}
    if "config" in trimmed:
        cfg = dict(trimmed["config"])
        # execution plumbing: where the report went and how many workers
        # produced it carry no experiment identity
        cfg.pop("out", None)
        cfg.pop("jobs", None)
        trimmed["config"] = cfg
    return json.dumps(trimmed, sort_keys=True, indent=2,
                      allow_nan=True).encode()
