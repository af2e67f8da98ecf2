"""Manifest format for curated samples and externally extracted features.

A split is a JSON manifest next to a raw little-endian float32 blob:

    {
      "obs_dim": 16, "text_dim": 8,
      "num_tasks": 5, "num_actions": 12,
      "samples": [
        {"task": 0, "actions": [3, 7, 1], "feature_file": "train.f32", "offset": 0},
        ...
      ]
    }

``offset`` counts float32 elements into the blob; each record is the
concatenation o_s | o_g | n_es | n_eg, i.e. 2 * (obs_dim + text_dim)
floats.  This doubles as the ingestion path for real features produced by
an external extractor: write the blob, describe it in the manifest, load.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .corpus import Sample


class ManifestError(Exception):
    """Manifest or feature file is malformed."""


def _record_floats(obs_dim: int, text_dim: int) -> int:
    return 2 * (obs_dim + text_dim)


def write_manifest(
    directory: str,
    name: str,
    samples: list[Sample],
    obs_dim: int,
    text_dim: int,
    num_tasks: int,
    num_actions: int,
) -> str:
    """Write ``<name>.json`` and ``<name>.f32``; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    feature_file = f"{name}.f32"
    record = _record_floats(obs_dim, text_dim)
    blob = np.empty(record * len(samples), dtype="<f4")
    entries = []
    for i, s in enumerate(samples):
        vec = np.concatenate([s.o_s, s.o_g, s.n_es, s.n_eg])
        if vec.shape[0] != record:
            raise ManifestError(
                f"sample {i} has {vec.shape[0]} feature floats, expected {record}"
            )
        blob[i * record : (i + 1) * record] = vec.astype("<f4")
        entries.append(
            {
                "task": int(s.task),
                "actions": [int(a) for a in s.actions],
                "feature_file": feature_file,
                "offset": i * record,
            }
        )
    manifest = {
        "obs_dim": obs_dim,
        "text_dim": text_dim,
        "num_tasks": num_tasks,
        "num_actions": num_actions,
        "samples": entries,
    }
    _atomic_write(os.path.join(directory, feature_file), blob.tobytes())
    manifest_path = os.path.join(directory, f"{name}.json")
    _atomic_write(
        manifest_path,
        json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8") + b"\n",
    )
    return manifest_path


def read_manifest(manifest_path: str) -> tuple[list[Sample], dict]:
    """Load samples; returns (samples, meta) with dims and label counts."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ManifestError(f"{manifest_path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: malformed JSON ({exc})") from exc
    try:
        obs_dim = int(manifest["obs_dim"])
        text_dim = int(manifest["text_dim"])
        entries = manifest["samples"]
        meta = {
            "obs_dim": obs_dim,
            "text_dim": text_dim,
            "num_tasks": int(manifest["num_tasks"]),
            "num_actions": int(manifest["num_actions"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{manifest_path}: missing or invalid field ({exc})") from exc
    if obs_dim < 1 or text_dim < 1:
        raise ManifestError(f"{manifest_path}: dims must be positive")

    record = _record_floats(obs_dim, text_dim)
    base = os.path.dirname(os.path.abspath(manifest_path))
    blobs: dict[str, np.ndarray] = {}
    samples: list[Sample] = []
    for i, entry in enumerate(entries):
        try:
            task = int(entry["task"])
            actions = tuple(int(a) for a in entry["actions"])
            feature_file = entry["feature_file"]
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{manifest_path}: sample {i} is malformed ({exc})") from exc
        if feature_file not in blobs:
            feature_path = os.path.join(base, feature_file)
            try:
                blobs[feature_file] = np.fromfile(feature_path, dtype="<f4")
            except OSError as exc:
                raise ManifestError(f"{feature_path}: cannot read ({exc})") from exc
        blob = blobs[feature_file]
        if offset < 0 or offset + record > blob.shape[0]:
            raise ManifestError(
                f"{feature_file}: sample {i} needs floats [{offset}, {offset + record}) "
                f"but the file holds {blob.shape[0]}"
            )
        vec = blob[offset : offset + record].astype(np.float64)
        o_s = vec[:obs_dim]
        o_g = vec[obs_dim : 2 * obs_dim]
        n_es = vec[2 * obs_dim : 2 * obs_dim + text_dim]
        n_eg = vec[2 * obs_dim + text_dim :]
        samples.append(
            Sample(task=task, actions=actions, o_s=o_s, o_g=o_g, n_es=n_es, n_eg=n_eg)
        )
    return samples, meta


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
