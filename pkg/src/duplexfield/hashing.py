"""Content hashes used to guard pipeline stages against mixed inputs."""

import hashlib
import json

import numpy as np


def canonical_hash(obj) -> str:
    """Stable short hash of a JSON-serializable description."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_coerce)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not hashable as config: {type(v)}")


def pose_hash(cam) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(cam.R, dtype=np.float64).tobytes())
    h.update(np.asarray(cam.t, dtype=np.float64).tobytes())
    h.update(
        np.array([cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height]).tobytes()
    )
    return h.hexdigest()[:16]
