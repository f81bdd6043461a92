import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest


def run_qlower(*args: str) -> subprocess.CompletedProcess:
    """Invoke the lowering toolkit strictly through its CLI."""
    env = dict(os.environ, QLOWER_LOG="quiet")
    return subprocess.run([sys.executable, "-m", "qlower.cli", *args],
                          capture_output=True, text=True, env=env)


def write_batches(path: Path, batches: list[np.ndarray]) -> Path:
    """Write input blobs in the documented batch-directory format."""
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, b in enumerate(batches):
        arr = np.ascontiguousarray(np.asarray(b, dtype=np.float32))
        rel = f"batch_{i:04d}.bin"
        (path / rel).write_bytes(arr.tobytes())
        entries.append({"name": f"batch_{i:04d}", "shape": list(arr.shape),
                        "dtype": "float32", "bits": 32, "signed": True,
                        "file": rel, "byte_len": arr.nbytes})
    (path / "batches.json").write_text(
        json.dumps({"tensors": entries}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8")
    return path


def read_batches(path: Path) -> list[np.ndarray]:
    entries = json.loads((path / "batches.json").read_text("utf-8"))["tensors"]
    out = []
    for e in entries:
        raw = (path / e["file"]).read_bytes()
        out.append(np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy())
    return out


@pytest.fixture(scope="session")
def fixture_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("fixture-cache")
