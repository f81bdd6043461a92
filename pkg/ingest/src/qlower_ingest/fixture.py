"""Cached pretrained fixtures for acceptance tests.

The default fixture is a small CNN trained on a deterministic synthetic
digit-prototype dataset (28x28, 10 classes): ten smooth random prototype
images, samples drawn as shifted noisy variants. Everything is cached
under the fixture directory and checksummed; registry entries backed by
a URL download instead (and fail loudly without a network).
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convert import convert


class FixtureError(Exception):
    pass


@dataclass
class Fixture:
    name: str
    state_path: Path
    descriptor_path: Path
    data_path: Path            # npz: x_train, x_eval, y_eval
    bundle_dir: Path


def _default_cache() -> Path:
    return Path(os.environ.get("QLOWER_INGEST_CACHE",
                               Path.home() / ".cache" / "qlower-ingest"))


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def synth_digits(rng: np.random.Generator, n: int,
                 train: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(n,1,28,28) images around 10 smooth class prototypes + labels."""
    base = np.random.default_rng(1234)          # prototypes fixed for all splits
    protos = []
    for _ in range(10):
        coarse = base.normal(0, 1, size=(7, 7))
        img = np.kron(coarse, np.ones((4, 4)))
        protos.append(img / max(np.abs(img).max(), 1e-6))
    protos = np.stack(protos)
    y = rng.integers(0, 10, size=n)
    x = protos[y][:, None, :, :].copy()
    shifts = rng.integers(-2, 3, size=(n, 2))
    for i in range(n):
        x[i, 0] = np.roll(x[i, 0], tuple(shifts[i]), axis=(0, 1))
    x += 0.25 * rng.normal(0, 1, size=x.shape)
    return x.astype(np.float32), y.astype(np.int64)


def _train_digits_cnn(out_dir: Path) -> None:
    import torch
    import torch.nn as nn

    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    x_train, y_train = synth_digits(rng, 4096)
    x_eval, y_eval = synth_digits(np.random.default_rng(99), 1024)

    model = nn.Sequential(
        nn.Conv2d(1, 8, 3, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
        nn.MaxPool2d(2, 2),
        nn.Conv2d(8, 16, 3, padding=1), nn.BatchNorm2d(16), nn.ReLU(),
        nn.MaxPool2d(2, 2),
        nn.Flatten(), nn.Linear(16 * 7 * 7, 10),
    )
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    loss_fn = nn.CrossEntropyLoss()
    xb = torch.from_numpy(x_train)
    yb = torch.from_numpy(y_train)
    model.train()
    for step in range(240):
        idx = torch.from_numpy(
            rng.integers(0, len(x_train), size=128))
        opt.zero_grad()
        loss = loss_fn(model(xb[idx]), yb[idx])
        loss.backward()
        opt.step()
    model.eval()
    with torch.no_grad():
        acc = (model(torch.from_numpy(x_eval)).argmax(1).numpy()
               == y_eval).mean()
    if acc < 0.95:
        raise FixtureError(f"fixture training failed (eval acc {acc:.3f})")

    torch.save(model.state_dict(), out_dir / "digits_cnn.pt")
    descriptor = {
        "input_shape": [1, 1, 28, 28],
        "layers": [
            {"kind": "conv2d", "weight": "0.weight", "bias": "0.bias",
             "stride": 1, "padding": 1},
            {"kind": "batchnorm", "weight": "1.weight", "bias": "1.bias",
             "mean": "1.running_mean", "var": "1.running_var", "eps": 1e-5},
            {"kind": "relu"},
            {"kind": "maxpool", "kernel": 2, "stride": 2},
            {"kind": "conv2d", "weight": "4.weight", "bias": "4.bias",
             "stride": 1, "padding": 1},
            {"kind": "batchnorm", "weight": "5.weight", "bias": "5.bias",
             "mean": "5.running_mean", "var": "5.running_var", "eps": 1e-5},
            {"kind": "relu"},
            {"kind": "maxpool", "kernel": 2, "stride": 2},
            {"kind": "flatten"},
            {"kind": "linear", "weight": "9.weight", "bias": "9.bias"},
        ],
    }
    (out_dir / "digits_cnn.json").write_text(
        json.dumps(descriptor, indent=1), encoding="utf-8")
    np.savez(out_dir / "digits_data.npz", x_train=x_train[:256],
             x_eval=x_eval, y_eval=y_eval)


def _download(url: str, dest: Path, sha256: str) -> None:
    try:
        with urllib.request.urlopen(url, timeout=10) as resp:
            dest.write_bytes(resp.read())
    except Exception as exc:
        raise FixtureError(f"download of {url!r} failed: {exc}") from exc
    got = _sha256_file(dest)
    if got != sha256:
        dest.unlink(missing_ok=True)
        raise FixtureError(f"checksum mismatch for {url!r}: {got}")


REGISTRY: dict[str, dict] = {
    "digits-cnn": {"builder": _train_digits_cnn},
    # remote entries carry url + sha256 and hit the network on first fetch
}


def fetch_fixture(name: str, cache_dir: str | Path | None = None) -> Fixture:
    """Materialize (or reuse) a cached pretrained fixture and its bundle."""
    if name not in REGISTRY:
        raise FixtureError(f"unknown fixture {name!r}")
    entry = REGISTRY[name]
    root = Path(cache_dir) if cache_dir else _default_cache()
    fdir = root / name
    fdir.mkdir(parents=True, exist_ok=True)
    state = fdir / f"{name.replace('-', '_')}.pt"
    desc = fdir / f"{name.replace('-', '_')}.json"
    data = fdir / f"{name.split('-')[0]}_data.npz"
    sums = fdir / "checksums.json"

    if not sums.exists():
        if "builder" in entry:
            entry["builder"](fdir)
        else:
            _download(entry["url"], state, entry["sha256"])
        files = [p for p in (state, desc, data) if p.exists()]
        sums.write_text(json.dumps(
            {p.name: _sha256_file(p) for p in files}, indent=1), "utf-8")
    else:
        recorded = json.loads(sums.read_text("utf-8"))
        for fname, want in recorded.items():
            got = _sha256_file(fdir / fname)
            if got != want:
                raise FixtureError(
                    f"cached fixture {name!r}: checksum mismatch on {fname} "
                    f"({got} != {want})")

    bundle = fdir / "bundle"
    if not (bundle / "manifest.json").exists():
        report = convert(state, bundle, descriptor=desc if desc.exists()
                         else None, strict=True)
        if not report.ok:
            raise FixtureError(f"fixture conversion failed: {report.skipped}")
    return Fixture(name=name, state_path=state, descriptor_path=desc,
                   data_path=data, bundle_dir=bundle)
