"""Command-line pipeline: calibrate | prune | fuse | verify | export | run
| pipeline.

Stages compose through interchange containers on disk, so each one is
independently invocable and testable. Exit codes: 1 usage, 2 config,
3 verify-failed, 4 io. Progress is logged as JSON lines on stderr
(silence with QLOWER_LOG=quiet).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .dataio import load_batches, save_batches
from .engine.paths import (compare_paths, exec_fakequant, exec_float,
                           exec_int, input_qp)
from .errors import (ByteCountError, ExportError, FixedPointOverflowError,
                     FusionError, GraphError, MissingBlobError, QuantError)
from .export import ExportConfig, bundle_hash, export_model
from .fuse import FuseMode, fuse_graph
from .ir import load_model, save_model
from .quant.calibrate import QConfig, calibrate_graph
from .quant.qops import quantize
from .sparsity import SparsityConfig, prune_graph

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_IO = 4

_CONFIG_ERRORS = (QuantError, FusionError, FixedPointOverflowError,
                  ExportError, ValueError, KeyError, TypeError)
_IO_ERRORS = (MissingBlobError, ByteCountError, GraphError, FileNotFoundError,
              NotADirectoryError, PermissionError, OSError)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def log(stage: str, event: str, **fields) -> None:
    if os.environ.get("QLOWER_LOG", "info") == "quiet":
        return
    rec = {"stage": stage, "event": event}
    rec.update(fields)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {path!r} not found")
    return json.loads(p.read_text("utf-8"))


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} path {path!r} does not exist")
    return p


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_calibrate(model: str, data: str, out: str, qcfg: QConfig):
    g = load_model(_require(model, "model"))
    batches = load_batches(_require(data, "calibration data"))
    t0 = time.perf_counter()
    annotated = calibrate_graph(g, batches, qcfg)
    save_model(annotated, out)
    log("calibrate", "done", model=model, out=out,
        edges=len(annotated.edge_qp), weights=len(annotated.param_qp),
        seconds=round(time.perf_counter() - t0, 3))


def stage_prune(model: str, out: str, scfg: SparsityConfig):
    g = load_model(_require(model, "model"))
    pruned = prune_graph(g, scfg)
    save_model(pruned, out)
    log("prune", "done", model=model, out=out, mode=scfg.mode)


def stage_fuse(model: str, out: str, fmode: FuseMode):
    g = load_model(_require(model, "model"))
    fused = fuse_graph(g, fmode)
    save_model(fused, out)
    log("fuse", "done", model=model, out=out, mode=fmode.mode,
        int_bits=fmode.int_bits, frac_bits=fmode.frac_bits)


def _verify_batches(fused, data: str | None, samples: int, seed: int):
    batches = []
    if data is not None:
        batches = load_batches(_require(data, "verify data"))
    have = sum(b.shape[0] for b in batches)
    if have < samples:
        rng = np.random.default_rng(seed)
        shape = fused.inputs[0][1]
        batches.append(rng.normal(0, 1, size=(samples - have,) + tuple(shape[1:])))
    return batches


def stage_verify(fused_path: str, data: str | None, calibrated: str | None,
                 max_lsb: float, min_agreement: float, samples: int,
                 seed: int, report_path: str | None,
                 min_ref_agreement: float = 0.9) -> int:
    fused = load_model(_require(fused_path, "fused model"))
    g_cal = load_model(_require(calibrated, "calibrated model")) \
        if calibrated else None
    batches = _verify_batches(fused, data, samples, seed)
    report = compare_paths(g_cal, fused, batches, g_calibrated=g_cal)
    ok = report.max_lsb <= max_lsb and report.argmax_agreement >= min_agreement
    if report.argmax_vs_reference is not None:
        ok = ok and report.argmax_vs_reference >= min_ref_agreement
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(
            json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8")
    log("verify", "done" if ok else "tolerance-exceeded",
        max_lsb=report.max_lsb, agreement=round(report.argmax_agreement, 6),
        vs_reference=report.argmax_vs_reference, samples=report.samples)
    return EXIT_OK if ok else EXIT_VERIFY


def stage_export(fused_path: str, out: str, ecfg: ExportConfig):
    fused = load_model(_require(fused_path, "fused model"))
    export_model(fused, out, ecfg)
    log("export", "done", out=out, format=ecfg.format,
        sha256=bundle_hash(out))


def stage_run(model: str, data: str, out: str, path_kind: str,
              assert_int_only: bool, report_path: str | None):
    g = load_model(_require(model, "model"))
    batches = load_batches(_require(data, "input data"))
    outputs = []
    t0 = time.perf_counter()
    if path_kind == "int":
        qp = input_qp(g)
        for b in batches:
            outputs.append(exec_int(g, quantize(np.asarray(b), qp),
                                    assert_int_only=assert_int_only)
                           .astype(np.float32))
        report = compare_paths(None, g, batches).to_json()
        report["float_ops_int_path"] = 0
    else:
        fn = exec_float if path_kind == "float" else exec_fakequant
        for b in batches:
            outputs.append(np.asarray(fn(g, b), dtype=np.float32))
        report = {"path": path_kind,
                  "runtime_s": round(time.perf_counter() - t0, 4),
                  "batches": len(batches)}
    save_batches(out, outputs)
    if report_path:
        Path(report_path).write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n", "utf-8")
    log("run", "done", path=path_kind, out=out, batches=len(batches))


def stage_pipeline(cfg: dict) -> int:
    for key in ("model", "calib_data", "output"):
        if key not in cfg:
            raise QuantError(f"pipeline config missing {key!r}")
    _require(cfg["model"], "model")
    _require(cfg["calib_data"], "calibration data")
    out = Path(cfg["output"])
    seed = int(cfg.get("seed", 0))
    np.random.seed(seed)

    qcfg = QConfig.from_json(cfg.get("quant", {}))
    stage_calibrate(cfg["model"], cfg["calib_data"], str(out / "annotated"), qcfg)

    fuse_src = str(out / "annotated")
    if cfg.get("sparsity"):
        s = cfg["sparsity"]
        scfg = SparsityConfig(mode=s.get("mode", "nm"),
                              target_sparsity=float(s.get("sparsity", 0.5)),
                              n=int(s.get("n", 2)), m=int(s.get("m", 4)))
        stage_prune(fuse_src, str(out / "pruned"), scfg)
        fuse_src = str(out / "pruned")

    f = cfg.get("fuse", {})
    fmode = FuseMode(mode=f.get("mode", "channelwise"),
                     int_bits=int(f.get("int_bits", 4)),
                     frac_bits=int(f.get("frac_bits", 12)),
                     ln_mode=f.get("ln_mode", "instant"))
    stage_fuse(fuse_src, str(out / "fused"), fmode)

    v = cfg.get("verify", {})
    rc = stage_verify(str(out / "fused"), cfg["calib_data"], fuse_src,
                      max_lsb=float(v.get("max_lsb", 1)),
                      min_agreement=float(v.get("min_agreement", 0.995)),
                      samples=int(v.get("samples", 64)), seed=seed,
                      report_path=str(out / "report.json"),
                      min_ref_agreement=float(v.get("min_ref_agreement", 0.9)))
    if rc != EXIT_OK:
        return rc

    ecfg = ExportConfig.from_json(cfg.get("export", {}))
    stage_export(str(out / "fused"), str(out / "bundle"), ecfg)
    log("pipeline", "done", bundle=str(out / "bundle"),
        sha256=bundle_hash(out / "bundle"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    p = _Parser(prog="qlower", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("calibrate", help="compute quantization parameters")
    c.add_argument("model")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config")
    c.add_argument("--w-bits", type=int, default=8)
    c.add_argument("--a-bits", type=int, default=8)
    c.add_argument("--method", default="minmax",
                   choices=["minmax", "mse", "adaround"])
    c.add_argument("--per-tensor-weights", action="store_true")
    c.add_argument("--symmetric-activations", action="store_true")

    pr = sub.add_parser("prune", help="sparsify weights")
    pr.add_argument("model")
    pr.add_argument("--out", required=True)
    pr.add_argument("--mode", default="nm", choices=["nm", "elementwise"])
    pr.add_argument("--n", type=int, default=2)
    pr.add_argument("--m", type=int, default=4)
    pr.add_argument("--sparsity", type=float, default=0.5)

    f = sub.add_parser("fuse", help="lower to integer-only ops")
    f.add_argument("model")
    f.add_argument("--out", required=True)
    f.add_argument("--mode", default="channelwise",
                   choices=["prefuse", "channelwise"])
    f.add_argument("--int-bits", type=int, default=4)
    f.add_argument("--frac-bits", type=int, default=12)
    f.add_argument("--ln-mode", default="instant",
                   choices=["instant", "running"])

    v = sub.add_parser("verify", help="dual-path agreement check")
    v.add_argument("fused")
    v.add_argument("--data")
    v.add_argument("--calibrated")
    v.add_argument("--max-lsb", type=float, default=1.0)
    v.add_argument("--min-agreement", type=float, default=0.995)
    v.add_argument("--min-ref-agreement", type=float, default=0.9)
    v.add_argument("--samples", type=int, default=64)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report")

    e = sub.add_parser("export", help="write the deployment bundle")
    e.add_argument("fused")
    e.add_argument("--out", required=True)
    e.add_argument("--format", default="hex",
                   choices=["hex", "binstr", "rawbin", "decimal_json"])
    e.add_argument("--word-bits", type=int, default=8)
    e.add_argument("--words-per-line", type=int, default=1)
    e.add_argument("--pack", action="store_true")

    r = sub.add_parser("run", help="execute a model on input blobs")
    r.add_argument("model")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--path", default="float",
                   choices=["float", "fakequant", "int"])
    r.add_argument("--assert-int-only", action="store_true")
    r.add_argument("--report")

    pl = sub.add_parser("pipeline", help="calibrate -> (prune) -> fuse -> "
                                         "verify -> export")
    pl.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.cmd == "calibrate":
            over = _load_config(args.config)
            qcfg = QConfig.from_json(over.get("quant", over)) if over else \
                QConfig(w_bits=args.w_bits, a_bits=args.a_bits,
                        method=args.method,
                        per_channel_w=not args.per_tensor_weights,
                        symmetric_a=args.symmetric_activations)
            stage_calibrate(args.model, args.data, args.out, qcfg)
        elif args.cmd == "prune":
            stage_prune(args.model, args.out,
                        SparsityConfig(mode=args.mode,
                                       target_sparsity=args.sparsity,
                                       n=args.n, m=args.m))
        elif args.cmd == "fuse":
            stage_fuse(args.model, args.out,
                       FuseMode(mode=args.mode, int_bits=args.int_bits,
                                frac_bits=args.frac_bits,
                                ln_mode=args.ln_mode))
        elif args.cmd == "verify":
            return stage_verify(args.fused, args.data, args.calibrated,
                                args.max_lsb, args.min_agreement,
                                args.samples, args.seed, args.report,
                                args.min_ref_agreement)
        elif args.cmd == "export":
            stage_export(args.fused, args.out,
                         ExportConfig(format=args.format,
                                      word_bits=args.word_bits,
                                      words_per_line=args.words_per_line,
                                      pack=args.pack))
        elif args.cmd == "run":
            stage_run(args.model, args.data, args.out, args.path,
                      args.assert_int_only, args.report)
        elif args.cmd == "pipeline":
            return stage_pipeline(_load_config(args.config))
        return EXIT_OK
    except _IO_ERRORS as exc:
        log(args.cmd, "io-error", error=str(exc))
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _CONFIG_ERRORS as exc:
        log(args.cmd, "config-error", error=str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
