"""Ingestion CLI: convert checkpoints into interchange bundles.

    qlower-ingest convert model.onnx out/
    qlower-ingest convert weights.pt out/ --descriptor arch.json
    qlower-ingest fetch digits-cnn --cache ~/.cache/qlower-ingest
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .convert import ConversionError, convert
from .fixture import FixtureError, fetch_fixture
from .onnx_min import OnnxDecodeError


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="qlower-ingest", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("convert", help="checkpoint -> interchange bundle")
    c.add_argument("src")
    c.add_argument("dst")
    c.add_argument("--descriptor", help="architecture JSON for state archives")
    c.add_argument("--strict", action="store_true",
                   help="fail on the first unsupported operator")
    c.add_argument("--no-stubs", action="store_true",
                   help="omit quant/dequant boundary stubs")
    c.add_argument("--report", help="write the conversion report JSON here")

    f = sub.add_parser("fetch", help="materialize a cached pretrained fixture")
    f.add_argument("name")
    f.add_argument("--cache")

    args = p.parse_args(argv)
    try:
        if args.cmd == "convert":
            if not Path(args.src).exists():
                print(f"source {args.src!r} not found", file=sys.stderr)
                return 4
            report = convert(args.src, args.dst, descriptor=args.descriptor,
                             strict=args.strict, stubs=not args.no_stubs)
            if args.report:
                Path(args.report).write_text(
                    json.dumps(report.to_json(), indent=1) + "\n", "utf-8")
            print(json.dumps({"mapped": report.mapped_nodes,
                              "skipped": report.skipped, "ok": report.ok}))
            return 0 if report.ok else 5
        fx = fetch_fixture(args.name, cache_dir=args.cache)
        print(json.dumps({"bundle": str(fx.bundle_dir),
                          "state": str(fx.state_path),
                          "data": str(fx.data_path)}))
        return 0
    except (ConversionError, OnnxDecodeError) as exc:
        print(f"conversion error: {exc}", file=sys.stderr)
        return 2
    except FixtureError as exc:
        print(f"fixture error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
