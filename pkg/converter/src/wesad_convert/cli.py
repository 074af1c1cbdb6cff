"""Command-line entry point for session conversion.

Subcommands: convert (session .pkl to AFB1 container plus JSON manifest),
verify (re-read a container and compare with its manifest).

Exit codes match the consumer's contract: 0 success, 1 usage error,
2 data or format error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from wesad_convert.convert import (
    ConversionError,
    convert,
    default_manifest_path,
    verify,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the exit-code contract says 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wesad-convert",
        description=("Convert chest-sensor .pkl sessions into AFB1 "
                     "containers with verifiable manifests."),
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("convert", help="convert one session file")
    p.add_argument("source", help="path to the .pkl session")
    p.add_argument("out", help="path for the AFB1 container")
    p.add_argument("--manifest", default=None,
                   help="manifest path (default: OUT.manifest.json)")
    p.add_argument("--map", action="append", default=[], metavar="RAW=NEW",
                   help="remap a raw label code (repeatable)")

    p = sub.add_parser("verify", help="check a container against a manifest")
    p.add_argument("container", help="path to the AFB1 container")
    p.add_argument("manifest", help="path to the JSON manifest")
    return parser


def _parse_label_map(entries: Sequence[str]) -> Optional[dict[int, int]]:
    if not entries:
        return None
    label_map: dict[int, int] = {}
    for entry in entries:
        key, sep, value = entry.partition("=")
        try:
            if not sep:
                raise ValueError
            label_map[int(key)] = int(value)
        except ValueError:
            print(f"wesad-convert: bad --map entry {entry!r}, want RAW=NEW",
                  file=sys.stderr)
            raise SystemExit(EXIT_USAGE) from None
    return label_map


def _cmd_convert(args) -> int:
    label_map = _parse_label_map(args.map)
    manifest_path = args.manifest
    if manifest_path is None:
        manifest_path = default_manifest_path(args.out)
    manifest = convert(args.source, args.out, label_map=label_map,
                       manifest_path=manifest_path)
    print(f"wrote {args.out} ({manifest.samples_written} samples, "
          f"subject {manifest.subject_id})")
    print(f"wrote {manifest_path}")
    histogram = " ".join(f"{code}:{count}" for code, count
                         in sorted(manifest.label_histogram.items()))
    print(f"label histogram: {histogram}")
    print(f"sha256: {manifest.checksum_sha256}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    diagnostics = verify(args.container, args.manifest)
    if not diagnostics:
        print(f"ok: {args.container} matches {args.manifest}")
        return EXIT_OK
    for line in diagnostics:
        print(f"mismatch: {line}", file=sys.stderr)
    return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convert":
            return _cmd_convert(args)
        return _cmd_verify(args)
    except ConversionError as exc:
        print(f"wesad-convert: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"wesad-convert: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
