"""Command-line entry point.

Subcommands: synth (write synthetic subject containers), inspect (dump
and validate a container), run (train and evaluate the protocols), plot
(render a summary as an SVG bar chart), gradcheck (finite-difference
verification of the autodiff stack).

Exit codes are a stable contract for scripting: 0 success, 1 usage
error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from affectbench import datapipe, protocols
from affectbench.errors import FormatError, NumericsError
from affectbench.gradcheck import TOLERANCE, run_gradient_checks
from affectbench.model import ModelConfig
from affectbench.training import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SEED_ENV_VAR = "AFFECTBENCH_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the exit-code contract says 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="affectbench",
        description=("Windowed physiological-signal emotion classification: "
                     "personalized vs generalized model comparison."),
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic subject containers")
    p.add_argument("--subjects", type=int, required=True,
                   help="number of subjects to generate")
    p.add_argument("--seconds", type=float, default=2.0,
                   help="per-condition seconds (total duration is 3x this)")
    p.add_argument("--seed", type=int, default=None,
                   help=f"base seed (default: ${SEED_ENV_VAR} or 0)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("inspect", help="validate and describe a container")
    p.add_argument("path", help="container file to inspect")

    p = sub.add_parser("run", help="train and evaluate the protocols")
    p.add_argument("--protocol", default="all",
                   choices=["personalized", "inclusive", "exclusive", "all"])
    p.add_argument("--data", required=True,
                   help="directory holding .afb containers")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help=f"base seed (default: ${SEED_ENV_VAR} or 0)")
    p.add_argument("--subjects", default=None,
                   help="comma-separated subject ids to include")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel per-subject training runs")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                   help="config overrides, e.g. model.base_channels=32 "
                        "train.lr=0.0005")

    p = sub.add_parser("plot", help="render a summary as an SVG bar chart")
    p.add_argument("--summary", required=True, help="report.json to read")
    p.add_argument("--metric", required=True, choices=["accuracy", "f1"])
    p.add_argument("--out", required=True, help="SVG file to write")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=None,
                   help=f"base seed (default: ${SEED_ENV_VAR} or 0)")
    return parser


def resolve_seed(flag_value: Optional[int]) -> int:
    """--seed wins; else the environment variable; else 0."""
    if flag_value is not None:
        if not 0 <= flag_value < 2 ** 64:
            raise UsageError("--seed must fit in u64")
        return flag_value
    env = os.environ.get(SEED_ENV_VAR)
    if env is None:
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer")
    if not 0 <= seed < 2 ** 64:
        raise UsageError(f"{SEED_ENV_VAR} must fit in u64")
    return seed


def _coerce(raw: str, target_type, key: str):
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise UsageError(
            f"{key}: expected {target_type.__name__}, got {raw!r}")


def apply_overrides(model_cfg: ModelConfig, train_cfg: TrainConfig,
                    pairs: Sequence[str]
                    ) -> tuple[ModelConfig, TrainConfig]:
    """Dotted key=value overrides onto the two configs; unknown keys fail."""
    model_fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not KEY=VALUE")
        key, raw = pair.split("=", 1)
        if "." not in key:
            raise UsageError(
                f"override key {key!r} must be model.<field> or train.<field>")
        scope, name = key.split(".", 1)
        if scope == "model":
            if name not in model_fields:
                raise UsageError(f"unknown model config field {name!r}")
            value = _coerce(raw, type(getattr(model_cfg, name)), key)
            model_cfg = dataclasses.replace(model_cfg, **{name: value})
        elif scope == "train":
            if name not in train_fields:
                raise UsageError(f"unknown train config field {name!r}")
            value = _coerce(raw, type(getattr(train_cfg, name)), key)
            train_cfg = dataclasses.replace(train_cfg, **{name: value})
        else:
            raise UsageError(
                f"override scope {scope!r} must be 'model' or 'train'")
    return model_cfg, train_cfg


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_synth(args) -> int:
    if args.subjects < 1:
        raise UsageError("--subjects must be >= 1")
    if args.seconds <= 0:
        raise UsageError("--seconds must be positive")
    seed = resolve_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    recordings = datapipe.synth_generate(args.subjects, args.seconds, seed)
    per_subject = []
    for rec in recordings:
        path = os.path.join(args.out, f"S{rec.subject_id:03d}.afb")
        datapipe.write_subject(rec, path)
        kept, discarded = datapipe.scan_windows(datapipe.normalize(rec))
        per_subject.append({
            "subject_id": rec.subject_id,
            "samples": rec.num_samples,
            "windows_kept": len(kept),
            "windows_discarded": discarded,
            "file": os.path.basename(path),
        })
        print(f"S{rec.subject_id:03d}: {rec.num_samples} samples, "
              f"{len(kept)} windows kept, {discarded} discarded -> {path}")
    _write_json(
        {"command": "synth", "subjects": args.subjects,
         "seconds_per_condition": args.seconds, "seed": seed,
         "recordings": per_subject},
        os.path.join(args.out, "synth_manifest.json"),
    )
    return EXIT_OK


def cmd_inspect(args) -> int:
    rec = datapipe.load_subject(args.path)
    print(f"file: {args.path}")
    print(f"subject_id: {rec.subject_id}")
    print(f"sample_rate_hz: {rec.sample_rate}")
    print(f"num_samples: {rec.num_samples}")
    print(f"modalities: {', '.join(rec.modalities)}")
    histogram = np.bincount(rec.labels, minlength=4)
    for code in np.nonzero(histogram)[0]:
        cls = datapipe.LABEL_MAP.get(int(code))
        name = cls.name if cls is not None else "unmapped"
        print(f"label_code {code} ({name}): {histogram[code]} samples")
    kept, discarded = datapipe.scan_windows(rec)
    per_class = {cls.name: 0 for cls in datapipe.AffectClass}
    for w in kept:
        per_class[w.label.name] += 1
    for name, count in per_class.items():
        print(f"windows[{name}]: {count}")
    print(f"windows_discarded: {discarded}")
    return EXIT_OK


def _parse_subject_filter(raw: Optional[str]) -> Optional[list[int]]:
    if raw is None:
        return None
    try:
        ids = [int(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"--subjects {raw!r} is not a comma-separated "
                         "integer list")
    if not ids:
        raise UsageError("--subjects selected nothing")
    return ids


def _load_recordings(data_dir: str,
                     subject_filter: Optional[list[int]]):
    if not os.path.isdir(data_dir):
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    paths = sorted(
        os.path.join(data_dir, name)
        for name in os.listdir(data_dir) if name.endswith(".afb")
    )
    if not paths:
        raise FileNotFoundError(f"no .afb containers in {data_dir}")
    recordings = [datapipe.load_subject(p) for p in paths]
    if subject_filter is not None:
        available = {r.subject_id for r in recordings}
        missing = [sid for sid in subject_filter if sid not in available]
        if missing:
            raise FileNotFoundError(
                f"subjects {missing} not present in {data_dir}")
        recordings = [r for r in recordings
                      if r.subject_id in subject_filter]
    return recordings


def cmd_run(args) -> int:
    seed = resolve_seed(args.seed)
    subject_filter = _parse_subject_filter(args.subjects)
    # A train.seed override wins over --seed; the echo reflects the
    # effective value either way.
    model_cfg, train_cfg = apply_overrides(
        ModelConfig(), TrainConfig(seed=seed), args.overrides)
    seed = train_cfg.seed
    try:
        model_cfg.validate()
        train_cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    recordings = _load_recordings(args.data, subject_filter)
    os.makedirs(args.out, exist_ok=True)

    reports = []
    if args.protocol in ("personalized", "all"):
        reports += protocols.run_personalized(
            recordings, train_cfg, model_cfg, jobs=args.jobs,
            save_dir=args.out)
    if args.protocol in ("inclusive", "all"):
        reports += protocols.run_subject_inclusive(
            recordings, train_cfg, model_cfg, save_dir=args.out)
    if args.protocol in ("exclusive", "all"):
        reports += protocols.run_subject_exclusive(
            recordings, train_cfg, model_cfg, jobs=args.jobs,
            save_dir=args.out)
    summary = protocols.aggregate(reports)

    echo = {
        "command": "run",
        "protocol": args.protocol,
        "data_dir": args.data,
        "seed": seed,
        "jobs": args.jobs,
        "subjects": sorted({r.subject_id for r in recordings}),
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "config_hash": protocols.config_hash(model_cfg, train_cfg),
    }
    protocols.emit_report(summary, os.path.join(args.out, "report.json"),
                          "json", config_echo=echo)
    protocols.emit_report(summary, os.path.join(args.out, "report.csv"),
                          "csv")
    _write_json(echo, os.path.join(args.out, "config.json"))

    for model_type, agg in summary.aggregates.items():
        acc_sd = "n/a" if agg.accuracy_sd_pct is None \
            else f"{agg.accuracy_sd_pct:.2f}"
        f1_sd = "n/a" if agg.f1_sd_pct is None else f"{agg.f1_sd_pct:.2f}"
        print(f"{model_type}: accuracy {agg.accuracy_mean_pct:.2f} "
              f"({acc_sd}) %, macro F1 {agg.f1_mean_pct:.2f} ({f1_sd}) %")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        with open(args.summary, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        summary = protocols.summary_from_dict(payload)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed summary {args.summary}: {exc}") from exc
    protocols.emit_bar_chart_svg(summary, args.metric, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    results = run_gradient_checks(seed)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
        worst = max(worst, err)
    if worst > TOLERANCE:
        print(f"gradient check failed: worst {worst:.3e} > {TOLERANCE:.0e}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all gradient checks within {TOLERANCE:.0e}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "inspect": cmd_inspect,
    "run": cmd_run,
    "plot": cmd_plot,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"affectbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"affectbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"affectbench: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"affectbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
