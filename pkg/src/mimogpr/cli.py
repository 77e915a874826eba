"""Command-line front end: synth, describe, fit, evaluate.

Every run resolves its parameters (flags override --config file values),
writes its outputs atomically, and drops a manifest next to them recording
the resolved configuration, the seed, the input digest and the tool version.
Re-running a command with ``--config <manifest>`` reproduces the outputs
byte for byte. MIMOGPR_THREADS caps internal parallelism (absent = auto).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, harness, metrics, persistence
from .timeseries import Month, SplitSpec, describe_panel, describe_series, load_panel, split

DEFAULT_RIDGE_GRID = "0,1e-4,1e-3,1e-2,1e-1,1"


class CliError(Exception):
    """User-facing command failure (bad flags, infeasible configuration)."""


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


class _OutputSet:
    """Collects outputs and commits them atomically (all or nothing)."""

    def __init__(self) -> None:
        self._pending: list[tuple[Path, bytes]] = []

    def add_text(self, path: str | Path, text: str) -> None:
        self._pending.append((Path(path), text.encode("utf-8")))

    def commit(self) -> list[Path]:
        written = []
        try:
            for path, data in self._pending:
                if path.parent and not path.parent.exists():
                    path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
                written.append(path)
        except BaseException:
            for path in written:
                path.unlink(missing_ok=True)
            raise
        return written


def _write_manifest(
    outputs: _OutputSet,
    manifest_path: Path,
    command: str,
    config: dict,
    seed: int | None,
    data_path: Path | None,
) -> None:
    manifest = {
        "tool": "mimogpr",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "input_digest": _sha256(data_path) if data_path else None,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    outputs.add_text(manifest_path, json.dumps(manifest, indent=1) + "\n")


def _load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    # a manifest doubles as a config file
    if isinstance(doc, dict) and isinstance(doc.get("config"), dict):
        return doc["config"]
    if not isinstance(doc, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Overlay precedence: parser defaults < config file < explicit flags."""
    if not getattr(args, "config", None):
        return args
    file_values = _load_config_file(args.config)
    explicit = {
        token[2:].split("=")[0].replace("-", "_")
        for token in argv
        if token.startswith("--")
    }
    for key, value in file_values.items():
        attr = key.replace("-", "_")
        if attr == "config" or not hasattr(args, attr):
            continue
        if attr not in explicit:
            setattr(args, attr, value)
    return args


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise CliError(f"--{name.replace('_', '-')} is required (flag or config file)")


def _config_echo(args: argparse.Namespace, keys: list[str]) -> dict:
    return {key: getattr(args, key) for key in keys}


def _parse_horizons(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(h) for h in value)
    try:
        return tuple(int(part) for part in str(value).split(","))
    except ValueError:
        raise CliError(f"bad horizons {value!r}; expected comma-separated integers") from None


def _parse_grid(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(g) for g in value)
    try:
        return tuple(float(part) for part in str(value).split(","))
    except ValueError:
        raise CliError(f"bad ridge grid {value!r}; expected comma-separated numbers") from None


# --- synth -------------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace) -> int:
    _require(args, "out")
    if not 0.0 <= args.rho < 1.0:
        raise CliError(f"--rho must lie in [0, 1), got {args.rho}")
    try:
        spec = harness.SyntheticSpec(
            n_series=args.series,
            n_months=args.months,
            seasonal_amplitude=args.amplitude,
            trend_slope=args.trend,
            cross_correlation=args.rho,
            noise_std=args.noise_std,
            seed=args.seed,
            level=args.level,
            start_month=Month.parse(args.start),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    panel = harness.generate_synthetic_panel(spec)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["date", *panel.series_names])
    for i in range(panel.n_months):
        writer.writerow([str(panel.month_at(i)), *(repr(float(v)) for v in panel.values[i])])

    out = Path(args.out)
    outputs = _OutputSet()
    outputs.add_text(out, buffer.getvalue())
    keys = ["series", "months", "amplitude", "trend", "rho", "noise_std", "level", "start", "seed", "out"]
    _write_manifest(outputs, out.with_name(out.name + ".manifest.json"), "synth",
                    _config_echo(args, keys), args.seed, None)
    outputs.commit()
    print(f"wrote {out} ({panel.n_months} months x {panel.n_series} series)")
    return 0


# --- describe ------------------------------------------------------------------


def _cmd_describe(args: argparse.Namespace) -> int:
    _require(args, "data", "out")
    panel = load_panel(args.data)
    window_from = getattr(args, "from")
    try:
        lo = panel.index_of(Month.parse(window_from)) if window_from else 0
        hi = panel.index_of(Month.parse(args.to)) + 1 if args.to else panel.n_months
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if hi <= lo:
        raise CliError(f"empty window {window_from}..{args.to}")
    try:
        stats = describe_panel(panel, range(lo, hi))
        stats.append(describe_series(panel.values[lo:hi].sum(axis=1), "Total"))
    except ValueError as exc:
        raise CliError(str(exc)) from None

    header = ["Series", "Minimum", "Maximum", "Mean", "Standard deviation", "Skewness", "Kurtosis"]
    csv_lines = [",".join(header)]
    md_rows = []
    for s in stats:
        cells = [
            f"{s.minimum:.6g}", f"{s.maximum:.6g}", f"{s.mean:.6g}",
            f"{s.std:.6g}", f"{s.skewness:.2f}", f"{s.kurtosis:.2f}",
        ]
        csv_lines.append(",".join([s.name, *cells]))
        md_rows.append([s.name, *cells])

    out = Path(args.out)
    outputs = _OutputSet()
    outputs.add_text(out.with_name(out.name + ".csv"), "\n".join(csv_lines) + "\n")
    title = f"Descriptive statistics ({panel.month_at(lo)} to {panel.month_at(hi - 1)})\n\n"
    outputs.add_text(out.with_name(out.name + ".md"), title + metrics.markdown_table(header, md_rows))
    config = {"data": args.data, "from": window_from, "to": args.to, "out": args.out}
    _write_manifest(outputs, out.with_name(out.name + ".manifest.json"), "describe",
                    config, None, Path(args.data))
    outputs.commit()
    print(f"wrote {out.name}.csv and {out.name}.md")
    return 0


# --- fit -----------------------------------------------------------------------


def _experiment_config(args: argparse.Namespace, models: tuple[str, ...]) -> harness.ExperimentConfig:
    try:
        return harness.ExperimentConfig(
            lag_order=int(args.lags),
            split=SplitSpec(train_len=int(args.train_len), valid_len=int(args.valid_len)),
            horizons=_parse_horizons(args.horizons),
            models=models,
            seed=int(args.seed),
            refit_policy="refit-each-origin" if getattr(args, "refit_each_origin", False) else "fit-once",
            gpr_restarts=int(args.restarts),
            mlp_restarts=int(args.mlp_restarts),
            ridge_grid=_parse_grid(args.ridge_grid),
            combiner_per_horizon=bool(getattr(args, "per_horizon_combiner", False)),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _cmd_fit(args: argparse.Namespace) -> int:
    _require(args, "data", "model")
    panel = load_panel(args.data)
    models = ("mimo-gpr", "mimo-mlp") if args.with_mlp else ("mimo-gpr",)
    config = _experiment_config(args, models)
    try:
        split(panel, config.split)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    sets = harness.fit_model_sets(panel, config)
    gpr_set = sets["mimo-gpr"]
    mlp_stages = None
    if args.with_mlp:
        mlp_meta = sets["mimo-mlp"].metadata["mlp"]
        mlp_stages = {
            h: (tuple(block["forecasters"]), block["combiner"]) for h, block in mlp_meta.items()
        }
    bundle = persistence.ModelBundle(
        lag_order=config.lag_order,
        series_names=panel.series_names,
        split=config.split,
        seed=config.seed,
        gpr_models=tuple(gpr_set.metadata["gpr_models"]),
        combiner=gpr_set.metadata["combiner"],
        mlp_stages=mlp_stages,
    )

    out = Path(args.model)
    test_len = panel.n_months - config.split.train_len - config.split.valid_len
    outputs = _OutputSet()
    outputs.add_text(out, persistence.bundle_to_json(bundle))
    keys = ["data", "lags", "train_len", "valid_len", "model", "restarts", "mlp_restarts",
            "horizons", "ridge_grid", "with_mlp", "seed"]
    config_echo = _config_echo(args, keys)
    config_echo["test_len"] = test_len
    _write_manifest(outputs, out.with_name(out.name + ".manifest.json"), "fit",
                    config_echo, args.seed, Path(args.data))
    outputs.commit()
    print(f"wrote {out} (test remainder: {test_len} months)")
    return 0


# --- evaluate --------------------------------------------------------------------


def _parse_eval_window(panel, text) -> range | None:
    if not text:
        return None
    try:
        lo_text, _, hi_text = str(text).partition(":")
        lo = panel.index_of(Month.parse(lo_text))
        hi = panel.index_of(Month.parse(hi_text)) + 1
    except ValueError as exc:
        raise CliError(f"bad --eval-window {text!r}: {exc}") from None
    return range(lo, hi)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    _require(args, "data", "out")
    panel = load_panel(args.data)
    for name in (args.candidate, args.benchmark):
        if name not in harness.MODEL_NAMES:
            raise CliError(f"unknown model name {name!r}; choose from {harness.MODEL_NAMES}")
    if args.candidate == args.benchmark:
        model_names: tuple[str, ...] = (args.candidate,)
    else:
        model_names = (args.candidate, args.benchmark)
    config = _experiment_config(args, model_names)
    window = _parse_eval_window(panel, args.eval_window)
    if window is not None:
        config = dataclasses.replace(config, eval_window=window)
    try:
        records = harness.rolling_evaluate(panel, config)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    report = metrics.build_report(
        args.candidate, args.benchmark, records[args.candidate], records[args.benchmark]
    )
    out = Path(args.out)
    stem = out.name
    outputs = _OutputSet()
    outputs.add_text(out.with_name(f"{stem}_records.csv"), harness.records_to_csv(records))
    outputs.add_text(out.with_name(f"{stem}_accuracy.csv"), metrics.accuracy_table_csv(report))
    outputs.add_text(out.with_name(f"{stem}_accuracy.md"), metrics.accuracy_table_markdown(report))
    outputs.add_text(out.with_name(f"{stem}_plae.csv"), metrics.plae_table_csv(report))
    outputs.add_text(out.with_name(f"{stem}_plae.md"), metrics.plae_table_markdown(report))
    keys = ["data", "candidate", "benchmark", "horizons", "lags", "train_len", "valid_len",
            "restarts", "mlp_restarts", "ridge_grid", "refit_each_origin",
            "per_horizon_combiner", "eval_window", "seed", "out"]
    _write_manifest(outputs, out.with_name(f"{stem}.manifest.json"), "evaluate",
                    _config_echo(args, keys), args.seed, Path(args.data))
    outputs.commit()
    print(f"wrote {stem}_records.csv plus accuracy and PLAE tables")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimogpr",
        description="Multi-series GP forecasting with a linear combiner, a network "
        "benchmark and rolling forecast evaluation.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"mimogpr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a seasonal synthetic panel CSV", allow_abbrev=False)
    synth.add_argument("--config", help="JSON config or manifest; flags override its values")
    synth.add_argument("--series", type=int, default=4, help="number of series (default 4)")
    synth.add_argument("--months", type=int, default=183, help="number of months (default 183)")
    synth.add_argument("--amplitude", type=float, default=20.0, help="seasonal amplitude (default 20)")
    synth.add_argument("--trend", type=float, default=0.0, help="linear trend per month (default 0)")
    synth.add_argument("--rho", type=float, default=0.0, help="cross-correlation of innovations in [0,1) (default 0)")
    synth.add_argument("--noise-std", type=float, default=1.0, help="innovation std (default 1)")
    synth.add_argument("--level", type=float, default=100.0, help="base level (default 100)")
    synth.add_argument("--start", default="1999-01", help="first month YYYY-MM (default 1999-01)")
    synth.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    synth.add_argument("--out", help="output CSV path (required)")
    synth.set_defaults(func=_cmd_synth)

    describe = sub.add_parser("describe", help="per-series descriptive statistics tables", allow_abbrev=False)
    describe.add_argument("--config", help="JSON config or manifest; flags override its values")
    describe.add_argument("--data", help="panel CSV (required)")
    describe.add_argument("--from", dest="from", default=None, metavar="YYYY-MM",
                          help="window start (default: panel start)")
    describe.add_argument("--to", default=None, metavar="YYYY-MM", help="window end (default: panel end)")
    describe.add_argument("--out", help="output prefix, .csv/.md appended (required)")
    describe.set_defaults(func=_cmd_describe)

    def add_fit_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lags", type=int, default=12, help="lag order p (default 12)")
        p.add_argument("--train-len", type=int, default=96, help="training months (default 96)")
        p.add_argument("--valid-len", type=int, default=60, help="validation months (default 60)")
        p.add_argument("--restarts", type=int, default=5, help="GP fit restarts (default 5)")
        p.add_argument("--mlp-restarts", type=int, default=10, help="network training restarts (default 10)")
        p.add_argument("--horizons", default="1,2,3,6", help="forecast horizons (default 1,2,3,6)")
        p.add_argument("--ridge-grid", default=DEFAULT_RIDGE_GRID,
                       help=f"combiner penalty grid (default {DEFAULT_RIDGE_GRID})")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")

    fit = sub.add_parser("fit", help="fit the GP stage and combiner (optionally networks) to a model document",
                         allow_abbrev=False)
    fit.add_argument("--config", help="JSON config or manifest; flags override its values")
    fit.add_argument("--data", help="panel CSV (required)")
    add_fit_flags(fit)
    fit.add_argument("--with-mlp", action="store_true", help="also train the network benchmark")
    fit.add_argument("--model", help="output model document path (required)")
    fit.set_defaults(func=_cmd_fit)

    evaluate = sub.add_parser("evaluate", help="rolling-origin forecast comparison tables", allow_abbrev=False)
    evaluate.add_argument("--config", help="JSON config or manifest; flags override its values")
    evaluate.add_argument("--data", help="panel CSV (required)")
    add_fit_flags(evaluate)
    evaluate.add_argument("--candidate", default="mimo-gpr",
                          help=f"candidate model (default mimo-gpr; one of {', '.join(harness.MODEL_NAMES)})")
    evaluate.add_argument("--benchmark", default="mimo-mlp", help="benchmark model (default mimo-mlp)")
    evaluate.add_argument("--refit-each-origin", action="store_true",
                          help="refit pipelines as the origin advances (default: fit once)")
    evaluate.add_argument("--per-horizon-combiner", action="store_true",
                          help="fit a separate combiner per horizon, applied after the recursion")
    evaluate.add_argument("--eval-window", default=None, metavar="YYYY-MM:YYYY-MM",
                          help="origin window, inclusive months (default: all feasible test origins)")
    evaluate.add_argument("--out", help="output prefix for records and tables (required)")
    evaluate.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args, argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
