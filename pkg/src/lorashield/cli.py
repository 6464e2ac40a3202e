"""Command-line interface: edit, inspect, verify and merge adapters.

Thin shell over the library; every command is reproducible by calling
the corresponding library operations with the same configuration.

Exit codes: 0 success, 1 verification threshold failure, 2 validation
error, 3 numerical failure, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import errors
from .adapter import (
    DEFAULT_TARGET_PATTERNS,
    adapter_from_tensor_map,
    adapter_to_tensor_map,
    base_weights_from_tensor_map,
    compose_delta,
    merge_adapters,
    patch_tensor_map,
    resolve_target_layers,
)
from .concepts import antonym_or_neutral, load_concept_spec, load_probe_set
from .container import read_container_file, write_container_file
from .editing import EditConfig, edit_adapter
from .metrics import benign_drift, dumps_canonical, projection_shift

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("lorashield.cli")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fail(message: str, code: int):
    raise CliError(message, code)


def _load_config_file(path: str) -> dict[str, str]:
    """Flat `key = value` file mirroring the flag names; '#' starts a comment."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(f"cannot read config file: {exc}", EXIT_VALIDATION)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(f"{path}:{lineno}: expected `key = value`", EXIT_VALIDATION)
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset flags from --config file values; flags win."""
    if not getattr(args, "config", None):
        return
    file_values = _load_config_file(args.config)
    for key, raw in file_values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            _fail(f"unknown config key {key!r}", EXIT_VALIDATION)
        if getattr(args, attr) is not None:
            continue  # flag was given explicitly
        action = next((a for a in parser._actions if a.dest == attr), None)
        try:
            if action is not None and action.type is not None:
                setattr(args, attr, action.type(raw))
            else:
                setattr(args, attr, raw)
        except (TypeError, ValueError) as exc:
            _fail(f"config key {key!r}: {exc}", EXIT_VALIDATION)


def _require_file(path: str | None, flag: str) -> Path:
    if not path:
        _fail(f"missing required flag {flag}", EXIT_VALIDATION)
    p = Path(path)
    if not p.is_file():
        _fail(f"{flag}: no such file: {path}", EXIT_VALIDATION)
    return p


def _output_path(path: str | None, flag: str) -> Path:
    if not path:
        _fail(f"missing required flag {flag}", EXIT_VALIDATION)
    p = Path(path)
    if not p.parent.exists():
        _fail(f"{flag}: parent directory does not exist: {p.parent}", EXIT_VALIDATION)
    return p


def _read_adapter(path: Path):
    try:
        tmap = read_container_file(path)
        adapter, warnings = adapter_from_tensor_map(tmap)
    except (errors.LoraShieldError, OSError) as exc:
        _fail(f"cannot read adapter {path}: {type(exc).__name__}: {exc}", EXIT_IO)
    for w in warnings:
        log.warning("%s: %s", path, w)
    return tmap, adapter, warnings


def _patterns(args) -> tuple[str, ...]:
    if getattr(args, "patterns", None):
        pats = tuple(p.strip() for p in args.patterns.split(",") if p.strip())
        if not pats:
            _fail("--patterns must name at least one glob", EXIT_VALIDATION)
        return pats
    return DEFAULT_TARGET_PATTERNS


def _default_workers(n_layers: int) -> int:
    try:
        import psutil

        cores = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    except ImportError:  # pragma: no cover
        cores = os.cpu_count() or 1
    return max(1, min(cores, n_layers))


def _edit_config(args) -> EditConfig:
    cfg = EditConfig(
        steps=args.steps if args.steps is not None else 10,
        tau=args.tau if args.tau is not None else 1e-5,
        eta=args.eta if args.eta is not None else 0.1,
        learning_rate=args.lr if args.lr is not None else 1e-3,
        alpha=args.alpha if args.alpha is not None else 1.0,
        seed=args.seed if args.seed is not None else 0,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    return cfg


def cmd_edit(args, parser) -> int:
    _merge_config(args, parser)
    adapter_path = _require_file(args.adapter, "--adapter")
    base_path = _require_file(args.base, "--base")
    concept_path = _require_file(args.concept, "--concept")
    out_path = _output_path(args.out, "--out")
    report_path = Path(args.report) if args.report else Path(str(out_path) + ".report.json")
    config = _edit_config(args)

    tmap, adapter, load_warnings = _read_adapter(adapter_path)
    try:
        base = base_weights_from_tensor_map(read_container_file(base_path), str(base_path))
        spec = load_concept_spec(concept_path)
        probes = load_probe_set(_require_file(args.probes, "--probes")) if args.probes else None
    except (errors.LoraShieldError, OSError) as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_IO)

    patterns = _patterns(args)
    try:
        names = resolve_target_layers(adapter, patterns)
    except errors.NoLayersMatchedError as exc:
        _fail(str(exc), EXIT_VALIDATION)
    workers = args.workers if args.workers is not None else _default_workers(len(names))

    started = time.monotonic()
    try:
        edited, report = edit_adapter(
            adapter, base, spec, config,
            patterns=patterns, probes=probes, workers=workers,
            rank_override=args.rank,
        )
    except errors.NonFiniteLossError as exc:
        _fail(f"numerical failure: {exc}", EXIT_NUMERICAL)
    except (errors.NoLayersMatchedError, errors.MissingBaseWeightError) as exc:
        _fail(str(exc), EXIT_VALIDATION)
    except errors.LoraShieldError as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_IO)
    elapsed = time.monotonic() - started
    report.warnings = load_warnings + report.warnings

    try:
        write_container_file(patch_tensor_map(tmap, edited, list(report.layers)), out_path)
        report_path.write_text(report.to_json(canonical=True) + "\n", encoding="utf-8")
    except OSError as exc:
        _fail(f"cannot write output: {exc}", EXIT_IO)

    drift = "n/a" if report.benign_drift_max is None else f"{report.benign_drift_max:.4f}"
    print(
        f"edited {len(report.layers)} layer(s) | mean projection_shift "
        f"{report.mean_projection_shift:.4f} | max benign_drift {drift} | "
        f"{elapsed:.1f} s"
    )
    return EXIT_OK


def cmd_inspect(args, parser) -> int:
    _merge_config(args, parser)
    adapter_path = _require_file(args.adapter, "--adapter")
    _, adapter, _ = _read_adapter(adapter_path)
    rows = [
        {
            "name": layer.name,
            "shape": [layer.out_dim, layer.in_dim],
            "rank": layer.rank,
            "alpha": layer.stored_alpha,
            "dtype": layer.dtype,
        }
        for layer in (adapter.layers[n] for n in sorted(adapter.layers))
    ]
    if args.json:
        print(json.dumps({"layers": rows}, indent=2))
    else:
        print(f"{'layer':60s} {'shape':>12s} {'rank':>5s} {'alpha':>8s} {'dtype':>5s}")
        for r in rows:
            shape = "x".join(str(d) for d in r["shape"])
            print(f"{r['name']:60s} {shape:>12s} {r['rank']:>5d} {r['alpha']:>8.1f} {r['dtype']:>5s}")
    return EXIT_OK


def cmd_verify(args, parser) -> int:
    _merge_config(args, parser)
    original_path = _require_file(args.adapter, "--adapter")
    edited_path = _require_file(args.edited, "--edited")
    base_path = _require_file(args.base, "--base")
    concept_path = _require_file(args.concept, "--concept")
    probes_path = _require_file(args.probes, "--probes")
    max_shift = args.max_shift if args.max_shift is not None else 0.5
    max_drift = args.max_drift if args.max_drift is not None else 0.1
    alpha = args.alpha if args.alpha is not None else 1.0

    _, original, _ = _read_adapter(original_path)
    _, edited, _ = _read_adapter(edited_path)
    try:
        base = base_weights_from_tensor_map(read_container_file(base_path))
        spec = load_concept_spec(concept_path)
        probes = load_probe_set(probes_path)
    except (errors.LoraShieldError, OSError) as exc:
        _fail(f"{type(exc).__name__}: {exc}", EXIT_IO)

    try:
        names = resolve_target_layers(original, _patterns(args))
    except errors.NoLayersMatchedError as exc:
        _fail(str(exc), EXIT_VALIDATION)

    shifts = np.zeros(spec.k)
    drifts: list[float] = []
    for name in names:
        if name not in edited.layers:
            _fail(f"edited adapter lacks layer {name!r}", EXIT_VALIDATION)
        if name not in base.layers:
            _fail(f"base weights lack layer {name!r}", EXIT_VALIDATION)
        W = base.layers[name]
        d_orig = compose_delta(original.layers[name], original.alpha_over_rank).T
        d_edit = compose_delta(edited.layers[name], edited.alpha_over_rank).T
        for i in range(spec.k):
            shifts[i] += projection_shift(
                W, d_orig, d_edit, spec.synonyms[i], antonym_or_neutral(spec, i), alpha
            )
        for probe in probes.probes:
            drifts.append(benign_drift(W, d_orig, d_edit, probe, alpha))
    shifts /= len(names)
    mean_shift = float(np.mean(shifts))
    worst_drift = float(np.max(drifts))
    passed = mean_shift <= max_shift and worst_drift <= max_drift

    if args.format == "json":
        print(
            dumps_canonical(
                {
                    "layers": len(names),
                    "projection_shift": {"per_pair": list(shifts), "mean": mean_shift},
                    "benign_drift": {"max": worst_drift, "mean": float(np.mean(drifts))},
                    "thresholds": {"max_shift": max_shift, "max_drift": max_drift},
                    "passed": passed,
                }
            )
        )
    else:
        print(f"{'metric':30s} {'value':>12s} {'threshold':>12s}")
        print(f"{'mean projection_shift':30s} {mean_shift:>12.4f} {max_shift:>12.4f}")
        print(f"{'max benign_drift':30s} {worst_drift:>12.4f} {max_drift:>12.4f}")
        print(f"verdict: {'PASS' if passed else 'FAIL'} over {len(names)} layer(s)")
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_merge(args, parser) -> int:
    _merge_config(args, parser)
    paths = args.adapter or []
    weights = args.weight or []
    if len(paths) < 2:
        _fail("merge needs at least two --adapter paths", EXIT_VALIDATION)
    if len(weights) != len(paths):
        _fail(
            f"{len(paths)} adapter path(s) but {len(weights)} --weight value(s)",
            EXIT_VALIDATION,
        )
    out_path = _output_path(args.out, "--out")
    loaded = []
    for path, weight in zip(paths, weights):
        _, adapter, _ = _read_adapter(_require_file(path, "--adapter"))
        loaded.append((adapter, weight))
    try:
        merged = merge_adapters(loaded)
        write_container_file(adapter_to_tensor_map(merged), out_path)
    except errors.ShapeMismatchError as exc:
        _fail(f"shape conflict: {exc}", EXIT_IO)
    except OSError as exc:
        _fail(f"cannot write output: {exc}", EXIT_IO)
    print(f"merged {len(paths)} adapter(s) into {out_path} ({len(merged.layers)} layers)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorashield",
        description="Erase a target concept from a LoRA adapter without training data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file; flags override it")
        p.add_argument("--patterns", help="comma-separated layer glob patterns")

    p_edit = sub.add_parser("edit", help="edit an adapter against a concept bundle")
    common(p_edit)
    p_edit.add_argument("--adapter", help="input adapter container")
    p_edit.add_argument("--base", help="base weight container")
    p_edit.add_argument("--concept", help="concept embedding bundle")
    p_edit.add_argument("--probes", help="benign probe bundle (optional)")
    p_edit.add_argument("--out", help="output adapter path")
    p_edit.add_argument("--report", help="report JSON path (default: <out>.report.json)")
    p_edit.add_argument("--steps", type=int)
    p_edit.add_argument("--tau", type=float)
    p_edit.add_argument("--eta", type=float)
    p_edit.add_argument("--lr", type=float)
    p_edit.add_argument("--alpha", type=float)
    p_edit.add_argument("--rank", type=int, help="override the re-factorization rank")
    p_edit.add_argument("--workers", type=int)
    p_edit.add_argument("--seed", type=int)
    p_edit.set_defaults(func=cmd_edit, subparser=p_edit)

    p_inspect = sub.add_parser("inspect", help="list adapter layers")
    common(p_inspect)
    p_inspect.add_argument("--adapter", help="adapter container")
    p_inspect.add_argument("--json", action="store_true")
    p_inspect.set_defaults(func=cmd_inspect, subparser=p_inspect)

    p_verify = sub.add_parser("verify", help="recompute metrics for an edited adapter")
    common(p_verify)
    p_verify.add_argument("--adapter", help="original adapter container")
    p_verify.add_argument("--edited", help="edited adapter container")
    p_verify.add_argument("--base", help="base weight container")
    p_verify.add_argument("--concept", help="concept embedding bundle")
    p_verify.add_argument("--probes", help="benign probe bundle")
    p_verify.add_argument("--alpha", type=float)
    p_verify.add_argument("--max-shift", type=float, dest="max_shift")
    p_verify.add_argument("--max-drift", type=float, dest="max_drift")
    p_verify.add_argument("--format", choices=("text", "json"), default="text")
    p_verify.set_defaults(func=cmd_verify, subparser=p_verify)

    p_merge = sub.add_parser("merge", help="weighted merge of several adapters")
    common(p_merge)
    p_merge.add_argument("--adapter", action="append", help="adapter path (repeat)")
    p_merge.add_argument("--weight", action="append", type=float, help="weight (repeat)")
    p_merge.add_argument("--out", help="output adapter path")
    p_merge.set_defaults(func=cmd_merge, subparser=p_merge)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("LORASHIELD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, args.subparser)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
