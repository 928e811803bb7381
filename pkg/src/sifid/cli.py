"""Pipeline driver: distort, train, score, curves, classify, select, compare,
synth, rate-serve.

Every run writes its artifacts under a run directory together with a
config_echo.cfg (flat key=value, seed included) so the run can be reproduced
exactly. Config files use the same flat key=value format; command-line flags
override file values. Module errors map to stable per-class exit codes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import augment, baselines, correlation, subjective, synthgen, trainer
from . import fid as fid_mod
from .encoder import EncoderConfig, init_encoder, load_checkpoint
from .errors import ConfigInvalid, LengthMismatch, PipelineError
from .imagecore import Image, load_image

# Exit codes: 0 ok, 1 unexpected, 2 usage, 3 missing file/dir, then one stable
# code per error class. Append-only list — never reorder or insert.
_ERROR_ORDER = (
    "UnsupportedFormat",
    "CorruptData",
    "ZeroDimension",
    "EvenKernel",
    "KernelLargerThanImage",
    "HueOutOfRange",
    "EmptyInputDir",
    "WriteFailure",
    "InvalidConfig",
    "ShapeMismatch",
    "EmptyBatch",
    "StaleCache",
    "FormatMismatch",
    "DimensionHeaderInvalid",
    "ZeroVector",
    "LengthMismatch",
    "NonFiniteGradient",
    "EmptyTrainDir",
    "DivergenceDetected",
    "TooFewSamples",
    "NonFiniteFeature",
    "NotSymmetric",
    "EigenFailure",
    "DimensionMismatch",
    "ImageTooSmall",
    "TooFewPristine",
    "NoQualifyingPatches",
    "ZeroVariance",
    "TooFewRatings",
    "ParseError",
    "DuplicateRating",
    "ScoreOutOfRange",
    "NoRatingsForImage",
    "MissingSubjective",
    "EmptyTestSet",
    "IncompleteCurve",
    "NoPositiveNoise",
    "IncompleteScores",
    "DegenerateQuad",
    "SourceTooSmall",
    "TooFewSources",
    "DuplicateSession",
    "UnknownBundle",
    "UnknownSession",
    "UnknownImage",
    "OutOfOrderSubmission",
    "SessionComplete",
    "NothingToExport",
    "ConfigInvalid",
)
ERROR_CODES = {name: 10 + i for i, name in enumerate(_ERROR_ORDER)}

RUN_ROOT_ENV = "SIFID_RUN_ROOT"

_FR_METRICS = ("mse", "psnr", "ssim")
_NR_METRICS = ("ag", "sf", "niqe")
_SET_METRICS = ("fid", "sifid")


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigInvalid(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigInvalid(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(raw: str, target_type) -> object:
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigInvalid(f"expected a boolean, got {raw!r}")
    if target_type is list:
        return [part.strip() for part in raw.split(",") if part.strip()]
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"cannot parse {raw!r} as {target_type.__name__}") from exc


class _Unset:
    def __repr__(self):
        return "<unset>"


_UNSET = _Unset()


def _resolve(args: argparse.Namespace, option_types: dict[str, tuple]) -> dict:
    """Fill unset options from --config file values, then hard defaults."""
    config = {}
    config_path = getattr(args, "config", None)
    if config_path is not None and config_path is not _UNSET:
        config = parse_config_file(config_path)
    resolved = {}
    for dest, (target_type, default) in option_types.items():
        value = getattr(args, dest, _UNSET)
        if value is _UNSET or value is None:
            if dest in config:
                value = _coerce(config[dest], target_type)
            else:
                value = default
        setattr(args, dest, value)
        resolved[dest] = value
    unknown = set(config) - set(option_types)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    return resolved


def _run_dir(args, command: str) -> Path:
    if getattr(args, "out", None):
        run_dir = Path(args.out)
    else:
        root = os.environ.get(RUN_ROOT_ENV, "runs")
        run_dir = Path(root) / command
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_echo(run_dir: Path, command: str, resolved: dict) -> None:
    lines = [f"command={command}"]
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    (run_dir / "config_echo.cfg").write_text("\n".join(lines) + "\n")


def _load_subjective_csv(path) -> dict[str, float]:
    import csv

    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[row["image_id"]] = float(row["subjective_score"])
    return out


def _encoder_for_scoring(args):
    if getattr(args, "checkpoint", None):
        enc, _meta = load_checkpoint(args.checkpoint)
        return enc
    return init_encoder(EncoderConfig())


# ---------------------------------------------------------------------------
# subcommands


def cmd_distort(args) -> int:
    resolved = _resolve(
        args,
        {
            "input": (str, None),
            "out": (str, None),
            "seed": (int, 0),
            "jobs": (int, 1),
        },
    )
    if not args.input:
        raise ConfigInvalid("distort requires --input")
    run_dir = _run_dir(args, "distort")
    manifest = augment.build_distorted_set(
        args.input, augment.CATALOG, args.seed, run_dir, jobs=args.jobs
    )
    _write_echo(run_dir, "distort", resolved)
    print(f"wrote {len(manifest)} distorted images to {run_dir}")
    return 0


def cmd_train(args) -> int:
    resolved = _resolve(
        args,
        {
            "train_dir": (str, None),
            "noise": (str, "colorjitter_b0.5_h0.3"),
            "epochs": (int, 100),
            "batch_size": (int, 32),
            "learning_rate": (float, 0.01),
            "momentum": (float, 0.9),
            "seed": (int, 0),
            "loss_mode": (str, "attract"),
            "input_side": (int, 64),
            "feature_dim": (int, 64),
            "out": (str, None),
        },
    )
    if not args.train_dir:
        raise ConfigInvalid("train requires --train-dir")
    try:
        noise = augment.catalog_by_tag(args.noise)
    except KeyError as exc:
        raise ConfigInvalid(str(exc)) from exc
    cfg = trainer.TrainConfig(
        noise=noise,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        seed=args.seed,
        loss_mode=args.loss_mode,
        encoder=EncoderConfig(
            input_side=args.input_side,
            feature_dim=args.feature_dim,
            init_seed=args.seed,
        ),
    )
    run_dir = _run_dir(args, "train")
    series = trainer.train(args.train_dir, cfg)
    series.save(run_dir)
    _write_echo(run_dir, "train", resolved)
    print(
        f"trained {cfg.epochs} epochs with {noise.tag}; "
        f"final loss {series.losses[-1]:.6f}; checkpoints in {run_dir}"
    )
    return 0


def _score_rows_bundle(args, metric: str) -> list[tuple[str, float]]:
    bundle = synthgen.load_bundle(args.bundle)
    rows: list[tuple[str, float]] = []
    if metric in _SET_METRICS:
        enc = _encoder_for_scoring(args)
        for group in bundle.groups:
            refs = [bundle.images[i] for i in group.reference_ids]
            sts = [bundle.images[i] for i in group.stitched_ids]
            rows.append((group.group_id, fid_mod.score_stitched(refs, sts, enc)))
        return rows
    model = _niqe_model(args) if metric == "niqe" else None
    for sid in bundle.stitched_ids:
        img = bundle.images[sid]
        if metric in _FR_METRICS:
            ref = bundle.images[bundle.source_ids[sid]]
            rows.append((sid, _fr_metric(metric, ref, img)))
        else:
            rows.append((sid, _nr_metric(metric, img, model)))
    return rows


def _score_rows_dirs(args, metric: str) -> list[tuple[str, float]]:
    sts = augment.list_images(args.stitched)
    if not sts:
        raise ConfigInvalid(f"no images under {args.stitched}")
    rows: list[tuple[str, float]] = []
    if metric in _SET_METRICS:
        refs = augment.list_images(args.references) if args.references else []
        if not refs:
            raise ConfigInvalid(f"{metric} requires --references")
        enc = _encoder_for_scoring(args)
        score = fid_mod.score_stitched(
            [load_image(p) for p in refs], [load_image(p) for p in sts], enc
        )
        return [("set", score)]
    if metric in _FR_METRICS:
        refs = augment.list_images(args.references) if args.references else []
        if len(refs) != len(sts):
            raise LengthMismatch(
                f"{len(refs)} reference vs {len(sts)} stitched images; "
                "full-reference metrics pair them by sorted order"
            )
        for ref_path, st_path in zip(refs, sts):
            rows.append(
                (st_path.stem, _fr_metric(metric, load_image(ref_path), load_image(st_path)))
            )
        return rows
    model = _niqe_model(args) if metric == "niqe" else None
    for st_path in sts:
        rows.append((st_path.stem, _nr_metric(metric, load_image(st_path), model)))
    return rows


def _fr_metric(metric: str, ref: Image, img: Image) -> float:
    if metric == "mse":
        return baselines.mse(ref, img)
    if metric == "psnr":
        return baselines.psnr(ref, img)
    return baselines.ssim(ref, img)


def _nr_metric(metric: str, img: Image, model) -> float:
    if metric == "ag":
        return baselines.average_gradient(img)
    if metric == "sf":
        return baselines.spatial_frequency(img)
    return baselines.niqe_score(img, model)


def _niqe_model(args):
    if getattr(args, "niqe_model", None):
        return baselines.load_niqe_model(args.niqe_model)
    if getattr(args, "pristine", None):
        return baselines.niqe_fit(args.pristine)
    raise ConfigInvalid("niqe requires --niqe-model or --pristine")


def cmd_score(args) -> int:
    resolved = _resolve(
        args,
        {
            "bundle": (str, None),
            "references": (str, None),
            "stitched": (str, None),
            "metric": (str, None),
            "checkpoint": (str, None),
            "niqe_model": (str, None),
            "pristine": (str, None),
            "out": (str, None),
        },
    )
    metric = args.metric
    if metric not in _FR_METRICS + _NR_METRICS + _SET_METRICS:
        raise ConfigInvalid(f"unknown metric {metric!r}")
    if metric == "sifid" and not args.checkpoint:
        raise ConfigInvalid("sifid requires --checkpoint (select one first)")
    if args.bundle:
        rows = _score_rows_bundle(args, metric)
    elif args.stitched:
        rows = _score_rows_dirs(args, metric)
    else:
        raise ConfigInvalid("score requires --bundle or --stitched")

    run_dir = _run_dir(args, "score")
    orientation = baselines.ORIENTATIONS[metric]
    import csv

    with open(run_dir / "scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "metric_name", "value", "orientation"])
        for image_id, value in rows:
            writer.writerow([image_id, metric, f"{value:.17g}", orientation])
    records = [
        {
            "image_id": image_id,
            "metric": metric,
            "value": None if np.isinf(value) else value,
            "infinite": bool(np.isinf(value)),
            "orientation": orientation,
        }
        for image_id, value in rows
    ]
    (run_dir / "scores.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    _write_echo(run_dir, "score", resolved)
    for image_id, value in rows:
        print(f"{image_id}\t{metric}\t{value:.6g}")
    return 0


def cmd_curves(args) -> int:
    resolved = _resolve(
        args,
        {
            "bundle": (str, None),
            "ckpt_dir": (str, None),
            "noise": (str, None),
            "all_noises": (bool, False),
            "subjective": (str, None),
            "out": (str, None),
            "jobs": (int, 1),
        },
    )
    if not args.bundle or not args.ckpt_dir:
        raise ConfigInvalid("curves requires --bundle and --ckpt-dir")
    if not args.all_noises and not args.noise:
        raise ConfigInvalid("curves requires --noise TAG or --all-noises")
    bundle = synthgen.load_bundle(args.bundle)
    subj = (
        _load_subjective_csv(args.subjective) if args.subjective else bundle.subjective
    )
    tags = (
        [spec.tag for spec in augment.CATALOG] if args.all_noises else [args.noise]
    )
    run_dir = _run_dir(args, "curves")

    def _one(tag: str) -> Path:
        series = trainer.load_series(args.ckpt_dir, tag)
        curve = correlation.build_curve(series, bundle, subj)
        path = run_dir / f"{tag}_curve.csv"
        correlation.write_curve_csv(curve, path)
        return path

    if args.jobs > 1 and len(tags) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            paths = list(pool.map(_one, tags))
    else:
        paths = [_one(tag) for tag in tags]
    _write_echo(run_dir, "curves", resolved)
    for path in paths:
        print(f"wrote {path}")
    return 0


def _read_curves_dir(curves_dir) -> list[correlation.CorrelationCurve]:
    paths = sorted(Path(curves_dir).glob("*_curve.csv"))
    if not paths:
        raise ConfigInvalid(f"no *_curve.csv files under {curves_dir}")
    return [correlation.read_curve_csv(p) for p in paths]


def cmd_classify(args) -> int:
    resolved = _resolve(args, {"curves_dir": (str, None), "out": (str, None)})
    if not args.curves_dir:
        raise ConfigInvalid("classify requires --curves-dir")
    curves = _read_curves_dir(args.curves_dir)
    verdicts = [correlation.classify_noise(c) for c in curves]
    run_dir = _run_dir(args, "classify")
    correlation.write_verdicts_json(verdicts, run_dir / "verdicts.json")
    _write_echo(run_dir, "classify", resolved)
    for v in verdicts:
        print(
            f"{v.noise.tag}\t{v.label}\tslope={v.slope:+.5f}\t"
            f"gain={v.final_gain:+.5f}\trough={v.roughness:.5f}"
        )
    return 0


def cmd_select(args) -> int:
    resolved = _resolve(args, {"curves_dir": (str, None), "out": (str, None)})
    if not args.curves_dir:
        raise ConfigInvalid("select requires --curves-dir")
    curves = _read_curves_dir(args.curves_dir)
    selection = correlation.select_si_fid(curves)
    run_dir = _run_dir(args, "select")
    payload = {
        "noise_tag": selection.noise.tag,
        "epoch": selection.epoch,
        "checkpoint_name": selection.checkpoint_name,
        "verdict": correlation.verdict_to_dict(selection.verdict),
    }
    (run_dir / "selection.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_echo(run_dir, "select", resolved)
    print(f"selected {selection.noise.tag} epoch {selection.epoch} ({selection.checkpoint_name})")
    return 0


def cmd_compare(args) -> int:
    resolved = _resolve(
        args,
        {
            "bundle": (str, None),
            "scores": (list, []),
            "subjective": (str, None),
            "out": (str, None),
        },
    )
    if not args.bundle:
        raise ConfigInvalid("compare requires --bundle")
    if not args.scores:
        raise ConfigInvalid("compare requires at least one --scores CSV")
    bundle = synthgen.load_bundle(args.bundle)
    subj_by_image = (
        _load_subjective_csv(args.subjective) if args.subjective else bundle.subjective
    )
    merged: dict[str, dict[str, float]] = {}
    orientations: dict[str, str] = {}
    for path in args.scores:
        scores, orients = baselines.read_external_scores(path)
        for metric, per_image in scores.items():
            merged.setdefault(metric, {}).update(per_image)
        orientations.update(orients)

    group_scores: dict[str, dict[str, list[float]]] = {}
    group_subj: dict[str, list[float]] = {}
    from .errors import IncompleteScores, MissingSubjective

    for group in bundle.groups:
        subj_vec = []
        for sid in group.stitched_ids:
            if sid not in subj_by_image:
                raise MissingSubjective(f"no subjective score for {sid!r}")
            subj_vec.append(subj_by_image[sid])
        group_subj[group.group_id] = subj_vec
        for metric, per_image in merged.items():
            vec = []
            for sid in group.stitched_ids:
                if sid not in per_image:
                    raise IncompleteScores(f"metric {metric!r} missing image {sid!r}")
                vec.append(per_image[sid])
            group_scores.setdefault(metric, {})[group.group_id] = vec

    report = correlation.compare_indicators(group_scores, group_subj, orientations)
    run_dir = _run_dir(args, "compare")
    correlation.write_report_json(report, run_dir / "report.json")
    _write_echo(run_dir, "compare", resolved)
    for metric in sorted(report, key=lambda m: report[m]["rank"]):
        entry = report[metric]
        print(
            f"#{entry['rank']}\t{metric}\tmean_srocc={entry['mean_srocc']:+.4f}\t"
            f"mean_pcc={entry['mean_pcc']:+.4f}\tvar_srocc={entry['var_srocc']:.5f}"
        )
    return 0


def cmd_synth(args) -> int:
    resolved = _resolve(
        args,
        {
            "sources": (str, None),
            "out": (str, None),
            "seed": (int, 0),
            "jitter": (float, 3.0),
        },
    )
    if not args.sources:
        raise ConfigInvalid("synth requires --sources")
    paths = augment.list_images(args.sources)
    images = [load_image(p) for p in paths]
    bundle = synthgen.build_severity_ladder(images, args.seed, jitter_amplitude=args.jitter)
    run_dir = _run_dir(args, "synth")
    synthgen.write_bundle(bundle, run_dir)
    _write_echo(run_dir, "synth", resolved)
    print(
        f"bundle with {len(bundle.reference_ids)} references and "
        f"{len(bundle.stitched_ids)} stitched images in {run_dir}"
    )
    return 0


def cmd_rate_serve(args) -> int:
    resolved = _resolve(
        args,
        {
            "images": (list, []),
            "log": (str, None),
            "host": (str, "127.0.0.1"),
            "port": (int, 8008),
            "out": (str, None),
        },
    )
    if not args.images:
        raise ConfigInvalid("rate-serve requires at least one --images bundle_id=dir")
    run_dir = _run_dir(args, "rate-serve")
    log_path = Path(args.log) if args.log else run_dir / "ratings.ndjson"
    from .rating_service import RatingStore, create_app

    store = RatingStore(log_path)
    for entry in args.images:
        if "=" not in entry:
            raise ConfigInvalid(f"--images expects bundle_id=dir, got {entry!r}")
        bundle_id, _, image_dir = entry.partition("=")
        store.register_bundle(bundle_id, image_dir)
    _write_echo(run_dir, "rate-serve", resolved)
    import uvicorn

    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add(parser: argparse.ArgumentParser, *names, **kwargs) -> None:
    kwargs.setdefault("default", _UNSET)
    parser.add_argument(*names, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sifid", description="stitched-image quality assessment pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distort", help="apply the 14-transform catalog to a corpus")
    _add(p, "--config")
    _add(p, "--input")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--jobs", type=int)
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("train", help="fine-tune the encoder under one noise")
    _add(p, "--config")
    _add(p, "--train-dir", dest="train_dir")
    _add(p, "--noise")
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", dest="batch_size", type=int)
    _add(p, "--lr", dest="learning_rate", type=float)
    _add(p, "--momentum", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--loss-mode", dest="loss_mode")
    _add(p, "--input-side", dest="input_side", type=int)
    _add(p, "--feature-dim", dest="feature_dim", type=int)
    _add(p, "--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score stitched images with one metric")
    _add(p, "--config")
    _add(p, "--bundle")
    _add(p, "--references")
    _add(p, "--stitched")
    _add(p, "--metric")
    _add(p, "--checkpoint")
    _add(p, "--niqe-model", dest="niqe_model")
    _add(p, "--pristine")
    _add(p, "--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("curves", help="correlation curves per checkpoint epoch")
    _add(p, "--config")
    _add(p, "--bundle")
    _add(p, "--ckpt-dir", dest="ckpt_dir")
    _add(p, "--noise")
    _add(p, "--all-noises", dest="all_noises", action="store_true")
    _add(p, "--subjective")
    _add(p, "--out")
    _add(p, "--jobs", type=int)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("classify", help="positive/negative verdict per curve")
    _add(p, "--config")
    _add(p, "--curves-dir", dest="curves_dir")
    _add(p, "--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("select", help="pick the selected indicator checkpoint")
    _add(p, "--config")
    _add(p, "--curves-dir", dest="curves_dir")
    _add(p, "--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("compare", help="rank indicators by rank correlation")
    _add(p, "--config")
    _add(p, "--bundle")
    p.add_argument("--scores", action="append", default=None)
    _add(p, "--subjective")
    _add(p, "--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a severity-ladder bundle")
    _add(p, "--config")
    _add(p, "--sources")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--jitter", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rate-serve", help="serve the rating HTTP API")
    _add(p, "--config")
    p.add_argument("--images", action="append", default=None)
    _add(p, "--log")
    _add(p, "--host")
    _add(p, "--port", type=int)
    _add(p, "--out")
    p.set_defaults(func=cmd_rate_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except PipelineError as exc:
        name = type(exc).__name__
        print(f"error[{name}]: {exc}", file=sys.stderr)
        return ERROR_CODES.get(name, 1)
    except FileNotFoundError as exc:
        print(f"error[FileNotFound]: {exc}", file=sys.stderr)
        return 3
    except KeyError as exc:
        print(f"error[ConfigInvalid]: {exc}", file=sys.stderr)
        return ERROR_CODES["ConfigInvalid"]


if __name__ == "__main__":
    sys.exit(main())
