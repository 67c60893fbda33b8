"""Command-line entry point: ``historynet <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .config import ABLATIONS, ConfigError, load_config, schema_help
from .data.build import FilterConfig, build_manifest, list_images, read_labels
from .data.filters import ExternalProcessDetector, StubDetector
from .data.manifest import DatasetManifest, ManifestError
from .data.parsing import Palette, ParsingValidationError
from .data.taxonomy import DEFAULT_TAXONOMY, LabelTaxonomy, TaxonomyError

log = logging.getLogger("historynet")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not force:
        raise CliError(f"output directory {out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out: Path, args: argparse.Namespace) -> None:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    (out / "invocation.json").write_text(json.dumps(d, indent=1, sort_keys=True, default=str) + "\n")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- subcommands --------------------------------------------------------------

def cmd_dataset_build(args) -> int:
    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise CliError(f"image directory {image_dir} is not readable")
    if not list_images(image_dir):
        raise CliError(f"no images found in {image_dir}")
    out = _prepare_out(args.out, args.force)
    _echo(out, args)
    taxonomy = LabelTaxonomy.load(args.taxonomy)
    labels = read_labels(Path(args.labels), taxonomy) if args.labels else None
    if args.detector == "none":
        detector = None
    elif args.detector == "stub":
        detector = StubDetector()
    else:
        detector = ExternalProcessDetector(args.detector_command or "")
    filters = FilterConfig(saturation_threshold=args.saturation_threshold, max_persons=args.max_persons,
                           min_laplacian_variance=args.blur_threshold)
    palette = Palette.load(args.palette) if args.palette else None
    manifest, build_log = build_manifest(
        image_dir, taxonomy, relative_to=out, filters=filters, detector=detector, labels=labels,
        parsing_dir=args.parsing_dir, palette=palette, test_fraction=args.test_fraction, seed=args.seed,
    )
    if isinstance(detector, ExternalProcessDetector):
        detector.close()
    if args.bootstrap and manifest.records:
        from .data.bootstrap import ResNetTrainer, bootstrap_labels

        manifest = bootstrap_labels(manifest, ResNetTrainer(seed=args.seed))
    manifest.save(out / "manifest.jsonl")
    (out / "filter_log.json").write_text(json.dumps(build_log.to_dict(), indent=1) + "\n")
    counts = build_log.counts()
    print(f"kept {counts.get('kept', 0)} of {len(build_log.decisions)} images")
    for k, v in counts.items():
        if k != "kept":
            print(f"  {k}: {v}")
    return EXIT_OK


def cmd_dataset_stats(args) -> int:
    from .data.stats import dataset_stats, format_stats

    manifest = DatasetManifest.load(args.manifest)
    stats = dataset_stats(manifest)
    d = stats.to_dict()
    if args.hue_bins:
        h = stats.hue_histogram(args.hue_bins)
        d["hue_histogram"] = {"edges": h.edges.tolist(), "frequencies": h.frequencies.tolist(),
                              "sample_count": h.sample_count}
    print(json.dumps(d, indent=1) if args.json else format_stats(stats))
    if args.out:
        out = _prepare_out(args.out, args.force)
        _echo(out, args)
        (out / "stats.json").write_text(json.dumps(d, indent=1) + "\n")
    return EXIT_OK


def _train_common(args, preset: str | None) -> int:
    from .training import NonFiniteLossError, TrainingDataError, train

    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if preset is not None:
        overrides["ablation"] = preset
    config = load_config(args.config, overrides)
    manifest = DatasetManifest.load(args.manifest)
    out = _prepare_out(args.out, args.force)
    _echo(out, args)
    (out / "config.txt").write_text(config.echo())
    try:
        result = train(config, manifest, out, resume_from=args.resume)
    except NonFiniteLossError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from exc
    except TrainingDataError as exc:
        raise CliError(str(exc)) from exc
    print(f"trained {result.state.step} generator steps; checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _train_common(args, None)


def cmd_ablate(args) -> int:
    return _train_common(args, args.preset)


def _gather_inputs(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg"))
        else:
            files.append(p)
    return files


def _triptych(gray: np.ndarray, colored: np.ndarray, original: np.ndarray | None) -> np.ndarray:
    panels = [np.repeat(gray[..., None], 3, axis=-1), colored]
    if original is not None:
        panels.append(original)
    return np.concatenate(panels, axis=1)


def cmd_colorize(args) -> int:
    from .colorspace import lab_to_rgb, rgb_to_lab, to_uint8
    from .inference import colorize, load_generator

    gen, _ = load_generator(args.checkpoint)
    files = _gather_inputs(args.inputs)
    out = _prepare_out(args.out, args.force)
    _echo(out, args)
    written = 0
    for path in files:
        try:
            with Image.open(path) as im:
                is_gray = im.mode in ("L", "LA", "I", "I;16", "1")
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        colored = colorize(gen, rgb)
        L = rgb_to_lab(rgb)[..., 0]
        gray = lab_to_rgb(np.stack([L, np.zeros_like(L), np.zeros_like(L)], axis=-1))[..., 0]
        Image.fromarray(to_uint8(colored)).save(out / f"{path.stem}.png")
        trip = _triptych(gray, colored, None if is_gray else rgb)
        Image.fromarray(to_uint8(trip)).save(out / f"{path.stem}_triptych.png")
        written += 1
    if written == 0:
        raise CliError("no readable input images")
    print(f"colorized {written} of {len(files)} images into {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import PUBLISHED_COMPARISON, CheckpointMismatchError, evaluate, make_backend

    manifest = DatasetManifest.load(args.manifest)
    out = _prepare_out(args.out, args.force)
    _echo(out, args)
    try:
        backend = make_backend(args.perceptual_backend, seed=args.seed)
        report = evaluate(args.checkpoint, manifest, args.split, backend)
    except CheckpointMismatchError as exc:
        raise CliError(str(exc)) from exc
    rows = PUBLISHED_COMPARISON if args.with_reference else None
    table = report.to_table({f"{k} (published)": v for k, v in rows.items()} if rows else None)
    (out / "metrics.txt").write_text(table + "\n")
    (out / "metrics.json").write_text(report.to_json() + "\n")
    print(table)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

TRAIN_EPILOG = "config keys (file lines 'key = value', or --set key=value):\n" + schema_help()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="historynet", description="Person-focused image colorisation pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    b = sub.add_parser("dataset-build", help="filter a frame directory into a manifest", formatter_class=fmt,
                       epilog="writes manifest.jsonl, filter_log.json and invocation.json into --out")
    b.add_argument("--images", required=True, help="directory of still frames (.png/.jpg)")
    b.add_argument("--out", required=True)
    b.add_argument("--taxonomy", default=str(DEFAULT_TAXONOMY))
    b.add_argument("--labels", help="CSV filename,label for manually labelled frames "
                                    "(default: labels.csv inside --images if present)")
    b.add_argument("--parsing-dir", help="ground-truth parsing maps named like the frames")
    b.add_argument("--palette", help="parsing palette file (default: shipped palette)")
    b.add_argument("--saturation-threshold", type=float, default=0.1)
    b.add_argument("--max-persons", type=int, default=6)
    b.add_argument("--blur-threshold", type=float, default=None,
                   help="minimum variance of Laplacian; gate disabled when omitted")
    b.add_argument("--detector", choices=("stub", "none", "external"), default="stub")
    b.add_argument("--detector-command", help="child process for --detector external")
    b.add_argument("--test-fraction", type=float, default=0.1)
    b.add_argument("--bootstrap", action="store_true", help="pseudo-label unlabelled frames")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--force", action="store_true")
    b.set_defaults(func=cmd_dataset_build)

    s = sub.add_parser("dataset-stats", help="per-label counts and split sizes of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--json", action="store_true")
    s.add_argument("--hue-bins", type=int, default=0, help="also compute a hue histogram with this many bins")
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_dataset_stats)

    for name, helptext in (("train", "train a model"), ("ablate", "train under an ablation preset")):
        t = sub.add_parser(name, help=helptext, formatter_class=fmt, epilog=TRAIN_EPILOG)
        t.add_argument("--manifest", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--config", help="key = value config file")
        t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        t.add_argument("--seed", type=int)
        t.add_argument("--resume", help="checkpoint directory to continue from")
        t.add_argument("--force", action="store_true")
        if name == "ablate":
            t.add_argument("--preset", required=True, choices=sorted(ABLATIONS))
            t.set_defaults(func=cmd_ablate)
        else:
            t.set_defaults(func=cmd_train)

    c = sub.add_parser("colorize", help="colorise images with a trained checkpoint",
                       epilog="writes <name>.png and <name>_triptych.png (gray | colorized | original)")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("inputs", nargs="+", help="image files or directories")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--force", action="store_true")
    c.set_defaults(func=cmd_colorize)

    e = sub.add_parser("evaluate", help="LPIPS / PSNR / SSIM on a manifest split",
                       epilog="writes metrics.txt (table) and metrics.json with identical numbers")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--perceptual-backend", default="fallback", choices=("fallback", "lpips"))
    e.add_argument("--with-reference", action="store_true", help="include published reference rows")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None:
        import torch

        torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ManifestError, TaxonomyError, ParsingValidationError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
