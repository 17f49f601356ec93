"""Command-line surface for detection, the field codec, pseudo-labeling,
synthesis, evaluation, and SVG rendering.

Exit codes: 0 success (including zero detections), 1 usage/config error,
2 I/O error, 3 malformed field payload or size mismatch. Every command is
deterministic given (inputs, config, seed); the seed is surfaced in all
JSON headers.
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .classic_lsd import lsd_detect
from .config import (
    Config,
    ConfigError,
    apply_overrides,
    config_to_text,
    load_config,
)
from .evalkit import aggregate, build_pairs, evaluate_pair
from .geometry import Homography, LineSegment, Point2
from .hatfield import (
    DecodeParams,
    DetectionResult,
    FieldFormatError,
    deserialize_field,
    deserialize_junctions,
    encode,
    serialize_field,
    serialize_junctions,
    sparse_decode,
)
from .pseudolabel import (
    FieldProvider,
    FileFieldProvider,
    GradientFieldProvider,
    GtFieldProvider,
    ProviderError,
    generate_pseudo_labels,
    homographic_adaptation,
)
from .raster import GrayImage, ImageIOError, load_image, png_bytes, save_image
from .synth import PRIMITIVE_KINDS, PrimitiveSpec, render_synthetic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_FORMAT = 3
ENV_CONFIG = "LINEFIELD_CONFIG"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors (2 is reserved for I/O)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_config(args, decode_default: DecodeParams | None = None) -> Config:
    base = Config() if decode_default is None else Config(decode=decode_default)
    path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    cfg = base
    if path:
        try:
            cfg = load_config(path, base)
        except OSError as e:
            raise CliError(f"cannot read config {path}: {e}", EXIT_IO) from e
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _read_image(path) -> GrayImage:
    try:
        return load_image(path)
    except ImageIOError as e:
        raise CliError(str(e), EXIT_IO) from e


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e}", EXIT_IO) from e


def _write_bytes(path, blob: bytes) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(blob)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO) from e


def _write_text(path, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


def _junctions_path(field_path, explicit) -> Path:
    return Path(explicit) if explicit else Path(field_path).with_suffix(".junc")


def _load_field_files(field_path, junctions_path):
    try:
        f = deserialize_field(_read_bytes(field_path))
        jm = deserialize_junctions(_read_bytes(junctions_path))
    except FieldFormatError as e:
        raise CliError(f"malformed field payload: {e}", EXIT_FORMAT) from e
    if f.shape != jm.shape:
        raise CliError(
            f"field {f.shape} and junction map {jm.shape} dimensions differ", EXIT_FORMAT
        )
    return f, jm


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h_s, w_s = text.lower().split("x")
        h, w = int(h_s), int(w_s)
    except ValueError as e:
        raise CliError(f"--size expects HxW, got {text!r}") from e
    if h <= 0 or w <= 0:
        raise CliError(f"--size must be positive, got {text!r}")
    return h, w


def segments_to_json(segments: list[LineSegment]) -> list[dict]:
    return [
        {"p0": [s.p0.x, s.p0.y], "p1": [s.p1.x, s.p1.y]} for s in segments
    ]


def segments_from_json(doc) -> list[LineSegment]:
    entries = doc["segments"] if isinstance(doc, dict) else doc
    out = []
    for e in entries:
        out.append(LineSegment(Point2(*map(float, e["p0"])), Point2(*map(float, e["p1"]))))
    return out


def load_gt_sidecar(path) -> list[LineSegment]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise CliError(f"cannot read {path}: {e}", EXIT_IO) from e
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON: {e}", EXIT_FORMAT) from e
    return segments_from_json(doc)


_SCORE_KIND = {
    "lsd": "nfa_log10",
    "field": "support_pixels",
    "rectifier": "support_pixels",
    "homographic_adaptation": "support_pixels",
}


def detection_to_json_dict(
    det: DetectionResult,
    image_name: str,
    seed: int,
    image_size: tuple[int, int] | None = None,
    params: dict | None = None,
    provenance: bool = False,
) -> dict:
    doc: dict = {"image": image_name}
    if provenance:
        doc["source"] = det.source
        doc["params"] = params or {}
    doc["segments"] = [
        {"p0": [s.p0.x, s.p0.y], "p1": [s.p1.x, s.p1.y], "score": float(c)}
        for s, c in zip(det.segments, det.confidence)
    ]
    meta = {
        "method": det.source,
        "score_kind": _SCORE_KIND.get(det.source, "unknown"),
        "seed": seed,
        "count": len(det),
    }
    if image_size is not None:
        meta["image_size"] = [int(image_size[0]), int(image_size[1])]
    if params is not None:
        meta["params"] = params
    doc["meta"] = meta
    return doc


def detection_from_json_dict(doc: dict) -> DetectionResult:
    segments = []
    confidence = []
    for e in doc.get("segments", []):
        segments.append(LineSegment(Point2(*map(float, e["p0"])), Point2(*map(float, e["p1"]))))
        confidence.append(float(e.get("score", 0.0)))
    return DetectionResult(segments, confidence, source=doc.get("meta", {}).get("method", "field"))


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _params_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# ---------------------------------------------------------------------------
# SVG rendering


def render_svg(
    det: DetectionResult, image: GrayImage | None = None, size: tuple[int, int] | None = None
) -> str:
    """One path per segment, stroke width 1, confidence mapped to opacity."""
    if image is not None:
        h, w = image.shape
    elif size is not None:
        h, w = size
    elif det.segments:
        xs = [v for s in det.segments for v in (s.p0.x, s.p1.x)]
        ys = [v for s in det.segments for v in (s.p0.y, s.p1.y)]
        w = int(math.ceil(max(xs))) + 2
        h = int(math.ceil(max(ys))) + 2
    else:
        h = w = 64
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'viewBox="0 0 {w} {h}" width="{w}" height="{h}">',
    ]
    if image is not None:
        b64 = base64.b64encode(png_bytes(image)).decode("ascii")
        parts.append(
            f'  <image x="0" y="0" width="{w}" height="{h}" '
            f'xlink:href="data:image/png;base64,{b64}"/>'
        )
    max_conf = max(det.confidence, default=0.0)
    for s, c in zip(det.segments, det.confidence):
        opacity = 1.0 if max_conf <= 0 else 0.25 + 0.75 * max(0.0, c) / max_conf
        parts.append(
            f'  <path d="M {s.p0.x + 0.5:.3f} {s.p0.y + 0.5:.3f} '
            f'L {s.p1.x + 0.5:.3f} {s.p1.y + 0.5:.3f}" '
            f'stroke="#e4002b" stroke-width="1" stroke-opacity="{opacity:.3f}" fill="none"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    img = _read_image(args.image)
    if args.method == "lsd":
        det = lsd_detect(img, cfg.lsd)
        params = _params_dict(cfg.lsd)
    else:
        if not args.field:
            raise CliError("--method field requires --field")
        f, jm = _load_field_files(args.field, _junctions_path(args.field, args.junctions))
        if f.shape != img.shape:
            raise CliError(
                f"field {f.shape} does not match image {img.shape}", EXIT_FORMAT
            )
        det = sparse_decode(f, jm, cfg.decode)
        params = _params_dict(cfg.decode)
    doc = detection_to_json_dict(
        det, str(args.image), cfg.seed, image_size=img.shape, params=params
    )
    _write_text(args.out, _dump_json(doc))
    if args.svg:
        _write_text(args.svg, render_svg(det, image=img))
    return EXIT_OK


def _cmd_encode(args) -> int:
    cfg = _resolve_config(args)
    segments = load_gt_sidecar(args.gt)
    h, w = _parse_size(args.size)
    for s in segments:
        for p in (s.p0, s.p1):
            if not (0 <= p.x <= w - 1 and 0 <= p.y <= h - 1):
                raise CliError(
                    f"segment endpoint ({p.x}, {p.y}) outside {h}x{w} canvas", EXIT_FORMAT
                )
    f, jm = encode(segments, (h, w), cfg.fg_halfwidth)
    _write_bytes(args.out, serialize_field(f))
    _write_bytes(_junctions_path(args.out, args.junctions), serialize_junctions(jm))
    return EXIT_OK


def _cmd_decode(args) -> int:
    cfg = _resolve_config(args)
    f, jm = _load_field_files(args.field, _junctions_path(args.field, args.junctions))
    det = sparse_decode(f, jm, cfg.decode)
    doc = detection_to_json_dict(
        det, "", cfg.seed, image_size=f.shape, params=_params_dict(cfg.decode)
    )
    _write_text(args.out, _dump_json(doc))
    return EXIT_OK


def _cmd_rectify(args) -> int:
    cfg = _resolve_config(args, decode_default=DecodeParams.for_pseudolabel())
    img = _read_image(args.image)
    f, jm = _load_field_files(args.field, _junctions_path(args.field, args.junctions))
    if f.shape != img.shape:
        raise CliError(f"field {f.shape} does not match image {img.shape}", EXIT_FORMAT)
    provider = FileFieldProvider(serialize_field(f), serialize_junctions(jm))
    det = generate_pseudo_labels(provider, img, cfg.decode, cfg.lsd)
    params = {"decode": _params_dict(cfg.decode), "lsd": _params_dict(cfg.lsd)}
    doc = detection_to_json_dict(
        det, str(args.image), cfg.seed, image_size=img.shape, params=params, provenance=True
    )
    _write_text(args.out, _dump_json(doc))
    return EXIT_OK


def _make_provider(spec: str, fg_halfwidth: float) -> FieldProvider:
    if spec == "gradient":
        return GradientFieldProvider()
    if spec.startswith("gt:"):
        return GtFieldProvider(load_gt_sidecar(spec[3:]), fg_halfwidth)
    if spec.startswith("files:"):
        rest = spec[len("files:") :]
        if "," in rest:
            field_path, junc_path = rest.split(",", 1)
        else:
            field_path, junc_path = rest, _junctions_path(rest, None)
        try:
            return FileFieldProvider.from_paths(field_path, junc_path)
        except OSError as e:
            raise CliError(f"cannot read provider files: {e}", EXIT_IO) from e
        except (FieldFormatError, ProviderError) as e:
            raise CliError(f"malformed provider files: {e}", EXIT_FORMAT) from e
    raise CliError(f"unknown provider spec {spec!r} (use gradient, gt:PATH, files:PATH)")


def _cmd_adapt(args) -> int:
    cfg = _resolve_config(args, decode_default=DecodeParams.for_pseudolabel())
    img = _read_image(args.image)
    provider = _make_provider(args.provider, cfg.fg_halfwidth)
    n_iters = args.iters if args.iters is not None else cfg.adapt.n_iters
    if isinstance(provider, FileFieldProvider) and n_iters > 1:
        raise CliError("files: provider cannot serve warped frames; use --iters 1")
    adapt = dataclasses.replace(cfg.adapt, n_iters=n_iters)
    t0 = time.perf_counter()
    det = homographic_adaptation(provider, img, adapt, cfg.decode, seed=cfg.seed)
    elapsed = time.perf_counter() - t0
    params = {
        "n_iters": adapt.n_iters,
        "score_threshold": adapt.score_threshold,
        "sample": _params_dict(adapt.sample_params),
        "decode": _params_dict(cfg.decode),
        "provider": args.provider,
    }
    doc = detection_to_json_dict(
        det, str(args.image), cfg.seed, image_size=img.shape, params=params, provenance=True
    )
    _write_text(args.out, _dump_json(doc))
    print(f"adapt_seconds {elapsed:.3f}")
    return EXIT_OK


def _synth_one(task) -> str:
    out_dir, kind, index, seed, size, noise = task
    spec = PrimitiveSpec(kind=kind, height=size[0], width=size[1], noise_sigma=noise)
    img, gt = render_synthetic(spec, seed)
    stem = f"{kind}_{index:04d}"
    save_image(img, Path(out_dir) / f"{stem}.pgm")
    with open(Path(out_dir) / f"{stem}.json", "w", encoding="utf-8") as f:
        f.write(_dump_json(segments_to_json(gt)))
    return stem


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    if args.kind != "all" and args.kind not in PRIMITIVE_KINDS:
        raise CliError(f"unknown kind {args.kind!r}; choose from {PRIMITIVE_KINDS} or 'all'")
    size = _parse_size(args.size)
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {args.out}: {e}", EXIT_IO) from e
    tasks = []
    for i in range(args.count):
        kind = PRIMITIVE_KINDS[i % len(PRIMITIVE_KINDS)] if args.kind == "all" else args.kind
        tasks.append((args.out, kind, i, cfg.seed + i, size, args.noise))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_synth_one, tasks))
    else:
        for t in tasks:
            _synth_one(t)
    return EXIT_OK


def _eval_pair_worker(task):
    pair, lsd_params, k = task
    det_a = lsd_detect(pair.img_a, lsd_params)
    det_b = lsd_detect(pair.img_b, lsd_params)
    return evaluate_pair(det_a, det_b, pair.h_ab, k)


def _list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{directory} is not a directory", EXIT_IO)
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".png"))
    if not paths:
        raise CliError(f"no .pgm/.png images under {directory}", EXIT_IO)
    return paths


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    k = args.k
    if k <= 0:
        raise CliError("--k must be > 0")
    if args.mode == "random_warp":
        if args.pred_dir:
            raise CliError("--pred-dir requires --mode provided")
        images = [_read_image(p) for p in _list_images(args.images)]
        pairs = build_pairs(images, "random_warp", cfg.sample, seed=cfg.seed)
        tasks = [(pair, cfg.lsd, k) for pair in pairs]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_eval_pair_worker, tasks))
        else:
            reports = [_eval_pair_worker(t) for t in tasks]
    else:
        if not args.pairs:
            raise CliError("--mode provided requires --pairs manifest")
        try:
            with open(args.pairs, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except OSError as e:
            raise CliError(f"cannot read {args.pairs}: {e}", EXIT_IO) from e
        except json.JSONDecodeError as e:
            raise CliError(f"{args.pairs}: invalid JSON: {e}", EXIT_FORMAT) from e
        root = Path(args.pairs).parent
        reports = []
        for entry in manifest:
            if "h" not in entry:
                raise CliError("provided mode: every pair needs a homography", EXIT_FORMAT)
            h = Homography.from_json_dict({"h": entry["h"]})
            img_a = _read_image(root / entry["a"])
            img_b = _read_image(root / entry["b"])
            if args.pred_dir:
                det_a = _load_pred(args.pred_dir, entry["a"])
                det_b = _load_pred(args.pred_dir, entry["b"])
            else:
                det_a = lsd_detect(img_a, cfg.lsd)
                det_b = lsd_detect(img_b, cfg.lsd)
            reports.append(evaluate_pair(det_a, det_b, h, k))
    report = aggregate(reports, k)
    table = report.format_table()
    print(table)
    doc = {
        "report": report.to_json_dict(),
        "meta": {"mode": args.mode, "seed": cfg.seed, "lsd": _params_dict(cfg.lsd)},
    }
    if args.out:
        _write_text(args.out, _dump_json(doc))
    return EXIT_OK


def _load_pred(pred_dir, image_name) -> DetectionResult:
    path = Path(pred_dir) / (Path(image_name).stem + ".json")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return detection_from_json_dict(json.load(f))
    except OSError as e:
        raise CliError(f"cannot read prediction {path}: {e}", EXIT_IO) from e
    except (json.JSONDecodeError, KeyError) as e:
        raise CliError(f"{path}: invalid detection JSON: {e}", EXIT_FORMAT) from e


def _cmd_svg(args) -> int:
    try:
        with open(args.detections, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise CliError(f"cannot read {args.detections}: {e}", EXIT_IO) from e
    except json.JSONDecodeError as e:
        raise CliError(f"{args.detections}: invalid JSON: {e}", EXIT_FORMAT) from e
    det = detection_from_json_dict(doc)
    image = _read_image(args.image) if args.image else None
    size = None
    if image is None and "image_size" in doc.get("meta", {}):
        size = tuple(doc["meta"]["image_size"])
    _write_text(args.out, render_svg(det, image=image, size=size))
    return EXIT_OK


def _cmd_config(args) -> int:
    cfg = _resolve_config(args)
    text = config_to_text(cfg)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"config file (or ${ENV_CONFIG})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set decode.tau_support=10")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linefield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", parents=[], help="detect line segments in an image")
    p.add_argument("image")
    p.add_argument("--method", choices=("lsd", "field"), default="lsd")
    p.add_argument("--field", help="serialized field file (--method field)")
    p.add_argument("--junctions", help="junction map file (default: field path with .junc)")
    p.add_argument("--out", required=True, help="detection JSON output")
    p.add_argument("--svg", help="optional SVG overlay output")
    _add_common(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("encode", help="encode a GT segment JSON into field files")
    p.add_argument("gt", help="ground-truth segment JSON")
    p.add_argument("--size", required=True, help="canvas size HxW")
    p.add_argument("--out", required=True, help="field output path")
    p.add_argument("--junctions", help="junction map output (default: out with .junc)")
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="sparse-decode field files into segments")
    p.add_argument("field")
    p.add_argument("--junctions")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("rectify", help="gradient-rectified pseudo-label decoding")
    p.add_argument("image")
    p.add_argument("field")
    p.add_argument("--junctions")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_rectify)

    p = sub.add_parser("adapt", help="homographic-adaptation pseudo labels")
    p.add_argument("image")
    p.add_argument("--provider", required=True,
                   help="field provider: gradient | gt:GT.json | files:FIELD[,JUNC]")
    p.add_argument("--iters", type=int, help="adaptation passes (default from config)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("synth", help="render a synthetic corpus with GT sidecars")
    p.add_argument("--kind", default="all", help=f"one of {PRIMITIVE_KINDS} or 'all'")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", default="128x128")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="repeatability evaluation harness")
    p.add_argument("--images", help="image directory (random_warp mode)")
    p.add_argument("--mode", choices=("provided", "random_warp"), default="random_warp")
    p.add_argument("--pairs", help="pair manifest JSON (provided mode)")
    p.add_argument("--pred-dir", help="precomputed detection JSONs (provided mode)")
    p.add_argument("--k", type=float, default=5.0)
    p.add_argument("--out", help="report JSON output")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("svg", help="render a detection JSON as SVG")
    p.add_argument("detections")
    p.add_argument("image", nargs="?", help="optional raster underlay")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_svg)

    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"linefield: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"linefield: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ImageIOError as e:
        print(f"linefield: {e}", file=sys.stderr)
        return EXIT_IO
    except FieldFormatError as e:
        print(f"linefield: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ProviderError as e:
        print(f"linefield: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"linefield: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
