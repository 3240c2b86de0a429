"""Command-line pipeline: gen, detect, eval, report, all.

Every command takes ``--config PATH`` (JSON) whose values are overridden by
explicit flags. Failures exit non-zero with a single ``E_<CODE>: message``
line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .analytics import extract_all, summarize, write_report
from .annotset import AnnotationFormatError, rasterize
from .metrics import EvalConfig, evaluate, summary_from_table
from .segmentor import DefectInstance, NoPatternError, RuleConfig, detect, dump_predictions, estimate_pattern, load_predictions
from .synthline import DatasetManifest, SceneSpec, generate_dataset, load_annotation, load_image, uniform_plan

log = logging.getLogger("lsdefect")

PREDICTIONS = "predictions.jsonl"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(code, message)
        self.code = code
        self.message = message

    def __str__(self) -> str:
        return self.message


# -- config ----------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError("E_IO", f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError("E_CONFIG", f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise CliError("E_CONFIG", "config root must be an object")
    return cfg


def _pick(dc, section: dict, overrides: dict):
    names = {f.name for f in fields(dc)}
    unknown = set(section) - names
    if unknown:
        raise CliError("E_CONFIG", f"unknown {dc.__name__} keys: {sorted(unknown)}")
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return dc(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", str(exc))


def _scene(args, cfg) -> SceneSpec:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    return _pick(
        SceneSpec,
        cfg.get("scene", {}),
        {"seed": seed, "noise_sigma": getattr(args, "noise", None), "edge_roughness_amp": getattr(args, "roughness", None)},
    )


def _rules(args, cfg) -> RuleConfig:
    return _pick(RuleConfig, cfg.get("rules", {}), {"min_area": getattr(args, "min_area", None)})


def _eval_cfg(args, cfg) -> EvalConfig:
    return _pick(
        EvalConfig,
        cfg.get("eval", {}),
        {
            "score_threshold": getattr(args, "score_threshold", None),
            "iou_threshold": getattr(args, "iou_threshold", None),
            "mask_mode": getattr(args, "mode", None),
            "weighted_map": True if getattr(args, "weighted", False) else None,
        },
    )


def _plan(args, cfg) -> dict:
    n = args.count_per_class if args.count_per_class is not None else cfg.get("count_per_class")
    clean = args.clean if args.clean is not None else cfg.get("clean_per_split", 0)
    if n is not None:
        return uniform_plan(n, n, n, clean)
    if "plan" in cfg:
        return cfg["plan"]
    return uniform_plan(80, 10, 10, clean)


def _manifest(data: Path) -> DatasetManifest:
    try:
        return DatasetManifest.load(data / "manifest.json")
    except OSError as exc:
        raise CliError("E_IO", f"cannot read dataset manifest in {data}: {exc}")
    except (KeyError, json.JSONDecodeError) as exc:
        raise CliError("E_FORMAT", f"malformed manifest in {data}: {exc}")


# -- commands --------------------------------------------------------------------


def cmd_gen(args) -> DatasetManifest:
    cfg = _load_config(args.config)
    scene = _scene(args, cfg)
    plan = _plan(args, cfg)
    resolved = {"scene": asdict(scene), "plan": plan, "seed": scene.seed}
    config_hash = hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()
    extra = {"tool": "lsdefect", "version": __version__, "config_hash": config_hash, "config": resolved}
    try:
        manifest = generate_dataset(scene, plan, args.out, jobs=args.jobs, extra=extra)
    except ValueError as exc:
        raise CliError("E_CONFIG", str(exc))
    if not manifest.images:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "manifest.json").write_text(manifest.to_json())
    log.info("gen: %d images in %s", len(manifest.images), args.out)
    return manifest


def _detect_one(job) -> tuple[str, str, int]:
    root, entry, rules = job
    img = load_image(root, entry)
    try:
        model = estimate_pattern(img)
    except NoPatternError as exc:
        raise CliError("E_PATTERN", f"{entry['id']}: {exc}")
    found, rejects = detect(img, model, rules)
    return entry["id"], dump_predictions({entry["id"]: found}), len(rejects)


def cmd_detect(args) -> Path:
    cfg = _load_config(args.config)
    rules = _rules(args, cfg)
    data = Path(args.data)
    entries = _manifest(data).split(args.split)
    jobs = [(str(data), e, rules) for e in entries]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_detect_one, jobs, chunksize=8))
    else:
        results = [_detect_one(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / PREDICTIONS
    path.write_text("".join(r[1] for r in results))
    rejected = sum(r[2] for r in results)
    if rejected:
        log.warning("detect: %d residual components matched no class rule", rejected)
    log.info("detect: %d images -> %s", len(results), path)
    return path


def ground_truth(data: Path, entries) -> dict[str, list[DefectInstance]]:
    gts = {}
    for e in entries:
        ann = load_annotation(data, e)
        insts = []
        for inst in ann.instances:
            mask = rasterize(inst.polygon, ann.width, ann.height)
            if mask.any():
                insts.append(DefectInstance.from_mask(inst.defect_class, 1.0, mask))
        gts[e["id"]] = insts
    return gts


def _read_predictions(path: str | Path) -> dict[str, list[DefectInstance]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("E_IO", f"cannot read predictions {path}: {exc}")
    try:
        return load_predictions(text)
    except AnnotationFormatError as exc:
        raise CliError("E_FORMAT", f"{path}: {exc}")


def cmd_eval(args):
    cfg = _load_config(args.config)
    out = Path(args.out)
    if args.ap_table:
        try:
            rows = json.loads(Path(args.ap_table).read_text())
            summary = summary_from_table({k: tuple(v) for k, v in rows.items()})
        except OSError as exc:
            raise CliError("E_IO", f"cannot read {args.ap_table}: {exc}")
        except (ValueError, TypeError) as exc:
            raise CliError("E_FORMAT", f"{args.ap_table}: {exc}")
    else:
        ecfg = _eval_cfg(args, cfg)
        data = Path(args.data)
        gts = ground_truth(data, _manifest(data).split(args.split))
        pred_path = args.pred or (out / PREDICTIONS)
        preds = _read_predictions(pred_path)
        try:
            summary = evaluate(preds, gts, ecfg)
        except KeyError as exc:
            raise CliError("E_FORMAT", str(exc.args[0]))
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(summary.to_json() + "\n")
    (out / "eval.txt").write_text(summary.format_table())
    sys.stdout.write(summary.format_table())
    return summary


def cmd_report(args) -> Path:
    data = Path(args.data)
    entries = _manifest(data).split(args.split)
    if args.source == "gt":
        insts = ground_truth(data, entries)
    else:
        if not args.pred:
            raise CliError("E_CONFIG", "report needs --pred unless --source gt")
        insts = _read_predictions(args.pred)
    known = {e["id"]: e for e in entries}
    missing = set(insts) - set(known)
    if missing:
        raise CliError("E_FORMAT", f"instances reference unknown image ids: {sorted(missing)[:5]}")
    params = extract_all(insts)
    images = {iid: load_image(data, known[iid]) for iid in sorted(insts) if insts[iid]}
    write_report(params, summarize(params), args.out, images=images, instances=insts)
    log.info("report: %d instances -> %s", len(params), args.out)
    return Path(args.out)


def cmd_all(args):
    root = Path(args.out)
    args.out = str(root / "dataset")
    cmd_gen(args)
    args.data = str(root / "dataset")
    args.out = str(root)
    cmd_detect(args)
    args.pred = str(root / PREDICTIONS)
    args.ap_table = None
    cmd_eval(args)
    args.out = str(root / "report")
    return cmd_report(args)


# -- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors follow the same one-line ``E_<CODE>`` contract as runtime errors."""

    def error(self, message):
        self.exit(2, f"E_USAGE: {self.prog}: {_one_line(message)}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lsdefect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--split", choices=("train", "val", "test"), help="restrict to one split (default: all)")
        p.add_argument("--jobs", type=int, default=1)
        if data:
            p.add_argument("--data", required=True, help="dataset directory written by 'gen'")

    def gen_flags(p):
        p.add_argument("--count-per-class", type=int, help="images per class in every split")
        p.add_argument("--clean", type=int, help="defect-free images per split")
        p.add_argument("--noise", type=float, help="Gaussian noise sigma (gray levels)")
        p.add_argument("--roughness", type=float, help="edge roughness amplitude (px)")

    def eval_flags(p):
        p.add_argument("--score-threshold", type=float)
        p.add_argument("--iou-threshold", type=float)
        p.add_argument("--mode", choices=("box", "mask", "both"))
        p.add_argument("--weighted", action="store_true", help="instance-weighted mAP")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p, data=False)
    gen_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("detect", help="run the rule-based segmentor")
    common(p)
    p.add_argument("--min-area", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="AP50 evaluation of a prediction file")
    common(p, data=False)
    p.add_argument("--data", help="dataset directory written by 'gen'")
    p.add_argument("--pred", help=f"prediction file (default: OUT/{PREDICTIONS})")
    p.add_argument("--ap-table", help="JSON {class: [bbox_ap, segm_ap]}; aggregate reported APs instead")
    eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="CSV report and per-class folders")
    common(p)
    p.add_argument("--pred", help="prediction file (required with --source pred)")
    p.add_argument("--source", choices=("pred", "gt"), default="pred")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("all", help="gen, detect, eval and report in one run")
    common(p, data=False)
    gen_flags(p)
    eval_flags(p)
    p.add_argument("--min-area", type=int)
    p.set_defaults(func=cmd_all, source="pred")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.ap_table and not args.data:
        parser.error("eval needs --data (or --ap-table)")
    try:
        args.func(args)
    except CliError as exc:
        print(f"{exc.code}: {_one_line(str(exc))}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"E_IO: {_one_line(str(exc))}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort single-line error contract
        print(f"E_INTERNAL: {type(exc).__name__}: {_one_line(str(exc))}", file=sys.stderr)
        return 4
    return 0


def _one_line(msg: str) -> str:
    return " ".join(msg.split())


if __name__ == "__main__":
    sys.exit(main())
