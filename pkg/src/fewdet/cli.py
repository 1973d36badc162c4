"""Single executable multiplexing all subcommands.

Machine-readable JSON goes to stdout (or ``-o``); one-line human summaries
go to stderr. Every report embeds the tool version and the resolved
configuration, and identical argv + input files + seed produce byte-identical
JSON. Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ValidationError,
    load_dataset,
    load_detections,
    load_embeddings,
    serialize_detections,
)
from .detops import EnsembleConfig, ensemble
from .domainstats import MMDConfig, mmd
from .episodes import sample_episode
from .metrics import MatchConfig, ScoreReport, evaluate_detections
from .protofusion import (
    FeatureCache,
    FusionWeights,
    _softmax,
    build_prototypes,
    fuse,
    ifc_affinity,
    nearest_support,
    proto_scores,
    tempered_similarity,
)
from .selftrain import PseudoLabelConfig, ReplayScorer, self_train_loop

SUBCOMMANDS = ("evaluate", "score", "sample-episodes", "ensemble", "fuse",
               "domain-stats", "selftrain")


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_threads() -> int:
    raw = os.environ.get("FEWDET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_number(raw: str, kind=float):
    try:
        return kind(raw)
    except ValueError:
        raise ValidationError(f"not a number: {raw!r}") from None


def _parse_weight_map(raw: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise ValidationError(f"weight {piece!r} is not NAME=VALUE")
        name, value = piece.split("=", 1)
        out[name.strip()] = _parse_number(value)
    if not out:
        raise ValidationError("empty weight list")
    return out


def _parse_float_list(raw: str) -> list[float]:
    values = [_parse_number(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ValidationError("empty numeric list")
    return values


def _parse_int_list(raw: str) -> list[int]:
    values = [_parse_number(v, int) for v in raw.split(",") if v.strip()]
    if not values:
        raise ValidationError("empty integer list")
    return values


def _payload(command: str, config: dict, body: dict) -> dict:
    return {"tool": "fewdet", "version": __version__, "command": command,
            "config": config, **body}


def _emit(payload: dict, output: str | None, summary: str,
          verbose: bool = False) -> None:
    text = json.dumps(payload, indent=2)
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if verbose:
        print(f"config: {json.dumps(payload['config'])}", file=sys.stderr)
    print(summary, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_evaluate(args) -> int:
    cfg = MatchConfig.ap50() if args.ap50_only else MatchConfig()
    if args.max_dets is not None:
        cfg = MatchConfig(cfg.iou_thresholds, args.max_dets, cfg.interpolation_points)
    dataset = load_dataset(args.gt)
    dets = load_detections(args.dets)
    report = evaluate_detections(dets, dataset, cfg, threads=args.threads)
    config = {"gt": args.gt, "dets": args.dets, "ap50_only": args.ap50_only,
              "max_dets": cfg.max_dets_per_image, "threads": args.threads}
    _emit(_payload("evaluate", config, report.to_json_dict()), args.output,
          f"mAP {report.mean_ap:.2f} over {len(report.per_class)} class(es), "
          f"{len(cfg.iou_thresholds)} IoU threshold(s)", args.verbose)
    return 0


def _cmd_score(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        nine = json.load(fh)
    if not isinstance(nine, dict):
        raise ValidationError(f"{args.report}: expected a JSON object of nine mAPs")
    report = ScoreReport(maps=nine)
    config = {"report": args.report}
    _emit(_payload("score", config, report.to_json_dict()), args.output,
          f"Score {report.score:.2f}", args.verbose)
    return 0


def _cmd_sample_episodes(args) -> int:
    dataset = load_dataset(args.gt)
    shots = _parse_int_list(args.shots)
    episodes = [sample_episode(dataset, k, args.seed) for k in shots]
    config = {"gt": args.gt, "shots": shots, "seed": args.seed}
    body = {"episodes": [ep.to_json_dict() for ep in episodes]}
    _emit(_payload("sample-episodes", config, body), args.output,
          f"{len(episodes)} episode(s) over {episodes[0].n_way} class(es)", args.verbose)
    return 0


def _cmd_ensemble(args) -> int:
    weights = _parse_weight_map(args.weights)
    det_sets = []
    for entry in args.inputs:
        if "=" in entry:
            source_id, path = entry.split("=", 1)
        else:
            source_id, path = Path(entry).stem, entry
        det_sets.append((source_id, load_detections(path, source_id=source_id)))
    sources = [s for s, _ in det_sets]
    if sorted(weights) != sorted(sources):
        raise ValidationError(
            f"weight keys {sorted(weights)} do not match sources {sorted(sources)}"
        )
    cfg = EnsembleConfig(weights, iou_threshold=args.iou, score_floor=args.floor)
    fused = ensemble(det_sets, cfg)
    config = {"weights": weights, "iou": args.iou, "floor": args.floor,
              "inputs": list(args.inputs)}
    body = {"detections": serialize_detections(fused)}
    _emit(_payload("ensemble", config, body), args.output,
          f"{len(fused)} detection(s) from {len(det_sets)} source(s)", args.verbose)
    return 0


def _cmd_fuse(args) -> int:
    support = load_embeddings(args.support, normalize=args.normalize)
    queries = load_embeddings(args.queries, normalize=args.normalize)
    results = []

    if args.method == "proto":
        protos = build_prototypes(support)
        classes = protos.classes()
        if not classes:
            raise ValidationError("support file yields no prototypes")
        if args.weights:
            parsed = _parse_weight_map(args.weights)
            known = {"local", "global", "text", "det", "aux"}
            unknown = sorted(set(parsed) - known)
            if unknown:
                raise ValidationError(
                    f"unknown fusion weight(s) {unknown}; expected {sorted(known)}")
            weights = FusionWeights(**{f"w_{k}": v for k, v in parsed.items()})
        else:
            weights = FusionWeights()
        weight_of = {"local": weights.w_local, "global": weights.w_global,
                     "text": weights.w_text}
        sources = []
        for kind in ("local", "global", "text"):
            matrix = protos.matrix(kind, classes)
            if matrix is not None and weight_of[kind] > 0:
                sources.append((kind, matrix))
        if not sources:
            raise ValidationError("no prototype kind covers every class")
        for rec in queries.records:
            per_kind = [
                (proto_scores(rec.vector, matrix, args.sigma, softmax=args.softmax),
                 weight_of[kind])
                for kind, matrix in sources
            ]
            scores = fuse(per_kind)
            results.append({"id": rec.record_id, "scores": list(scores),
                            "class_id": classes[int(np.argmax(scores))]})
    elif args.method == "ifc":
        cache, classes = FeatureCache.from_embedding_table(support, beta=args.beta)
        for rec in queries.records:
            _, logits = ifc_affinity(rec.vector, cache)
            results.append({"id": rec.record_id, "scores": list(logits),
                            "class_id": classes[int(np.argmax(logits))]})
    elif args.method == "nearest":
        supports = [(r.vector, r.class_id) for r in support.of_kind("instance")]
        if any(c is None for _, c in supports) or not supports:
            raise ValidationError("nearest method needs instance records with class ids")
        for rec in queries.records:
            class_id, confidence = nearest_support(rec.vector, supports)
            results.append({"id": rec.record_id, "class_id": class_id,
                            "confidence": confidence})
    else:  # tempered
        protos = build_prototypes(support, kinds=("instance",))
        local = protos.by_kind.get("local", {})
        if not local:
            raise ValidationError("tempered method needs instance records with class ids")
        classes = sorted(local)
        for rec in queries.records:
            scores = [tempered_similarity(rec.vector, local[c], args.tau) for c in classes]
            results.append({"id": rec.record_id, "scores": scores,
                            "class_id": classes[int(np.argmax(scores))]})

    config = {"support": args.support, "queries": args.queries,
              "method": args.method, "weights": args.weights,
              "sigma": args.sigma, "beta": args.beta, "tau": args.tau,
              "softmax": args.softmax, "normalize": args.normalize}
    _emit(_payload("fuse", config, {"results": results}), args.output,
          f"{len(results)} query record(s) scored with method {args.method}", args.verbose)
    return 0


def _cmd_domain_stats(args) -> int:
    source = load_embeddings(args.source)
    target = load_embeddings(args.target)
    x = np.stack([r.vector for r in source.records])
    y = np.stack([r.vector for r in target.records])
    bandwidths = _parse_float_list(args.bandwidths)
    cfg = MMDConfig(tuple(bandwidths))
    per_bandwidth = {str(b): mmd(x, y, MMDConfig((b,))) for b in bandwidths}
    overall = mmd(x, y, cfg)
    config = {"source": args.source, "target": args.target, "bandwidths": bandwidths}
    body = {"n_source": x.shape[0], "n_target": y.shape[0], "dim": int(x.shape[1]),
            "mmd": overall, "per_bandwidth": per_bandwidth}
    _emit(_payload("domain-stats", config, body), args.output,
          f"MMD^2 {overall:.6f} over {len(bandwidths)} bandwidth(s)", args.verbose)
    return 0


def _cmd_selftrain(args) -> int:
    dataset = load_dataset(args.gt)
    if not args.scorer.startswith("replay:"):
        raise ValidationError(
            f"unrecognized scorer {args.scorer!r}; expected replay:<glob>"
        )
    pattern = args.scorer[len("replay:"):]
    files = sorted(glob.glob(pattern))
    if not files:
        raise ValidationError(f"scorer pattern {pattern!r} matched no files")
    scorer = ReplayScorer([load_detections(f) for f in files])
    cfg = PseudoLabelConfig(lambda_conf=args.lambda_conf, iterations=args.iters,
                            dedup_iou=args.dedup_iou)
    initial = list(dataset.annotations)
    image_ids = sorted(dataset.images)

    if args.reset_per_image:
        labels = []
        per_image = []
        next_id = max([g.annotation_id for g in initial], default=0) + 1
        next_id = max(next_id, 1)
        for image_id in image_ids:
            image_initial = [g for g in initial if g.image_id == image_id]
            image_labels, trace = self_train_loop(
                [image_id], scorer, image_initial, cfg, first_new_id=next_id)
            next_id += len(image_labels) - len(image_initial)
            labels.extend(image_labels)
            per_image.append({"image_id": image_id,
                              "iterations": [t.to_json_dict() for t in trace]})
        trace_body = {"mode": "per-image", "images": per_image}
    else:
        labels, trace = self_train_loop(image_ids, scorer, initial, cfg)
        trace_body = {"mode": "global",
                      "iterations": [t.to_json_dict() for t in trace]}

    config = {"gt": args.gt, "scorer": args.scorer, "lambda": args.lambda_conf,
              "iters": args.iters, "dedup_iou": args.dedup_iou,
              "reset_per_image": args.reset_per_image}
    body = {
        "labels": [
            {"id": g.annotation_id, "image_id": g.image_id,
             "category_id": g.category_id, "bbox": g.bbox.to_xywh()}
            for g in labels
        ]
    }
    if args.trace:
        Path(args.trace).write_text(
            json.dumps(_payload("selftrain", config, trace_body), indent=2) + "\n",
            encoding="utf-8")
    _emit(_payload("selftrain", config, body), args.output,
          f"labels: {len(initial)} -> {len(labels)} after {args.iters} iteration(s)",
          args.verbose)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fewdet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fewdet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker threads; changes wall time only, never results")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("evaluate", help="COCO-style mAP of detections against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--ap50-only", action="store_true",
                   help="single IoU threshold 0.50 instead of 0.50:0.95")
    p.add_argument("--max-dets", type=int, default=None,
                   help="per-image detection cap (default 100)")
    common(p)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("score", help="challenge Score from nine per-dataset/per-shot mAPs")
    p.add_argument("--report", required=True, help="JSON object with the nine mAP entries")
    common(p)
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("sample-episodes", help="N-way K-shot support/query sampling")
    p.add_argument("--gt", required=True)
    p.add_argument("--shots", default="1,5,10", help="comma-separated K values")
    p.add_argument("--seed", type=int, default=42)
    common(p)
    p.set_defaults(handler=_cmd_sample_episodes)

    p = sub.add_parser("ensemble", help="reweight, pool, floor and NMS detection sets")
    p.add_argument("inputs", nargs="+", metavar="SOURCE",
                   help="detection file path, or id=path to name the source")
    p.add_argument("--weights", required=True, help="per-source weights, id=w[,id=w...]")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--floor", type=float, default=0.0)
    common(p)
    p.set_defaults(handler=_cmd_ensemble)

    p = sub.add_parser("fuse", help="score query embeddings against support prototypes")
    p.add_argument("--support", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--method", choices=("proto", "ifc", "nearest", "tempered"),
                   default="proto")
    p.add_argument("--weights", default=None,
                   help="prototype fusion weights, e.g. local=0.25,global=0.15,text=0.4")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=1.0,
                   help="cache affinity sharpness (harness default; unpublished)")
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--softmax", action="store_true",
                   help="apply the optional softmax post-step per source")
    p.add_argument("--normalize", action="store_true",
                   help="L2-normalize embeddings at load")
    common(p)
    p.set_defaults(handler=_cmd_fuse)

    p = sub.add_parser("domain-stats", help="multi-kernel MMD between two embedding files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--bandwidths", default="0.5,1,2,5")
    common(p)
    p.set_defaults(handler=_cmd_domain_stats)

    p = sub.add_parser("selftrain", help="pseudo-label refinement loop over a replay scorer")
    p.add_argument("--gt", required=True)
    p.add_argument("--scorer", required=True, help="replay:<glob over prediction files>")
    p.add_argument("--lambda", dest="lambda_conf", type=float, default=0.6)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--dedup-iou", type=float, default=0.5)
    p.add_argument("--reset-per-image", action="store_true",
                   help="run an independent loop per image instead of one joint loop")
    p.add_argument("--trace", default=None, help="write the per-iteration trace here")
    common(p)
    p.set_defaults(handler=_cmd_selftrain)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"fewdet {args.command}: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"fewdet {args.command}: unreadable JSON: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fewdet {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
