"""Operator CLI: one thin verb per pipeline stage.

Verbs exit 0 on success; any pipeline error prints a single machine-readable
JSON line on stderr and exits 1. Unknown verbs print usage and exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import api as api_mod
from .dataset import (
    NormalizationStats,
    SplitSpec,
    build_examples,
    compute_stats,
    load_dataset,
    save_dataset,
    split,
)
from .errors import PerceptMapError, StatsError
from .ingestion import (
    CommandDescriptorCounts,
    CrawlPlan,
    FakeProvider,
    Geofence,
    HttpProvider,
    fetch_images,
    filter_images,
    ingest_features,
    plan_crawl,
)
from .network import (
    TrainConfig,
    evaluate,
    load_model,
    save_model,
    swap_consistency_rate,
    train,
    write_curves,
)
from .records import CorpusSnapshot
from .scoring import emit_map, score_zone, write_map, write_scores_csv
from .store import CorpusStore, load_snapshot, save_snapshot, store_from_snapshot
from .synthetic import PredictionConfig, plan_pairs, predict_pairs


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PerceptMapError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perceptmap",
        description="Street-safety perception pipeline: survey, train, predict, map.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("crawl", help="plan a grid over a geofence and fetch images")
    p.add_argument("--fence", required=True, type=Path, help="GeoJSON Polygon feature")
    p.add_argument("--step-m", required=True, type=float)
    p.add_argument("--headings", default="0,90,180,270",
                   help="comma-separated compass bearings")
    p.add_argument("--max", type=int, default=None)
    p.add_argument("--out", required=True, type=Path, help="data directory")
    p.add_argument("--provider", choices=["http", "fake"], default="http")
    p.add_argument("--cache-dir", type=Path, default=None)
    p.add_argument("--parallelism", type=int, default=4)
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("filter", help="drop images under the descriptor-count threshold")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--min-descriptors", type=int, default=420)
    p.add_argument("--count-command", default=None,
                   help="external command template with {uri} producing a count")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("ingest-features", help="attach 512-dim feature vectors")
    p.add_argument("--features", required=True, type=Path)
    p.add_argument("--index", type=Path, default=None)
    p.add_argument("--data-dir", required=True, type=Path)
    p.set_defaults(func=cmd_ingest_features)

    p = sub.add_parser("build-dataset", help="votes -> normalized training rows")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--fractions", default="0.65,0.07,0.28")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the two-class perceptron")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden-size", type=int, default=512)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--out", type=Path, default=None, help="default <data-dir>/model.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy on a partition")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("--partition", default="test", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth-generate", help="plan synthetic pairs for a zone")
    p.add_argument("--zone", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", required=True, type=Path)
    p.set_defaults(func=cmd_synth_generate)

    p = sub.add_parser("synth-predict", help="annotate planned pairs with the model")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--zone", required=True)
    p.add_argument("--margin", type=float, default=0.25)
    p.add_argument("--pairs", type=Path, default=None,
                   help="default <data-dir>/pairs_<zone>.jsonl")
    p.set_defaults(func=cmd_synth_predict)

    p = sub.add_parser("score", help="redistribute neutrals and score a zone")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--zone", required=True)
    p.add_argument("--source", choices=["human", "synthetic", "all"], default="all")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("emit-map", help="write the color-graded GeoJSON map")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--zone", required=True)
    p.add_argument("--source", choices=["human", "synthetic", "all"], default="all")
    p.add_argument("--out", type=Path, default=None,
                   help="default <data-dir>/map_<zone>.geojson")
    p.set_defaults(func=cmd_emit_map)

    p = sub.add_parser("serve", help="run the survey API")
    p.add_argument("--bind", default=None, help="host:port (or PERCEPTMAP_BIND)")
    p.add_argument("--data-dir", type=Path, default=None)
    p.add_argument("--static-dir", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


# -- verb implementations -----------------------------------------------------

def cmd_crawl(args) -> int:
    fence = Geofence.from_geojson(json.loads(args.fence.read_text()))
    headings = tuple(float(h) for h in args.headings.split(",") if h.strip())
    plan = CrawlPlan(grid_step_m=args.step_m, headings=headings, max_images=args.max)
    points = plan_crawl(fence, plan)
    if args.provider == "fake":
        # The fake provider reports a count comfortably above the filter threshold.
        provider = FakeProvider(descriptor_count=1000)
    else:
        provider = HttpProvider(cache_dir=args.cache_dir)
    images = fetch_images(points, provider, zone=fence.zone_name,
                          parallelism=args.parallelism)
    store = CorpusStore()
    for img in images:
        store.put_image(img)
    save_snapshot(store.snapshot(), args.out)
    print(f"crawled {len(images)} images over {len(points)} sample points "
          f"into {args.out}")
    return 0


def cmd_filter(args) -> int:
    snapshot = load_snapshot(args.data_dir)
    counts = CommandDescriptorCounts(args.count_command) if args.count_command else None
    kept, excluded = filter_images(list(snapshot.images.values()),
                                   min_descriptors=args.min_descriptors, counts=counts)
    excluded_ids = {img.image_id for img in excluded}
    referenced = {i for v in snapshot.votes for i in (v.left_id, v.right_id)}
    blocked = sorted(excluded_ids & referenced)
    if blocked:
        raise PerceptMapError(
            f"cannot exclude voted images: {', '.join(blocked[:5])}")
    cleaned = CorpusSnapshot(
        images={img.image_id: img for img in kept},
        features={i: v for i, v in snapshot.features.items() if i not in excluded_ids},
        votes=snapshot.votes,
    )
    save_snapshot(cleaned, args.data_dir)
    with open(args.data_dir / "excluded.jsonl", "w", encoding="utf-8") as fh:
        for img in excluded:
            fh.write(json.dumps(img.to_json()) + "\n")
    print(f"kept {len(kept)}, excluded {len(excluded)} "
          f"(threshold {args.min_descriptors})")
    return 0


def cmd_ingest_features(args) -> int:
    snapshot = load_snapshot(args.data_dir)
    missing = ingest_features(args.features, snapshot, index_path=args.index)
    save_snapshot(snapshot, args.data_dir)
    print(f"features attached for {len(snapshot.features)} images; "
          f"{len(missing)} still missing")
    return 0


def cmd_build_dataset(args) -> int:
    snapshot = load_snapshot(args.data_dir)
    if not snapshot.features:
        raise StatsError("no feature vectors in the data directory")
    stats = compute_stats(snapshot.features[i] for i in sorted(snapshot.features))
    human_votes = [v for v in snapshot.votes if v.source == "human"]
    examples = build_examples(human_votes, snapshot.features, stats)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    result = split(examples, SplitSpec(fractions=fractions, seed=args.seed))
    stats.save(args.data_dir / "norm_stats.json")
    save_dataset(examples, result.partition_of,
                 args.data_dir / "dataset.bin", args.data_dir / "labels.jsonl")
    print(f"built {len(examples)} examples from {len(human_votes)} votes: "
          f"train {len(result.train)}, val {len(result.val)}, test {len(result.test)}")
    return 0


def cmd_train(args) -> int:
    examples, partition_of = load_dataset(args.data_dir / "dataset.bin",
                                          args.data_dir / "labels.jsonl")
    idx = {name: [i for i, p in enumerate(partition_of) if p == name]
           for name in ("train", "val")}
    config = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                         hidden_size=args.hidden_size, max_epochs=args.max_epochs,
                         patience=args.patience, seed=args.seed)
    result = train(examples.subset(idx["train"]), examples.subset(idx["val"]), config)
    out = args.out or (args.data_dir / "model.json")
    save_model(out, result.params, config, history=result.history,
               norm_stats_ref="norm_stats.json")
    write_curves(args.data_dir / "curves.csv", result.history)
    last = result.history[-1]
    print(f"trained {last.epoch} epochs (best epoch {result.best_epoch}); "
          f"final train loss {last.train_loss:.4f}, val loss {last.val_loss:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    params, _, _ = load_model(args.model)
    labels_path = args.labels or args.dataset.parent / "labels.jsonl"
    examples, partition_of = load_dataset(args.dataset, labels_path)
    if args.partition != "all":
        examples = examples.subset(
            [i for i, p in enumerate(partition_of) if p == args.partition])
    matrix, accuracy = evaluate(params, examples)
    print(matrix.to_text())
    if bool(examples.swapped.any()):
        # Reported, not asserted: the architecture does not enforce symmetry.
        print(f"swap consistency: {swap_consistency_rate(params, examples):.4f}")
    print(f"accuracy: {accuracy:.4f}")
    return 0


def cmd_synth_generate(args) -> int:
    snapshot = load_snapshot(args.data_dir)
    zone_images = [img for img in snapshot.images.values() if img.zone == args.zone]
    plan, pairs = plan_pairs(zone_images, zone=args.zone, seed=args.seed)
    out = args.data_dir / f"pairs_{args.zone}.jsonl"
    with open(out, "w", encoding="utf-8") as fh:
        for left_id, right_id in pairs:
            fh.write(json.dumps({"left_id": left_id, "right_id": right_id}) + "\n")
    print(f"planned {len(pairs)} pairs over {len(zone_images)} images "
          f"({len(plan.group_a)} per group) -> {out}")
    return 0


def cmd_synth_predict(args) -> int:
    snapshot = load_snapshot(args.data_dir)
    params, _, meta = load_model(args.model)
    stats = NormalizationStats.load(args.data_dir / (meta["norm_stats_ref"]
                                                     or "norm_stats.json"))
    pairs_path = args.pairs or (args.data_dir / f"pairs_{args.zone}.jsonl")
    pairs = []
    with open(pairs_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                pairs.append((obj["left_id"], obj["right_id"]))
    votes = predict_pairs(pairs, params, snapshot.features, stats,
                          PredictionConfig(margin=args.margin), zone=args.zone)
    store = store_from_snapshot(snapshot)
    for vote in votes:
        store.record_vote(vote)
    save_snapshot(store.snapshot(), args.data_dir)
    # Side export of just this batch; the canonical log stays votes.jsonl.
    with open(args.data_dir / "synthetic_votes.jsonl", "w", encoding="utf-8") as fh:
        for vote in votes:
            fh.write(json.dumps(vote.to_json()) + "\n")
    by_code = {0: 0, 1: 0, 2: 0}
    for v in votes:
        by_code[v.code] += 1
    print(f"predicted {len(votes)} synthetic votes "
          f"(code 0: {by_code[0]}, 1: {by_code[1]}, 2: {by_code[2]})")
    return 0


def _zone_scores(args):
    snapshot = load_snapshot(args.data_dir)
    votes = snapshot.votes
    if args.source != "all":
        votes = [v for v in votes if v.source == args.source]
    # Counters replayed from the selected votes only, onto zeroed copies.
    store = store_from_snapshot(snapshot)
    store.votes = list(votes)
    store.rebuild_counters()
    scores = score_zone(store.images, votes, zone=args.zone)
    return snapshot, scores


def cmd_score(args) -> int:
    snapshot, scores = _zone_scores(args)
    out = args.data_dir / f"scores_{args.zone}.csv"
    write_scores_csv(out, scores, snapshot.images)
    print(f"scored {len(scores)} images in zone {args.zone!r} -> {out}")
    return 0


def cmd_emit_map(args) -> int:
    snapshot, scores = _zone_scores(args)
    document = emit_map(args.zone, scores, snapshot.images)
    out = args.out or (args.data_dir / f"map_{args.zone}.geojson")
    write_map(out, document)
    print(f"wrote {len(document['features'])} features -> {out}")
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    bind = args.bind or os.environ.get(api_mod.BIND_ENV, api_mod.DEFAULT_BIND)
    host, _, port = bind.rpartition(":")
    app = api_mod.create_app(data_dir=args.data_dir, seed=args.seed,
                             static_dir=args.static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


if __name__ == "__main__":
    sys.exit(main())
