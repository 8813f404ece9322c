"""Command-line front end: ``posereid {split,extract,train,eval,query,ablate,synth}``.

Settings come from defaults, then ``--config`` (JSON), then flags; flags win.
Errors are reported on stderr as one JSON object and mapped to exit codes.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import ProtocolError, ReidError

EXIT_IO = 15


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--dataset-root", dest="dataset_root")
    p.add_argument("--split", help="split manifest (JSON)")
    p.add_argument("--output", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="extraction processes (default: all CPUs)")
    p.add_argument("--force", action="store_const", const=True, help="recompute existing caches")
    p.add_argument("-v", "--verbose", action="store_true")


def _features(p):
    p.add_argument("--fusion", choices=["deep", "lomo", "concat"])
    p.add_argument("--alpha", type=float, help="weight of the deep block in concat fusion")
    p.add_argument("--embeddings", help="deep part embeddings (binary cache or .csv)")


def _evaluation(p):
    p.add_argument("--metric", choices=["cosine", "xqda"])
    p.add_argument("--protocol", choices=["auto", "single_query_map", "single_shot_cmc"])
    p.add_argument("--trials", type=int)
    p.add_argument("--topk", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="posereid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="build a split manifest from a dataset directory")
    _common(p)
    p.add_argument("--kind", dest="dataset_kind", choices=["market", "duke", "viper", "cuhk03"])
    p.add_argument("--test-ids", dest="test_ids", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)

    p = sub.add_parser("extract", help="compute LOMO descriptor caches")
    _common(p)
    p.add_argument("--joints", help="joint file; writes regions.csv")

    p = sub.add_parser("train", help="learn an XQDA model")
    _common(p)
    _features(p)
    p.add_argument("--reg", type=float)
    p.add_argument("--max-dim", dest="max_dim", type=int)

    p = sub.add_parser("eval", help="evaluate probe against gallery")
    _common(p)
    _features(p)
    _evaluation(p)
    p.add_argument("--ablation", action="store_true", help="add part-ablation rows")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("query", help="ranked gallery list for one probe")
    _common(p)
    _features(p)
    _evaluation(p)
    p.add_argument("--probe", required=True, help="probe image key")
    p.add_argument("--no-montage", action="store_true")

    p = sub.add_parser("ablate", help="part ablation over an embeddings file")
    _common(p)
    _features(p)
    _evaluation(p)

    p = sub.add_parser("synth", help="write a small synthetic dataset with embeddings")
    _common(p)
    p.add_argument("--ids", type=int, default=6)
    p.add_argument("--per-cam", type=int, default=2)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "ablation", "no_figures", "probe", "no_montage",
               "ids", "per_cam"}


def make_config(args):
    cfg = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    return cfg.with_overrides(**overrides)


def _synth(cfg, n_ids, per_cam):
    from .fusion import save_embeddings
    from .synthetic import part_embeddings, write_image_dataset

    root = Path(cfg.dataset_root)
    rows = write_image_dataset(root, n_ids=n_ids, per_cam=per_cam, seed=cfg.seed)
    emb, _ = part_embeddings(cfg.seed, n_ids=n_ids, images_per_cam=per_cam)
    # reuse the generated vectors under the image keys, in the same order
    keyed = dict(zip((r[0] for r in rows), emb.values()))
    meta = {r[0]: (r[1], r[2], bool(r[3])) for r in rows}
    save_embeddings(keyed, root / "embeddings.bin", meta)
    return {"images": len(rows), "embeddings": str(root / "embeddings.bin")}


def run(args):
    cfg = make_config(args)
    cmd = args.command
    if cmd == "split":
        spec = pipeline.make_split(cfg)
        return {p: len(k) for p, k in spec.partitions.items()}
    if cmd == "extract":
        return pipeline.extract(cfg)
    if cmd == "train":
        return pipeline.train(cfg)[1]
    if cmd == "eval":
        report = pipeline.run_eval(cfg, ablation=args.ablation, figures=not args.no_figures)
        return {k: report[k] for k in ("protocol", "cmc", "mAP") if k in report}
    if cmd == "query":
        ranked = pipeline.run_query(cfg, args.probe, montage=not args.no_montage)
        return {"probe": ranked.probe, "results": [e.gallery for e in ranked.entries]}
    if cmd == "ablate":
        return {r["row"]: r["rank1"] for r in pipeline.run_ablation(cfg)["rows"]}
    if cmd == "synth":
        return _synth(cfg, args.ids, args.per_cam)
    raise AssertionError(cmd)


def _fail(exc, code):
    diag = {"error": type(exc).__name__, "code": code, "message": str(exc)}
    if isinstance(exc, ProtocolError):
        diag["identities"] = exc.identities
    print(json.dumps(diag), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except ReidError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _fail(exc, EXIT_IO if isinstance(exc, OSError) else 2)
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
