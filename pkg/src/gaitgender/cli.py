"""Command-line workflow: ``gaitgender <command> --manifest path/manifest.tsv ...``.

Typical synthetic run::

    gaitgender synth --out data --seed 0
    gaitgender ingest --manifest data/manifest.tsv
    gaitgender annotate-faces --manifest data/manifest.tsv
    gaitgender normalize --manifest data/manifest.tsv
    gaitgender encode --manifest data/manifest.tsv
    gaitgender embed --manifest data/manifest.tsv
    gaitgender propagate --manifest data/manifest.tsv --mode spectral
    gaitgender train --manifest data/manifest.tsv --loss nflrce
    gaitgender eval --manifest data/manifest.tsv --group-by angle
    gaitgender report --manifest data/manifest.tsv
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import faces, pipeline
from .pipeline import DatasetManifest

log = logging.getLogger("gaitgender")


class CommandError(Exception):
    pass


def _config(args, manifest=None):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    elif manifest is not None:
        overrides["seed"] = manifest.seed
    for key in ("loss", "tau", "mode", "epochs"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return pipeline.load_config(args.config, overrides)


def _manifest(args):
    return DatasetManifest.read(args.manifest)


def cmd_synth(args):
    overrides = {"label_front_truth": args.front_labels == "truth"}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = pipeline.load_config(args.config, overrides)
    m = pipeline.generate_synthetic_dataset(args.out, cfg)
    print(f"wrote {len(m)} sequences to {Path(args.out) / 'manifest.tsv'} (seed {m.seed})")


def cmd_ingest(args):
    if args.poses:
        m = pipeline.ingest_directory(args.poses, args.manifest, args.seed or 0)
    else:
        m = _manifest(args)
    reports = pipeline.ingest_report(m, _config(args, m))
    flagged = sum(1 for r in reports.values() if not r.clean)
    print(f"{len(reports)} sequences, {flagged} flagged (see artifacts/ingest_report.tsv)")


def cmd_annotate_faces(args):
    with pipeline.manifest_lock(args.manifest):
        m = _manifest(args)
        cfg = _config(args, m)
        endpoint = args.endpoint or cfg["face_endpoint"]
        if endpoint:
            analyzer = faces.HttpFaceAnalyzer(endpoint, os.environ.get(cfg["face_token_env"]))
        else:
            fixture_dir = Path(args.fixture_dir) if args.fixture_dir else m.root / "faces"
            if not fixture_dir.is_dir():
                raise CommandError(f"fixture directory {fixture_dir} not found; pass --fixture-dir "
                                   "or set face_endpoint in the config")
            analyzer = faces.FixtureFaceAnalyzer(fixture_dir)
        s = pipeline.annotate_faces(m, analyzer, cfg)
        m.write(args.manifest)
    print(f"labelled {s.labeled}, no face {s.no_face}, missing trace {s.missing}, "
          f"other views {s.skipped_view}")


def cmd_normalize(args):
    m = _manifest(args)
    skipped = pipeline.normalize_stage(m, _config(args, m))
    print(f"normalised {len(m) - len(skipped)} sequences, skipped {len(skipped)}")


def cmd_encode(args):
    m = _manifest(args)
    pipeline.encode_stage(m, _config(args, m))
    print("wrote TSSI arrays to artifacts/tssi/")


def cmd_embed(args):
    m = _manifest(args)
    path = pipeline.embed_stage(m, _config(args, m))
    print(f"wrote {path}")


def cmd_propagate(args):
    with pipeline.manifest_lock(args.manifest):
        m = _manifest(args)
        cfg = _config(args, m)
        result, ids, report = pipeline.propagate_stage(m, cfg, args.mode)
        m.write(args.manifest)
    n_prop = int((~result.labeled).sum())
    confident = int(((~result.labeled) & (result.confidence >= cfg["tau"])).sum())
    print(f"propagated {n_prop} labels ({confident} with confidence >= {cfg['tau']})")
    if report is not None:
        print(f"pseudo-label accuracy over non-frontal angles: {100 * report[1]:.2f}")


def cmd_train(args):
    m = _manifest(args)
    cfg = _config(args, m)
    result = pipeline.train_stage(m, cfg, include_propagated=not args.baseline, name=args.name)
    last = result.log[-1] if result.log else None
    print(f"trained {args.name} ({cfg['loss']}) for {len(result.log)} epochs"
          + (f", final loss {last.train_loss:.4f}" if last else ""))


def cmd_eval(args):
    m = _manifest(args)
    metrics = pipeline.eval_stage(m, _config(args, m), args.group_by, args.name)
    print(metrics.table(f"F1 ({args.name})"), end="")


def cmd_report(args):
    m = _manifest(args)
    art = m.root / "artifacts"
    found = False
    prop = art / "propagation_report.tsv"
    if prop.exists():
        found = True
        rows = [line.split("\t") for line in prop.read_text().splitlines()[1:]]
        print("Pseudo-label accuracy per view angle (propagated sequences)")
        print("\t".join(r[0] for r in rows))
        print("\t".join(f"{100 * float(r[1]):.2f}" if r[1] else "-" for r in rows))
    for group, title in (("angle", "F1 per view angle"), ("variation", "F1 per variation")):
        for path in sorted(art.glob(f"metrics_*_{group}.tsv")):
            found = True
            name = path.stem[len("metrics_"):-len(group) - 1]
            vals = pipeline.read_metrics(path)
            keys = [k for k in vals if k != "accuracy"]
            print(f"\n{title} ({name}; macro F1 x 100)")
            print("\t".join(keys))
            print("\t".join("-" if vals[k] is None else f"{100 * vals[k]:.2f}" for k in keys))
    if not found:
        raise CommandError(f"nothing to report under {art}; run propagate or eval first")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "annotate-faces": cmd_annotate_faces,
    "normalize": cmd_normalize,
    "encode": cmd_encode,
    "embed": cmd_embed,
    "propagate": cmd_propagate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gaitgender", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, manifest=True, **kw):
        p = sub.add_parser(name, **kw)
        if manifest:
            p.add_argument("--manifest", required=True, help="path to manifest.tsv")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="root seed (default: the manifest's)")
        return p

    p = add("synth", manifest=False, help="generate the synthetic walker dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--front-labels", choices=("none", "truth"), default="none",
                   help="store ground-truth labels on front views (default: leave for annotate-faces)")

    p = add("ingest", help="validate pose files (and build a manifest with --poses)")
    p.add_argument("--poses", help="directory of <subject>_<variation>_<angle>.json pose files")

    p = add("annotate-faces", help="face pseudo-labels for front-view sequences")
    p.add_argument("--fixture-dir", help="directory of <id>.faces.csv traces (default: <manifest dir>/faces)")
    p.add_argument("--endpoint", help="live face-analysis service URL")

    add("normalize", help="normalise pose sequences")
    add("encode", help="write TSSI arrays")
    add("embed", help="write the embedding cache (handcrafted fallback)")

    p = add("propagate", help="propagate front-view labels to other views")
    p.add_argument("--mode", choices=("nn", "spectral"))
    p.add_argument("--tau", type=float, help="confidence threshold used for the summary")

    p = add("train", help="train the gait classifier")
    p.add_argument("--loss", choices=("ce", "nflrce", "iw", "pencil"))
    p.add_argument("--tau", type=float, help="minimum confidence of propagated labels")
    p.add_argument("--epochs", type=int)
    p.add_argument("--baseline", action="store_true", help="ignore propagated labels (front views only)")
    p.add_argument("--name", default="model", help="artifact name (default: model)")

    p = add("eval", help="F1 on the validation split")
    p.add_argument("--group-by", choices=("angle", "variation", "none"), default="angle")
    p.add_argument("--name", default="model")

    add("report", help="print result tables")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (CommandError, pipeline.ManifestError, pipeline.ConfigError, pipeline.ParseError,
            pipeline.LockHeld, faces.AnalyzerUnavailable, FileNotFoundError, ValueError) as exc:
        print(f"gaitgender {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
