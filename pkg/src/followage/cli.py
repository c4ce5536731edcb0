"""Command line pipeline: extract, clean, train, predict, evaluate, simulate, aggregate, rank-features.

Every stage writes a JSON run manifest (inputs with sha256 digests, resolved
parameters, outputs with digests) next to its outputs. Settings resolve as
flags > ``--config`` file (``key = value`` lines) > defaults.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cleaning import clean_labels, write_flag_report
from .evaluation import (COARSE_LABELS, coarsen, prior_baseline, resolve_truth, roc_auc, score_metrics,
                         split_holdout, aggregate_population, write_roc_points)
from .extraction import RuleError, extract_corpus, load_rules, read_corpus, write_label_lines
from .ingestion import (DataError, iter_edge_chunks, read_edges, read_feature_metadata, read_labels,
                        write_labels)
from .model import (Hyperparameters, TWITTER_POPULATION, category_given_follow, group_edge_chunks, load_model,
                    predict_stream, save_model, train)
from .simulation import SimConfig, generate
from .taxonomy import TaxonomyError, default_prior, read_taxonomy

log = logging.getLogger("followage")

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3

DEFAULTS = {
    "alpha": 1.0,
    "K": TWITTER_POPULATION,
    "min_support": 10,
    "mad_k": 3.0,
    "holdout_fraction": 0.0,
    "chunk_size": 1 << 20,
    "top_k": 5,
    "outlier_fraction": 0.0,
    "follower_low": 7e5,
    "follower_high": 7e6,
    "workers": os.cpu_count() or 1,
}

# keys that may appear in a config file and their types
_TYPES = {
    "alpha": float, "K": float, "min_support": int, "mad_k": float, "holdout_fraction": float,
    "seed": int, "chunk_size": int, "top_k": int, "users": int, "features": int,
    "outlier_fraction": float, "follower_low": float, "follower_high": float, "workers": int,
    "edges": str, "labels": str, "metadata": str, "taxonomy": str, "prior": str, "model": str,
    "out": str, "corpus": str, "rules": str, "report": str, "predictions": str, "lang": str,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _TYPES:
            raise UsageError(f"{path}:{lineno}: expected 'key = value' with a known key, got {raw!r}")
        try:
            cfg[key] = _TYPES[key](value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return cfg


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicitly given flags."""
    given = vars(args)
    # only settings this subcommand understands, so manifests list what actually applied
    settings = {k: v for k, v in DEFAULTS.items() if k in given}
    settings.update({k: v for k, v in read_config(args.config).items() if k in given})
    for key, value in given.items():
        if key in ("config", "command", "func", "verbose") or value is None:
            continue
        settings[key] = value
    return settings


def require(settings: dict, *keys: str):
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: Path, command: str, settings: dict, inputs: dict, outputs: dict):
    def describe(files):
        return {name: {"path": str(p), "sha256": digest(p)} for name, p in sorted(files.items())
                if p is not None and Path(p).exists()}

    params = {k: v for k, v in sorted(settings.items()) if k not in inputs and k not in outputs and k != "workers"}
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "inputs": describe(inputs),
        "outputs": describe(outputs),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _hp(s) -> Hyperparameters:
    try:
        return Hyperparameters(float(s["alpha"]), float(s["K"]), int(s["min_support"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _taxonomy_and_prior(s):
    t = read_taxonomy(s.get("taxonomy"))
    return t, default_prior(t, s.get("prior"))


def _existing(s, *keys):
    for k in keys:
        if s.get(k) is not None and not Path(s[k]).exists():
            raise DataError(f"{k} file not found: {s[k]}")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# -- subcommands ---------------------------------------------------------------

def cmd_extract(s):
    require(s, "corpus", "out")
    _existing(s, "corpus", "rules")
    langs = [x.strip() for x in s["lang"].split(",")] if s.get("lang") else None
    rules = load_rules(s.get("rules"), langs)
    labels, report = extract_corpus(read_corpus(s["corpus"]), rules)
    out = Path(s["out"])
    write_label_lines(labels, out)
    report_path = Path(s["report"]) if s.get("report") else out.with_name(out.name + ".report.txt")
    report_path.write_text(f"rulesets\t{','.join(sorted(rules.languages))}\n" + report.to_text(), encoding="utf-8")
    log.info("extracted %d labels from %d descriptions", len(labels), report.scanned)
    write_manifest(_manifest_path(out), "extract", s, {"corpus": s["corpus"], "rules": s.get("rules")},
                   {"out": out, "report": report_path})


def cmd_clean(s):
    require(s, "edges", "labels", "out")
    _existing(s, "edges", "labels", "taxonomy", "prior")
    t, prior = _taxonomy_and_prior(s)
    hp = _hp(s)
    labels = read_labels(s["labels"], t)
    graph = read_edges(s["edges"], users=(acc.user_id for acc in labels))
    meta = read_feature_metadata(s.get("metadata"))
    kept, rows = clean_labels(labels, graph, meta, t, prior, hp, k=float(s["mad_k"]), workers=int(s["workers"]))
    out = Path(s["out"])
    write_labels(kept, t, out)
    report_path = Path(s["report"]) if s.get("report") else out.with_name(out.name + ".flags.tsv")
    write_flag_report(rows, report_path)
    log.info("flagged %d of %d labelled accounts", sum(r.flagged for r in rows), len(rows))
    write_manifest(_manifest_path(out), "clean", s, _inputs(s, "edges", "labels", "metadata", "taxonomy", "prior"),
                   {"out": out, "report": report_path})


def _inputs(s, *keys):
    return {k: s.get(k) for k in keys}


def cmd_train(s):
    require(s, "edges", "labels", "model")
    _existing(s, "edges", "labels", "taxonomy", "prior")
    t, prior = _taxonomy_and_prior(s)
    hp = _hp(s)
    labels = read_labels(s["labels"], t)
    graph = read_edges(s["edges"], users=(acc.user_id for acc in labels))
    meta = read_feature_metadata(s.get("metadata"))
    outputs = {"model": Path(s["model"])}
    frac = float(s["holdout_fraction"])
    if frac > 0:
        require(s, "seed")
        labels, test = split_holdout(labels, frac, int(s["seed"]))
        base = Path(s["model"])
        outputs["train_labels"] = base.with_name(base.name + ".train.tsv")
        outputs["test_labels"] = base.with_name(base.name + ".test.tsv")
        write_labels(labels, t, outputs["train_labels"])
        write_labels(test, t, outputs["test_labels"])
    model = train(graph, labels, meta, t, prior, hp)
    save_model(model, outputs["model"])
    log.info("trained on %d labels, %d features", len(labels), model.M)
    write_manifest(_manifest_path(outputs["model"]), "train", s,
                   _inputs(s, "edges", "labels", "metadata", "taxonomy", "prior"), outputs)


def cmd_predict(s):
    require(s, "model", "edges", "out")
    _existing(s, "model", "edges")
    model = load_model(s["model"])
    out = Path(s["out"])
    n = 0
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        groups = group_edge_chunks(iter_edge_chunks(s["edges"], int(s["chunk_size"])))
        for uid, post, mode in predict_stream(model, groups):
            fh.write(f"{uid}\t{mode}\t{','.join(repr(float(p)) for p in post)}\n")
            n += 1
    log.info("scored %d accounts", n)
    write_manifest(_manifest_path(out), "predict", s, _inputs(s, "model", "edges"), {"out": out})


def read_predictions(path) -> tuple[dict[int, int], dict[int, np.ndarray]]:
    modes, posts = {}, {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                uid, mode, probs = raw.rstrip("\n").split("\t")
                modes[int(uid)] = int(mode)
                posts[int(uid)] = np.array([float(x) for x in probs.split(",")])
    return modes, posts


def cmd_evaluate(s):
    require(s, "model", "edges", "labels", "out", "seed")
    _existing(s, "model", "edges", "labels")
    model = load_model(s["model"])
    t = model.taxonomy
    labels = read_labels(s["labels"], t)
    if not labels:
        raise DataError(f"no usable labels in {s['labels']}")
    graph = read_edges(s["edges"], users=(acc.user_id for acc in labels))
    seed = int(s["seed"])
    scored = predict_stream(model, ((acc.user_id, graph.followed(acc.user_id)) for acc in labels))
    ids, posts = [], []
    for uid, post, _ in scored:
        ids.append(uid)
        posts.append(post)
    posts = np.array(posts).reshape(len(ids), model.n_categories)
    truth = resolve_truth(labels, seed)
    prior = np.asarray(model.prior)
    names = t.labels
    if s["coarse3"]:
        if not t.is_default():
            raise DataError("--coarse3 needs the default 10-band taxonomy")
        posts = coarsen(posts)
        truth = {u: coarsen(c) for u, c in truth.items()}
        prior = coarsen(prior)
        names = list(COARSE_LABELS)
    predicted = {u: int(np.argmax(p)) for u, p in zip(ids, posts)}
    metrics = score_metrics(truth, predicted, names)
    baseline = score_metrics(truth, prior_baseline(prior, ids, seed + 1), names)
    curves = roc_auc([truth[u] for u in ids], posts)

    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = {name: out / name for name in ("metrics.tsv", "baseline.tsv", "confusion.tsv", "roc.tsv", "auc.tsv")}
    files["metrics.tsv"].write_text(metrics.to_text(), encoding="utf-8")
    files["baseline.tsv"].write_text(baseline.to_text(), encoding="utf-8")
    files["confusion.tsv"].write_text(
        "".join("\t".join(str(int(v)) for v in row) + "\n" for row in metrics.confusion), encoding="utf-8")
    write_roc_points(curves, files["roc.tsv"])
    files["auc.tsv"].write_text("".join(
        f"{c}\t{names[c]}\t{'absent' if cur is None else repr(cur.auc)}\n" for c, cur in sorted(curves.items())),
        encoding="utf-8")
    log.info("micro-F1 %.4f (prior baseline %.4f)", metrics.micro_f1, baseline.micro_f1)
    write_manifest(out / "manifest.json", "evaluate", s, _inputs(s, "model", "edges", "labels"),
                   {k: v for k, v in files.items()})


def cmd_simulate(s):
    require(s, "users", "features", "seed", "out")
    _existing(s, "taxonomy", "prior")
    t = read_taxonomy(s.get("taxonomy"))
    prior = tuple(default_prior(t, s.get("prior")))
    try:
        config = SimConfig(int(s["users"]), int(s["features"]), int(s["seed"]), taxonomy=t, prior=prior,
                           K=float(s["K"]), alpha=float(s["alpha"]),
                           follower_range=(float(s["follower_low"]), float(s["follower_high"])),
                           outlier_fraction=float(s["outlier_fraction"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = generate(config, s["out"])
    write_manifest(Path(s["out"]) / "manifest.json", "simulate", s, _inputs(s, "taxonomy", "prior"), paths)


def cmd_aggregate(s):
    require(s, "predictions", "out")
    _existing(s, "predictions", "taxonomy")
    t = read_taxonomy(s.get("taxonomy"))

    def modes():
        with open(s["predictions"], encoding="utf-8") as fh:
            for raw in fh:
                if raw.strip():
                    yield int(raw.split("\t", 2)[1])

    pop = aggregate_population(modes(), len(t))
    out = Path(s["out"])
    out.write_text(pop.to_text(t.labels), encoding="utf-8")
    write_manifest(_manifest_path(out), "aggregate", s, _inputs(s, "predictions", "taxonomy"), {"out": out})


def cmd_rank_features(s):
    require(s, "model", "out")
    _existing(s, "model")
    model = load_model(s["model"])
    d = category_given_follow(model)
    k = int(s["top_k"])
    out = Path(s["out"])
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for a, name in enumerate(model.taxonomy.labels):
            order = np.lexsort((model.feature_ids, -d[:, a]))[:k]
            for rank, i in enumerate(order, 1):
                row = ",".join(f"{v:.4f}" for v in d[i])
                fh.write(f"{a}\t{name}\t{rank}\t{int(model.feature_ids[i])}\t{float(d[i, a])!r}\t{row}\n")
    write_manifest(_manifest_path(out), "rank-features", s, _inputs(s, "model"), {"out": out})


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--workers", type=int, help="worker threads inside a stage (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--taxonomy", help="taxonomy file (default: built-in 10 bands)")
    model_opts.add_argument("--prior", help="prior file, one probability per line")
    model_opts.add_argument("--alpha", type=float)
    model_opts.add_argument("--K", type=float, dest="K")
    model_opts.add_argument("--min-support", type=int)

    parser = _Parser(prog="followage", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="label accounts from description text")
    p.add_argument("--corpus")
    p.add_argument("--rules", help="rule file (default: shipped rules)")
    p.add_argument("--lang", help="comma separated languages to keep, e.g. en,pt")
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("clean", parents=[common, model_opts], help="flag high-influence labelled accounts")
    p.add_argument("--edges")
    p.add_argument("--labels")
    p.add_argument("--metadata")
    p.add_argument("--mad-k", type=float)
    p.add_argument("--out", help="kept labels")
    p.add_argument("--report", help="flag report (user, score, flagged)")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("train", parents=[common, model_opts], help="train and write a model snapshot")
    p.add_argument("--edges")
    p.add_argument("--labels")
    p.add_argument("--metadata")
    p.add_argument("--holdout-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score accounts from an edge file sorted by user")
    p.add_argument("--model")
    p.add_argument("--edges")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metrics on held-out labels")
    p.add_argument("--model")
    p.add_argument("--edges")
    p.add_argument("--labels")
    p.add_argument("--seed", type=int)
    p.add_argument("--coarse3", action="store_true", help="score as under-18 / 18-44 / 45+")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic labelled graph")
    p.add_argument("--users", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--taxonomy")
    p.add_argument("--prior")
    p.add_argument("--alpha", type=float)
    p.add_argument("--K", type=float, dest="K")
    p.add_argument("--follower-low", type=float)
    p.add_argument("--follower-high", type=float)
    p.add_argument("--outlier-fraction", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", parents=[common], help="population counts from predictions")
    p.add_argument("--predictions")
    p.add_argument("--taxonomy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("rank-features", parents=[common], help="most discriminative features per category")
    p.add_argument("--model")
    p.add_argument("--top-k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve(args)
        args.func(settings)
    except UsageError as exc:
        print(f"followage: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TaxonomyError, RuleError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"followage: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"followage: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
