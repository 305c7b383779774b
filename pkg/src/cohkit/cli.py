"""Command-line interface.

Subcommands: synth (generate a synthetic corpus), permute (build a
binary ordering corpus), train (run an ensemble from a JSON run
config), eval (score a test corpus and write a JSON report), and
saliency (render token-level salience as HTML).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (
    Corpus,
    DataError,
    GrRule,
    SynthSpec,
    generate_permutations,
    load_embeddings,
    read_jsonl,
    synth_corpus,
    write_jsonl,
)
from .evaluation import (
    EVAL_METRICS,
    evaluate_corpus,
    saliency,
    saliency_html,
    similarity_scatter,
)
from .model import Checkpoint, CoherenceModelConfig
from .training import NumericError, TrainConfig, train_ensemble, write_history_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


# Hyperparameter presets for the four corpus shapes the toolkit targets.
PRESETS: dict[str, dict] = {
    "wsj-like": {
        "model": {
            "variant": "mtl",
            "levels": 2,
            "embed_dim": 50,
            "word_hidden": 100,
            "sent_hidden": 100,
            "num_classes": 1,
            "alpha": 0.7,
            "beta": 0.3,
        },
        "train": {"selection_metric": "pra", "ensemble_runs": 5},
    },
    "yahoo-like": {
        "model": {
            "variant": "mtl",
            "levels": 3,
            "embed_dim": 300,
            "word_hidden": 100,
            "sent_hidden": 100,
            "para_hidden": 100,
            "num_classes": 3,
            "alpha": 1.0,
            "beta": 0.1,
        },
        "train": {"selection_metric": "accuracy", "ensemble_runs": 10},
    },
    "clinton-like": {
        "model": {
            "variant": "mtl",
            "levels": 3,
            "embed_dim": 300,
            "word_hidden": 100,
            "sent_hidden": 200,
            "para_hidden": 100,
            "num_classes": 3,
            "alpha": 1.0,
            "beta": 0.1,
        },
        "train": {"selection_metric": "accuracy", "ensemble_runs": 10},
    },
    "enron-like": {
        "model": {
            "variant": "mtl",
            "levels": 3,
            "embed_dim": 300,
            "word_hidden": 100,
            "sent_hidden": 100,
            "para_hidden": 100,
            "num_classes": 3,
            "alpha": 1.0,
            "beta": 0.2,
        },
        "train": {"selection_metric": "accuracy", "ensemble_runs": 10},
    },
}


def resolve_run_config(raw: dict) -> tuple[CoherenceModelConfig, TrainConfig, dict]:
    """Merge an optional preset with explicit overrides into full configs.

    Returns (model config, train config, data section).  Resolving the
    dict produced by :func:`resolved_run_dict` yields identical configs,
    so presets round-trip.
    """
    if not isinstance(raw, dict):
        raise UsageError("run config must be a JSON object")
    unknown = set(raw) - {"preset", "model", "train", "data", "output_dir"}
    if unknown:
        raise UsageError(f"unknown run config keys: {sorted(unknown)}")
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        model_kwargs.update(PRESETS[preset]["model"])
        train_kwargs.update(PRESETS[preset]["train"])
    model_kwargs.update(raw.get("model", {}))
    train_kwargs.update(raw.get("train", {}))
    try:
        model_cfg = CoherenceModelConfig.from_dict(model_kwargs)
        train_cfg = TrainConfig.from_dict(train_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return model_cfg, train_cfg, dict(raw.get("data", {}))


def resolved_run_dict(model_cfg: CoherenceModelConfig, train_cfg: TrainConfig, data: dict) -> dict:
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": data}


def split_dev(corpus: Corpus, seed: int, fraction: float = 0.1) -> tuple[Corpus, Corpus]:
    """Deterministic 9:1 split keeping each original grouped with its
    permutations so ranking metrics stay meaningful on both sides."""
    groups: dict[str, list] = {}
    for doc in corpus:
        key = doc.origin.source if doc.origin.kind == "permutation" else doc.id
        groups.setdefault(key, []).append(doc)
    keys = sorted(groups)
    if len(keys) < 2:
        raise DataError("cannot split a corpus with fewer than two document groups")
    rng = np.random.default_rng([seed, 303])
    order = rng.permutation(len(keys))
    n_dev = max(1, int(round(len(keys) * fraction)))
    n_dev = min(n_dev, len(keys) - 1)
    dev_keys = {keys[i] for i in order[:n_dev]}
    train_docs = [d for k in keys if k not in dev_keys for d in groups[k]]
    dev_docs = [d for k in keys if k in dev_keys for d in groups[k]]
    return Corpus(train_docs), Corpus(dev_docs)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    raw = _read_json(Path(args.spec), "synthesis spec")
    rule_raw = raw.pop("gr_rule", {})
    if not isinstance(rule_raw, dict):
        raise UsageError("gr_rule must be an object")
    rule = GrRule(
        first=rule_raw.get("first", GrRule.first),
        last=rule_raw.get("last", GrRule.last),
        default=rule_raw.get("else", rule_raw.get("default", GrRule.default)),
    )
    try:
        spec = SynthSpec(gr_rule=rule, **raw)
    except TypeError as exc:
        raise UsageError(f"bad synthesis spec: {exc}") from exc
    corpus = synth_corpus(spec)
    write_jsonl(corpus, args.out)
    print(f"wrote {len(corpus)} documents to {args.out}")
    return EXIT_OK


def cmd_permute(args) -> int:
    corpus = read_jsonl(args.input)
    from .data import BINARY, CoherenceLabel, Document

    out_docs = []
    skipped = 0
    permuted_count = 0
    for doc in corpus.originals():
        if len(doc.sentences) < 2:
            log.warning("skipping %s: fewer than 2 sentences", doc.id)
            skipped += 1
            continue
        original = Document(
            doc.id, doc.paragraphs, CoherenceLabel(BINARY, 1), doc.origin
        )
        permutations = generate_permutations(original, args.k, args.seed)
        out_docs.append(original)
        out_docs.extend(permutations)
        permuted_count += len(permutations)
    if not out_docs:
        raise DataError("no documents with at least 2 sentences to permute")
    out = Corpus(out_docs)
    write_jsonl(out, args.output)
    originals = len(out.originals())
    avg_sents = sum(len(d.sentences) for d in out) / len(out)
    print(f"{'split':<10}{'#docs':>8}{'#synthetic-docs':>18}{'avg-sents':>12}")
    print(f"{'output':<10}{originals:>8}{permuted_count:>18}{avg_sents:>12.2f}")
    if skipped:
        print(f"skipped {skipped} document(s) with fewer than 2 sentences")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _read_json(Path(args.config), "run config")
    model_cfg, train_cfg, data = resolve_run_config(raw)
    base = Path(args.config).resolve().parent

    def _path(key: str) -> Path | None:
        value = data.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    train_path = _path("train")
    if train_path is None:
        raise UsageError("run config needs data.train")
    train_corpus = read_jsonl(train_path)
    dev_path = _path("dev")
    if dev_path is not None:
        dev_corpus = read_jsonl(dev_path)
    else:
        train_corpus, dev_corpus = split_dev(train_corpus, train_cfg.seed)
        log.info(
            "no dev corpus given; split 9:1 by source group (%d train / %d dev docs)",
            len(train_corpus),
            len(dev_corpus),
        )
    embeddings = None
    emb_path = _path("embeddings")
    if emb_path is not None:
        embeddings = load_embeddings(emb_path, model_cfg.embed_dim)

    output_dir = Path(raw.get("output_dir", "."))
    if not output_dir.is_absolute():
        output_dir = base / output_dir
    output_dir.mkdir(parents=True, exist_ok=True)

    checkpoints, histories = train_ensemble(
        train_corpus, dev_corpus, model_cfg, train_cfg, embeddings
    )
    from .plots import plot_training_history

    (output_dir / "run_config.json").write_text(
        json.dumps(resolved_run_dict(model_cfg, train_cfg, data), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    for run, (ckpt, rows) in enumerate(zip(checkpoints, histories)):
        ckpt.save(output_dir / f"checkpoint_run{run}.json")
        write_history_csv(rows, output_dir / f"history_run{run}.csv")
        plot_training_history(rows, output_dir / f"curves_run{run}.png")
        best = max(rows, key=lambda r: (r.dev_metric, -r.epoch))
        print(
            f"run {run} (seed {train_cfg.seed + run}): "
            f"best dev_{train_cfg.selection_metric} = {best.dev_metric:.4f} at epoch {best.epoch}"
        )
    print(f"artifacts in {output_dir}")
    return EXIT_OK


def _collect_checkpoints(paths: list[str]) -> list[Checkpoint]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found = sorted(p.glob("checkpoint_run*.json")) or sorted(p.glob("*.json"))
            files.extend(found)
        else:
            files.append(p)
    if not files:
        raise DataError("no checkpoint files found")
    return [Checkpoint.load(f) for f in files]


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(EVAL_METRICS)
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}; available: {', '.join(EVAL_METRICS)}")
    checkpoints = _collect_checkpoints(args.checkpoints)
    corpus = read_jsonl(args.test)
    report = evaluate_corpus(checkpoints, corpus, metrics)
    out = Path(args.out)
    out.write_text(report.to_json(), encoding="utf-8")
    if "pearson" in report.metrics:
        from .plots import plot_similarity_scatter

        sims, scores = similarity_scatter(checkpoints, corpus)
        figure = out.with_name(out.stem + "_similarity.png")
        plot_similarity_scatter(sims, scores, figure, r=report.metrics["pearson"])
        print(f"figure: {figure}")
    for name, value in sorted(report.metrics.items()):
        print(f"{name} = {value:.4f}")
    for cls, value in sorted(report.f1_per_class.items()):
        print(f"f1[{cls}] = {value:.4f}")
    print(f"report: {out}")
    return EXIT_OK


def cmd_saliency(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    corpus = read_jsonl(args.input)
    matches = [d for d in corpus if d.id == args.doc]
    if not matches:
        raise DataError(f"document {args.doc!r} not found in {args.input}")
    model = checkpoint.to_model()
    records = saliency(model, matches[0])
    Path(args.out).write_text(saliency_html(matches[0], records), encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


def _read_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {what} {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cohkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--spec", required=True, help="synthesis spec JSON")
    p.add_argument("--out", required=True, help="output corpus (JSON Lines)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("permute", help="build a binary ordering corpus")
    p.add_argument("--input", required=True, help="input corpus (JSON Lines)")
    p.add_argument("--k", type=int, default=20, help="permutations per document (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_permute)

    p = sub.add_parser("train", help="train an ensemble from a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a test corpus")
    p.add_argument(
        "--checkpoints", nargs="+", required=True, help="checkpoint files or directories"
    )
    p.add_argument("--test", required=True, help="test corpus (JSON Lines)")
    p.add_argument("--metrics", required=True, help=f"comma list of {', '.join(EVAL_METRICS)}")
    p.add_argument("--out", default="report.json", help="report path (default report.json)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("saliency", help="render token salience for one document")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="corpus containing the document")
    p.add_argument("--doc", required=True, help="document id")
    p.add_argument("--out", required=True, help="output HTML path")
    p.set_defaults(fn=cmd_saliency)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
