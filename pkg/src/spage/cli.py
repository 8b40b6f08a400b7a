"""Command line entry point: ``spage {train,eval,predict,sweep,dump-graph,make-toy}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (CorpusError, Dialogue, Vocabulary, attach_features, encode_corpus,
                     local_speaker_ids, load_corpus, save_corpus)
from .encoder import EmbeddingTable, FeatureFileError, load_precomputed, load_word_vectors
from .graph import build_graph
from .model import ModelConfig
from .numerics import NumericError, no_grad
from .toy import make_toy_corpus
from .train import evaluate, sweep, train_model

log = logging.getLogger("spage")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
_DERIVED = {"num_labels", "num_speakers", "seed"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model configuration (overrides --config)")
    for f in dataclasses.fields(ModelConfig):
        if f.name in _DERIVED:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS)
        elif isinstance(default, tuple):
            g.add_argument(flag, dest=f.name, type=int, nargs="+", default=argparse.SUPPRESS)
        elif default is None:
            g.add_argument(flag, dest=f.name, type=str, default=argparse.SUPPRESS)
        else:
            g.add_argument(flag, dest=f.name, type=type(default), default=argparse.SUPPRESS)


def _config(args) -> ModelConfig:
    values: dict = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg})") from exc
        if not isinstance(values, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        for key in _DERIVED - {"seed"}:
            values.pop(key, None)
    for f in dataclasses.fields(ModelConfig):
        if f.name in vars(args) and f.name not in _DERIVED:
            values[f.name] = getattr(args, f.name)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        config = ModelConfig.from_dict(values)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    return config


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _features(dialogues: list[Dialogue], path: str | None, width: int | None) -> int | None:
    """Attach features from ``path`` (if given); return the feature width in use."""
    if path:
        expected = {d.dialogue_id: len(d) for d in dialogues}
        if width is None:
            with open(path, encoding="utf-8") as fh:
                first = next((ln for ln in fh if ln.strip()), None)
            if first is None:
                raise FeatureFileError(f"{path}: no feature records")
            try:
                width = len(json.loads(first)["vector"])
            except (ValueError, KeyError, TypeError) as exc:
                raise FeatureFileError(f"{path}:1: bad feature record ({exc})") from exc
        attach_features(dialogues, load_precomputed(path, expected, width))
        return width
    if dialogues and all(d.features is not None for d in dialogues):
        widths = {d.features.shape[1] for d in dialogues}
        if len(widths) != 1:
            raise CorpusError(f"inconsistent vector widths in corpus: {sorted(widths)}")
        return widths.pop()
    return None


def _table(records, config: ModelConfig, vectors_path: str | None) -> EmbeddingTable:
    tokens = sorted({tok for d in records for utt in d.tokens for tok in utt})
    vectors = None
    if vectors_path:
        vectors = load_word_vectors(vectors_path, set(tokens), config.word_dim)
    return EmbeddingTable.build(tokens, vectors, config.word_dim,
                                np.random.default_rng(config.seed), config.oov_policy)


def _prepare_train(args, config: ModelConfig):
    train_records = load_corpus(args.train)
    if not train_records:
        raise CorpusError(f"{args.train}: training corpus is empty")
    vocab = Vocabulary.build(train_records)
    train = encode_corpus(train_records, vocab)
    dev = test = None
    if getattr(args, "dev", None):
        dev = encode_corpus(load_corpus(args.dev, labels=vocab.labels), vocab)
    if getattr(args, "test", None):
        test = encode_corpus(load_corpus(args.test, labels=vocab.labels), vocab)
    width = _features(train, args.features, None)
    if dev is not None:
        _features(dev, args.dev_features, width)
    if test is not None:
        _features(test, getattr(args, "test_features", None), width)
    if width is not None and (args.features or any(d.tokens is None for d in train)):
        config = config.replace(input_mode="features")
    if config.input_mode == "features":
        if width is None:
            raise CorpusError("feature input mode needs --features or a 'vector' on every turn")
        config = config.replace(d_u=width)
    table = None
    if config.input_mode == "text":
        if any(d.tokens is None for d in train):
            raise CorpusError("text input mode needs a 'text' field on every training turn")
        table = _table(train, config, args.word_vectors)
    return config, vocab, table, train, dev, test


def cmd_train(args) -> int:
    config = _config(args)
    config, vocab, table, train, dev, _ = _prepare_train(args, config)
    seeds = args.seeds or [config.seed]
    runs, best_model, best_score = [], None, None
    for seed in seeds:
        result = train_model(train, dev, config.replace(seed=seed), vocab, table)
        target = dev if dev else train
        metrics = evaluate(target, result.model)
        runs.append({"seed": seed, "best_epoch": result.best_epoch,
                     "split": "dev" if dev else "train", **metrics.to_dict()})
        if best_score is None or metrics.weighted_f1 > best_score:
            best_model, best_score = result.model, metrics.weighted_f1
    if args.out:
        save_checkpoint(best_model, args.out)
    report = {"runs": runs,
              "mean_weighted_f1": float(np.mean([r["weighted_f1"] for r in runs])),
              "mean_micro_f1": float(np.mean([r["micro_f1"] for r in runs])),
              "mean_accuracy": float(np.mean([r["accuracy"] for r in runs]))}
    _write_json(report, args.metrics_out)
    return 0


def _load_for_model(args, model, require_labels: bool) -> list[Dialogue]:
    labels = model.vocab.labels if require_labels else None
    dialogues = encode_corpus(load_corpus(args.data, labels=labels), model.vocab, require_labels)
    width = model.config.d_u if model.config.input_mode == "features" else None
    if args.features:
        _features(dialogues, args.features, width)
    return dialogues


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dialogues = _load_for_model(args, model, require_labels=True)
    _write_json(evaluate(dialogues, model).to_dict(), args.out)
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dialogues = _load_for_model(args, model, require_labels=False)
    lines = []
    for d in dialogues:
        pred = model.predict(d)
        lines.append(json.dumps({"dialogue_id": d.dialogue_id,
                                 "labels": [model.vocab.labels[k] for k in pred]}))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    try:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.grid}: invalid JSON ({exc.msg})") from exc
    if not isinstance(grid, (dict, list)):
        raise UsageError(f"{args.grid}: grid must be an object or a list of objects")
    config = _config(args)
    config, vocab, table, train, dev, test = _prepare_train(args, config)
    if dev is None:
        raise UsageError("sweep needs --dev")
    _write_json(sweep(grid, train, dev, config, vocab, table, test), args.out)
    return 0


def cmd_dump_graph(args) -> int:
    records = load_corpus(args.data)
    wanted = [r for r in records if args.dialogue_id in (None, r.dialogue_id)]
    if not wanted:
        raise CorpusError(f"dialogue {args.dialogue_id!r} not found in {args.data}")
    record = wanted[0]
    names = [t.speaker for t in record.turns]
    alpha = None
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        dialogues = _load_for_model(args, model, require_labels=False)
        d = next(x for x in dialogues if x.dialogue_id == record.dialogue_id)
        with no_grad():
            out = model.forward(d)
        graph = out.graph
        if out.alphas:
            alpha = out.alphas[min(args.layer, len(out.alphas)) - 1].data
    else:
        past = args.past_window if args.past_window is not None else 10
        future = args.future_window if args.future_window is not None else 10
        graph = build_graph(len(names), local_speaker_ids(names), past, future)
    text = graph.dumps(alpha, names)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_make_toy(args) -> int:
    save_corpus(args.out, make_toy_corpus(args.dialogues, seed=args.seed, max_filler=args.max_filler))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spage", description="Per-utterance emotion labelling for dialogues.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def training_inputs(p):
        p.add_argument("--train", required=True, help="training corpus (JSONL)")
        p.add_argument("--dev", help="dev corpus used for model selection")
        p.add_argument("--features", help="precomputed utterance features for --train")
        p.add_argument("--dev-features", help="precomputed utterance features for --dev")
        p.add_argument("--word-vectors", help="GloVe-format text file of word vectors")
        p.add_argument("--config", help="JSON file of ModelConfig fields")
        p.add_argument("--seed", type=int, default=None)
        _add_config_flags(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    training_inputs(p)
    p.add_argument("--seeds", type=int, nargs="+", help="train once per seed and report the mean")
    p.add_argument("--out", help="checkpoint path (best run when several seeds)")
    p.add_argument("--metrics-out", help="write the metrics report here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train and evaluate every cell of a config grid")
    training_inputs(p)
    p.add_argument("--grid", required=True, help='JSON grid, e.g. {"pag_layers": [1, 2, 4]}')
    p.add_argument("--test", help="report metrics on this corpus instead of --dev")
    p.add_argument("--test-features")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_sweep)

    for name, func, helptext in [("eval", cmd_eval, "score a labelled corpus"),
                                 ("predict", cmd_predict, "label a corpus (JSONL to stdout)")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--features")
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("dump-graph", help="write one dialogue graph as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--dialogue-id")
    p.add_argument("--checkpoint", help="use the model's windows and include edge weights")
    p.add_argument("--features")
    p.add_argument("--layer", type=int, default=1, help="graph layer whose weights are dumped")
    p.add_argument("--past-window", type=int)
    p.add_argument("--future-window", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_graph)

    p = sub.add_parser("make-toy", help="write the synthetic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-filler", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"spage: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, FeatureFileError, CheckpointError, OSError, ValueError) as exc:
        print(f"spage: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
