"""Command-line entry point: ``narrative-infill {stats,synth,train,generate,evaluate,gradcheck}``.

Exit codes: 0 success, 2 bad input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocabulary,
    corpus_stats,
    encode_narrative,
    file_checksum,
    load_corpus,
    save_corpus,
    split_corpus,
)
from .infer import GeneratedNarrative, generate_corpus
from .metrics import evaluate_run
from .model import ModelConfig, ModelParams, TrainingDiverged, train
from .nn.checkpoint import CheckpointError, load_checkpoint
from .synth import synthesize

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("narrative_infill")


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def write_manifest(run_dir: Path, config: ModelConfig, corpus_path: Path, artifacts: dict[str, Path]) -> Path:
    manifest = {
        "tool_version": __version__,
        "seed": config.seed,
        "config": asdict(config),
        "corpus": {"path": str(corpus_path), "sha256": file_checksum(corpus_path)},
        "artifacts": {k: {"path": p.name, "sha256": file_checksum(p)} for k, p in artifacts.items()},
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def verify_manifest(path: Path) -> dict:
    """Load a run manifest and check every listed artifact against its checksum."""
    manifest = json.loads(path.read_text(encoding="utf-8"))
    for name, entry in manifest["artifacts"].items():
        p = path.parent / entry["path"]
        if not p.exists():
            raise InputError(f"manifest artifact {name} missing: {p}")
        if file_checksum(p) != entry["sha256"]:
            raise InputError(f"manifest artifact {name} fails its checksum: {p}")
    return manifest


def _load_run(checkpoint: Path) -> tuple[ModelConfig, Vocabulary, ModelParams]:
    run_dir = checkpoint.parent
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        verify_manifest(manifest_path)
    config_path, vocab_path = run_dir / "config.txt", run_dir / "vocab.json"
    for p in (checkpoint, config_path, vocab_path):
        if not p.exists():
            raise InputError(f"missing run artifact {p}")
    config = ModelConfig.load(config_path)
    vocab = Vocabulary.from_json(vocab_path.read_text(encoding="utf-8"))
    arrays, _ = load_checkpoint(checkpoint)
    return config, vocab, ModelParams.from_numpy(arrays, dtype=config.np_dtype)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus, args.format)
    if not corpus:
        raise InputError(f"{args.corpus}: corpus is empty")
    _emit(corpus_stats(corpus).to_dict(), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    corpus = synthesize(args.n_narratives, args.n_steps, args.vocab_size, args.d_img, args.seed,
                        overlap=args.overlap, words_per_step=(args.min_words, args.max_words),
                        noise=args.noise)
    if args.out is None:
        raise InputError("synth needs --out")
    save_corpus(args.out, corpus)
    log.info("wrote %d narratives to %s", len(corpus), args.out)
    return EXIT_OK


def _encode_all(corpus, vocab, config):
    return [encode_narrative(n, vocab, config.max_steps, config.max_words) for n in corpus]


def cmd_train(args) -> int:
    config = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.corpus is None or args.out is None:
        raise InputError("train needs --corpus and --out")
    corpus = load_corpus(args.corpus)
    if not corpus:
        raise InputError(f"{args.corpus}: corpus is empty")
    train_set, val_set, _ = split_corpus(corpus, (0.8, 0.1, 0.1), config.seed)
    if not train_set:
        raise InputError("training split is empty; the corpus needs at least 2 narratives")
    vocab = build_vocabulary(train_set, config.vocab_min_freq, config.vocab_max_size or None)
    config = config.replace(vocab_size=len(vocab), d_img=corpus[0].d_img)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "vocab.json").write_text(vocab.to_json(), encoding="utf-8")
    (run_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    result = train(_encode_all(train_set, vocab, config), config, _encode_all(val_set, vocab, config),
                   out_dir=run_dir)
    artifacts = {
        "config": run_dir / "config.txt",
        "vocab": run_dir / "vocab.json",
        "checkpoint": result.checkpoint_path,
        "train_log": run_dir / "train_log.jsonl",
    }
    write_manifest(run_dir, config, Path(args.corpus), artifacts)
    print(json.dumps({"checkpoint": str(result.checkpoint_path), "best_epoch": result.best_epoch,
                      "final": result.log[-1] if result.log else None}))
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.checkpoint is None or args.corpus is None:
        raise InputError("generate needs --checkpoint and --corpus")
    config, vocab, params = _load_run(Path(args.checkpoint))
    corpus = load_corpus(args.corpus)
    if args.split != "all":
        parts = dict(zip(("train", "val", "test"), split_corpus(corpus, (0.8, 0.1, 0.1), config.seed)))
        corpus = parts[args.split]
    data = _encode_all(corpus, vocab, config)
    if args.infill_index is not None:
        bad = [e.id for e in data if args.infill_index >= e.n_steps or args.infill_index < 0]
        if bad:
            raise InputError(f"--infill-index {args.infill_index} out of range for narratives {bad[:5]}")
    gens = generate_corpus(data, params, vocab, beam=args.beam or config.beam,
                           max_len=config.max_words + 2, infill_index=args.infill_index,
                           sweep=args.sweep)
    lines = "".join(g.to_json() + "\n" for g in gens)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.generations is None or args.corpus is None:
        raise InputError("evaluate needs --generations and --corpus")
    text = Path(args.generations).read_text(encoding="utf-8")
    try:
        gens = [GeneratedNarrative.from_json(line) for line in text.splitlines() if line.strip()]
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"{args.generations}: malformed generation record ({exc})") from None
    corpus = load_corpus(args.corpus)
    try:
        report = evaluate_run(gens, corpus, per_step=args.per_step)
    except KeyError as exc:
        raise InputError(str(exc)) from None
    _emit(report.to_dict(), args.out)
    if report.by_infill_index:
        _print_sweep_table(report)
    return EXIT_OK


def _print_sweep_table(report) -> None:
    cols = list(report.by_infill_index)
    print("metric      " + "".join(f"{c:>9}" for c in cols), file=sys.stderr)
    for name in report.SCORES:
        vals = "".join(f"{100 * getattr(report.by_infill_index[c], name):9.2f}" for c in cols)
        print(f"{name:<12}{vals}", file=sys.stderr)


def cmd_gradcheck(args) -> int:
    from .selfcheck import run_gradcheck_suite

    rows = run_gradcheck_suite(seed=args.seed or 0)
    width = max(len(r.name) for r in rows)
    ok = True
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{r.name:<{width}}  max_rel_err={r.error:.3e}  tol={r.tolerance:.0e}  {status}")
    return EXIT_OK if ok else EXIT_NUMERIC


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narrative-infill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    p.add_argument("corpus_path", nargs="?")
    p.add_argument("--corpus")
    p.add_argument("--format", choices=("jsonl", "json"), default="jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--n-narratives", type=int, default=200)
    p.add_argument("--n-steps", type=int, default=5)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--d-img", type=int, default=32)
    p.add_argument("--overlap", type=float, default=0.6)
    p.add_argument("--min-words", type=int, default=5)
    p.add_argument("--max-words", type=int, default=9)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model; writes checkpoint, log and manifest")
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="beam-search generation, optionally with infilling")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--infill-index", type=int)
    group.add_argument("--sweep", action="store_true")
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    p.add_argument("--beam", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU/ROUGE-L/METEOR-lite report")
    p.add_argument("--generations")
    p.add_argument("--corpus")
    p.add_argument("--per-step", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference self-check of every differentiable op")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "stats":
        args.corpus = args.corpus or args.corpus_path
        if args.corpus is None:
            print("error: stats needs a corpus path", file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, CorpusError, CheckpointError, FileNotFoundError, ValueError,
            IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
