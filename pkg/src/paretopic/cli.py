"""Command-line interface: the full pipeline as subcommands.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric or
runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import augment as augment_mod
from . import corpus as corpus_mod
from . import diffnet, evaluate, moo, ntm, setcl, trainer
from .errors import ConfigError, DataError, NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

# config-file key -> TrainConfig field
CONFIG_KEYS = {
    "model.T": ("num_topics", int),
    "model.H": ("hidden", int),
    "setcl.K": ("set_size", int),
    "setcl.S": ("shuffle_count", int),
    "setcl.tau": ("temperature", float),
    "setcl.pooling_positive": ("pool_positive", str),
    "setcl.pooling_negative": ("pool_negative", str),
    "setcl.include_own_negative": ("include_own_negative", lambda s: s.lower() in ("1", "true", "yes")),
    "train.lr": ("learning_rate", float),
    "train.batch_size": ("batch_size", int),
    "train.epochs": ("epochs", int),
    "train.seed": ("seed", int),
    "moo.strategy": ("moo_strategy", str),
    "moo.linear_alpha": ("linear_alpha", float),
    "moo.tie_eps": ("tie_eps", float),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def parse_config_file(path: str) -> dict:
    """Flat key=value config; '#' starts a comment."""
    overrides = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        field, conv = CONFIG_KEYS[key]
        try:
            overrides[field] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return overrides


def resolve_train_config(args) -> trainer.TrainConfig:
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        field, conv = CONFIG_KEYS[key]
        try:
            overrides[field] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "seed" not in overrides:
        raise ConfigError("train requires an explicit seed (--seed or train.seed)")
    config = trainer.TrainConfig(**overrides)
    config.validate()
    return config


def print_resolved_config(config: trainer.TrainConfig) -> None:
    print("# resolved config")
    reverse = {field: key for key, (field, _) in CONFIG_KEYS.items()}
    for f in dataclasses.fields(config):
        key = reverse.get(f.name, f.name)
        print(f"{key} = {getattr(config, f.name)}")


def _load_vocab_corpus(corpus_path, vocab_path, split_tag="train"):
    vocab = corpus_mod.Vocabulary.load(vocab_path)
    entries = corpus_mod.load_corpus(corpus_path)
    return corpus_mod.make_corpus(entries, vocab, split_tag=split_tag)


def cmd_build_vocab(args) -> int:
    print(f"# build-vocab input={args.input} min_df={args.min_df} "
          f"max_df_frac={args.max_df_frac} max_size={args.max_size}")
    entries = corpus_mod.load_corpus(args.input)
    vocab = corpus_mod.build_vocabulary([t for t, _ in entries], min_df=args.min_df,
                                        max_df_frac=args.max_df_frac,
                                        max_size=args.max_size)
    vocab.save(args.output)
    print(f"vocabulary of {vocab.size} words written to {args.output}")
    return EXIT_OK


def cmd_augment(args) -> int:
    print(f"# augment input={args.input} mode={args.mode} seed={args.seed}")
    corpus = _load_vocab_corpus(args.input, args.vocab)
    llm_options = None
    if args.mode == "llm":
        if not args.endpoint:
            raise ConfigError("--endpoint is required for llm augmentation")
        llm_options = {"endpoint": args.endpoint, "timeout": args.timeout,
                       "model": args.model}
    triples = augment_mod.build_augmentation_cache(
        corpus, method=args.mode, replace_frac=args.replace_frac,
        drop_frac=args.drop_frac, rng_seed=args.seed, llm_options=llm_options)
    augment_mod.cache_augmentations(triples, args.output)
    print(f"{len(triples)} augmented triples written to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    print_resolved_config(config)
    corpus = _load_vocab_corpus(args.input, args.vocab)
    triples = augment_mod.load_augmentations(args.cache, len(corpus.documents))
    state, records = trainer.fit(corpus, triples, config)
    trainer.save_checkpoint(state, args.checkpoint)
    if args.log:
        trainer.write_train_log(records, args.log)
    final = records[-1] if records else {}
    print(f"trained {len(records)} steps; checkpoint written to {args.checkpoint}")
    if final:
        print(f"final: elbo={final['elbo']:.4f} infonce={final['infonce']:.4f} "
              f"alpha={final['alpha']}")
    return EXIT_OK


def cmd_topics(args) -> int:
    print(f"# topics checkpoint={args.checkpoint} top_n={args.top_n}")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    state = trainer.load_checkpoint(args.checkpoint, expect_vocab_hash=vocab.content_hash())
    topics = ntm.top_words(state.dec, vocab.words, args.top_n)
    evaluate.save_topics(topics, vocab, args.output)
    print(f"{len(topics)} topics written to {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    print(f"# eval topics={args.topics} reference={args.reference}")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    topics = evaluate.load_topics(args.topics, vocab)
    reference = _load_vocab_corpus(args.reference, args.vocab, split_tag="test")
    stats = evaluate.CooccurrenceStats.from_corpus(reference)
    per_topic, mean_npmi = evaluate.npmi(topics, stats)
    td = evaluate.topic_diversity(topics)
    metrics = {"npmi": mean_npmi, "npmi_per_topic": per_topic, "td": td,
               "num_topics": len(topics)}
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True)
    print(f"npmi={mean_npmi:.4f} td={td:.4f} -> {args.output}")
    return EXIT_OK


def cmd_align(args) -> int:
    print(f"# align a={args.checkpoint_a} b={args.checkpoint_b} threshold={args.threshold}")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    state_a = trainer.load_checkpoint(args.checkpoint_a, expect_vocab_hash=vocab.content_hash())
    state_b = trainer.load_checkpoint(args.checkpoint_b, expect_vocab_hash=vocab.content_hash())
    dists_a = [row for row in diffnet.softmax(state_a.dec.beta)]
    dists_b = [row for row in diffnet.softmax(state_b.dec.beta)]
    matching = evaluate.align_topics(dists_a, dists_b, threshold=args.threshold)
    report = [{"topic_a": i, "topic_b": j, "js": js} for i, j, js in matching]
    print(json.dumps(report, indent=2))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True)
    return EXIT_OK


def cmd_classify(args) -> int:
    # The built-in score is a logistic-regression proxy, not the Random Forest
    # protocol; use the exported CSV with an external classifier for that.
    print(f"# classify input={args.input} checkpoint={args.checkpoint}")
    corpus = _load_vocab_corpus(args.input, args.vocab)
    vocab = corpus.vocabulary
    state = trainer.load_checkpoint(args.checkpoint, expect_vocab_hash=vocab.content_hash())
    _, labels, f1 = evaluate.classification_features(corpus, state.enc,
                                                     csv_path=args.output,
                                                     seed=args.seed)
    print(f"feature table written to {args.output} ({len(labels)} rows)")
    if f1 is None:
        print("corpus has unlabeled documents; proxy classifier skipped")
    else:
        print(f"logistic-proxy macro-F1 = {f1:.4f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    print(f"# probe checkpoint={args.checkpoint}")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    state = trainer.load_checkpoint(args.checkpoint, expect_vocab_hash=vocab.content_hash())
    sim = evaluate.similarity_probe(args.text_a, args.text_b, state.enc, vocab)
    print(f"similarity = {sim:.6f}")
    return EXIT_OK


def run_selftest(verbose: bool = True) -> bool:
    """Gradient checks and solver-oracle spot checks; True iff all pass."""
    rng = np.random.default_rng(0)
    results = []

    def check(name, ok):
        results.append((name, ok))
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")

    V, H, T, B, K, S = 30, 12, 6, 10, 3, 2
    enc, dec = ntm.init_params(V, H, T, rng)
    # sparse, modest counts: keeps the loss small so central differences stay
    # accurate on near-zero-gradient coordinates
    Xc = np.zeros((B, V))
    for i in range(B):
        idx = rng.choice(V, 6, replace=False)
        Xc[i, idx] = rng.integers(1, 4, size=6)
    eps = rng.standard_normal((B, T))

    def elbo_of_enc(flat):
        e = ntm.unpack_encoder(flat, V, H, T)
        res = ntm.elbo_with_grads(Xc, e, dec, eps)
        return res.loss, res.g_enc

    err = diffnet.grad_check(elbo_of_enc, ntm.pack_encoder(enc), n_probes=40, rng_seed=1)
    check(f"elbo encoder gradient (rel err {err:.2e})", err < 1e-4)

    def elbo_of_dec(flat):
        d = ntm.unpack_decoder(flat, V, T)
        res = ntm.elbo_with_grads(Xc, enc, d, eps)
        return res.loss, res.g_dec

    err = diffnet.grad_check(elbo_of_dec, ntm.pack_decoder(dec), n_probes=40, rng_seed=2)
    check(f"elbo decoder gradient (rel err {err:.2e})", err < 1e-4)

    Z = rng.standard_normal((B, T))
    Zp = rng.standard_normal((B, T))
    Zm = rng.standard_normal((B, T))
    members = setcl.members_matrix(setcl.build_sets(setcl.build_index_matrix(B, S, 3), K))

    def inf_of_z(zflat):
        z = zflat.reshape(B, T)
        loss, dZ, _, _ = setcl.infonce_with_grads(z, Zp, Zm, members, 0.2)
        return loss, dZ.ravel()

    err = diffnet.grad_check(inf_of_z, Z.ravel(), n_probes=40, rng_seed=4)
    check(f"setwise infonce gradient (rel err {err:.2e})", err < 1e-4)

    worst = 0.0
    for i in range(200):
        dim = int(rng.integers(2, 50))
        g1 = rng.standard_normal(dim)
        g2 = rng.standard_normal(dim)
        a_closed = moo.alpha_min_norm(g1, g2)
        a_grid = moo.alpha_grid_oracle(g1, g2, steps=10_000)
        worst = max(worst, abs(a_closed - a_grid))
    check(f"min-norm solver vs grid oracle (max dev {worst:.2e})", worst <= 1e-4)

    ok = all(flag for _, flag in results)
    if verbose:
        print("selftest:", "all checks passed" if ok else "FAILURES present")
    return ok


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest() else EXIT_RUNTIME


def build_parser() -> _Parser:
    parser = _Parser(prog="paretopic",
                     description="Setwise contrastive neural topic model with "
                                 "Pareto-balanced two-objective training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a df-filtered vocabulary from JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-df", type=int, default=corpus_mod.DEFAULT_MIN_DF)
    p.add_argument("--max-df-frac", type=float, default=corpus_mod.DEFAULT_MAX_DF_FRAC)
    p.add_argument("--max-size", type=int, default=corpus_mod.DEFAULT_MAX_SIZE)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("augment", help="build the positive/negative augmentation cache")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=["llm", "tfidf", "dropout"], default="tfidf")
    p.add_argument("--endpoint", help="chat-completions endpoint URL (llm mode)")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--replace-frac", type=float, default=augment_mod.DEFAULT_REPLACE_FRAC)
    p.add_argument("--drop-frac", type=float, default=augment_mod.DEFAULT_DROP_FRAC)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the topic model (defaults: K=4 S=8 "
                                     "tau=0.2 lr=0.002 B=200)")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="mandatory unless train.seed is in the config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable); flags win over the file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("topics", help="dump top words per topic from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--top-n", type=int, default=evaluate.DEFAULT_TOP_N)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("eval", help="NPMI and topic diversity against a reference corpus")
    p.add_argument("--topics", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("align", help="competitive-linking alignment of two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--threshold", type=float, default=evaluate.DEFAULT_ALIGN_THRESHOLD)
    p.add_argument("--output")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("classify", help="export theta features and score the "
                                        "logistic proxy (stand-in for the external "
                                        "Random Forest protocol)")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("probe", help="cosine similarity of two texts' topic vectors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text-a", required=True)
    p.add_argument("--text-b", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("selftest", help="gradient checks and solver oracle suite")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
