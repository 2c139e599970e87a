"""Training loop: per-batch three-view encoding, both losses, gradient blending, SGD.

The encoder receives the blended gradient (contrastive + ELBO); the decoder
always receives the plain ELBO gradient.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffnet, moo, ntm, setcl
from .augment import AugmentedTriple
from .corpus import Corpus, vectorize
from .errors import ConfigError, DataError, NumericError

Array = np.ndarray

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    seed: int
    num_topics: int = 50
    hidden: int = ntm.DEFAULT_HIDDEN
    set_size: int = 4
    shuffle_count: int = 8
    temperature: float = 0.2
    learning_rate: float = 0.002
    batch_size: int = 200
    epochs: int = 200
    moo_strategy: str = "mgda"
    linear_alpha: float = 0.5
    tie_eps: float = moo.DEFAULT_TIE_EPS
    pool_positive: str = setcl.DEFAULT_POOL_POSITIVE
    pool_negative: str = setcl.DEFAULT_POOL_NEGATIVE
    include_own_negative: bool = False

    def validate(self) -> None:
        if self.num_topics < 1 or self.hidden < 1:
            raise ConfigError("num_topics and hidden must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs nonnegative")
        if not (1 <= self.set_size <= self.batch_size):
            raise ConfigError(
                f"set size K={self.set_size} must satisfy 1 <= K <= batch size B={self.batch_size}")
        if self.shuffle_count < 1:
            raise ConfigError("shuffle_count must be >= 1")
        if self.temperature <= 0 or self.learning_rate <= 0:
            raise ConfigError("temperature and learning_rate must be positive")
        if self.moo_strategy not in moo.STRATEGIES:
            raise ConfigError(
                f"unknown moo strategy {self.moo_strategy!r}, expected one of {moo.STRATEGIES}")
        if self.pool_positive not in diffnet.POOL_MODES \
                or self.pool_negative not in diffnet.POOL_MODES:
            raise ConfigError("pooling modes must be one of min|max|mean|sum")


@dataclass
class ModelState:
    enc: ntm.EncoderParams
    dec: ntm.DecoderParams
    V: int
    H: int
    T: int
    vocab_hash: str
    rng: np.random.Generator


@dataclass
class TrainData:
    """Dense count matrices for anchors and their two augmented views."""
    doc_ids: list[int]
    Xc: Array
    Xp: Array
    Xm: Array


def init_state(V: int, config: TrainConfig, vocab_hash: str) -> ModelState:
    rng = np.random.default_rng(config.seed)
    enc, dec = ntm.init_params(V, config.hidden, config.num_topics, rng)
    return ModelState(enc=enc, dec=dec, V=V, H=config.hidden,
                      T=config.num_topics, vocab_hash=vocab_hash, rng=rng)


def prepare_training_data(corpus: Corpus, triples: list[AugmentedTriple]) -> TrainData:
    vocab = corpus.vocabulary
    by_anchor = {t.anchor_id: t for t in triples}
    doc_ids, anchors, positives, negatives = [], [], [], []
    for i in corpus.trainable_indices():
        triple = by_anchor.get(i)
        if triple is None:
            raise DataError(f"augmentation cache does not cover document {i}")
        pos = vectorize(triple.positive_text, vocab)
        neg = vectorize(triple.negative_text, vocab)
        if pos.is_empty or neg.is_empty:
            raise DataError(f"augmentation for document {i} vectorizes to an empty document")
        doc_ids.append(i)
        anchors.append(corpus.documents[i])
        positives.append(pos)
        negatives.append(neg)
    if not doc_ids:
        raise DataError("no trainable documents with augmentations")
    V = vocab.size
    return TrainData(doc_ids=doc_ids,
                     Xc=ntm.docs_to_matrix(anchors, V),
                     Xp=ntm.docs_to_matrix(positives, V),
                     Xm=ntm.docs_to_matrix(negatives, V))


def _encode_view(Xc: Array, enc: ntm.EncoderParams, rng: np.random.Generator):
    cache = ntm.encode_batch(Xc, enc)
    eps = rng.standard_normal(cache.mu.shape)
    z = ntm.reparameterize(cache.mu, cache.logvar, eps)
    return cache, eps, z


def _view_encoder_grad(cache, enc, eps, dz: Array) -> Array:
    dmu = dz
    dlogvar = dz * eps * 0.5 * np.exp(cache.logvar / 2.0)
    return ntm.encoder_backward(cache, enc, dmu, dlogvar)


def train_step(batch_rows: Array, state: ModelState, data: TrainData,
               config: TrainConfig, step: int) -> dict:
    """One Algorithm-style update; mutates state in place, returns a log record."""
    B = len(batch_rows)
    if B < config.set_size:
        raise ConfigError(f"batch of {B} documents is smaller than set size {config.set_size}")
    rng = state.rng
    Xb = data.Xc[batch_rows]
    Xbp = data.Xp[batch_rows]
    Xbm = data.Xm[batch_rows]

    cache_x, eps_x, z = _encode_view(Xb, state.enc, rng)
    cache_p, eps_p, zp = _encode_view(Xbp, state.enc, rng)
    cache_m, eps_m, zm = _encode_view(Xbm, state.enc, rng)

    M = setcl.build_index_matrix(B, config.shuffle_count, rng)
    members = setcl.members_matrix(setcl.build_sets(M, config.set_size))

    inf_loss, dZ, dZp, dZm = setcl.infonce_with_grads(
        z, zp, zm, members, config.temperature,
        pool_positive=config.pool_positive, pool_negative=config.pool_negative,
        include_own_negative=config.include_own_negative)
    g_inf = (_view_encoder_grad(cache_x, state.enc, eps_x, dZ)
             + _view_encoder_grad(cache_p, state.enc, eps_p, dZp)
             + _view_encoder_grad(cache_m, state.enc, eps_m, dZm))

    elbo = ntm.elbo_with_grads(Xb, state.enc, state.dec, eps_x, cache=cache_x)

    if not (np.isfinite(inf_loss) and np.isfinite(elbo.loss)):
        raise NumericError(
            f"non-finite loss at step {step}: infonce={inf_loss}, elbo={elbo.loss}, "
            f"batch rows={batch_rows.tolist()}")

    decision = moo.strategy_dispatch(
        config.moo_strategy, g_inf, elbo.g_enc,
        params={"linear_alpha": config.linear_alpha, "tie_eps": config.tie_eps},
        rng=rng)

    enc_flat = ntm.pack_encoder(state.enc) - config.learning_rate * decision.direction
    dec_flat = ntm.pack_decoder(state.dec) - config.learning_rate * elbo.g_dec
    state.enc = ntm.unpack_encoder(enc_flat, state.V, state.H, state.T)
    state.dec = ntm.unpack_decoder(dec_flat, state.V, state.T)

    return {
        "step": step,
        "elbo": elbo.loss,
        "recon": elbo.recon,
        "kl": elbo.kl,
        "infonce": inf_loss,
        "alpha": decision.alpha,
        "g_infonce_norm": decision.diagnostics["g1_norm"],
        "g_elbo_norm": decision.diagnostics["g2_norm"],
        "direction_norm": decision.diagnostics["direction_norm"],
    }


def fit(corpus: Corpus, triples: list[AugmentedTriple], config: TrainConfig,
        checkpoint_dir: str | None = None,
        state: ModelState | None = None,
        start_epoch: int = 0) -> tuple[ModelState, list[dict]]:
    """Epoch loop over full batches; the ragged tail of each epoch is dropped."""
    config.validate()
    data = prepare_training_data(corpus, triples)
    if state is None:
        state = init_state(corpus.vocabulary.size, config,
                           corpus.vocabulary.content_hash())
    if state.vocab_hash != corpus.vocabulary.content_hash():
        raise DataError("model state was built against a different vocabulary")
    n = len(data.doc_ids)
    if n < config.batch_size:
        raise ConfigError(
            f"corpus has only {n} trainable documents for batch size {config.batch_size}")
    records: list[dict] = []
    step = start_epoch * (n // config.batch_size)
    for epoch in range(start_epoch, config.epochs):
        order = state.rng.permutation(n)
        for b in range(n // config.batch_size):
            batch = order[b * config.batch_size:(b + 1) * config.batch_size]
            records.append(train_step(batch, state, data, config, step))
            step += 1
        if checkpoint_dir is not None:
            save_checkpoint(state, os.path.join(checkpoint_dir, f"epoch_{epoch:04d}.json"))
    return state, records


def write_train_log(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def save_checkpoint(state: ModelState, path: str) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "V": state.V,
        "H": state.H,
        "T": state.T,
        "vocab_hash": state.vocab_hash,
        "encoder": {
            "W1": state.enc.W1.tolist(), "b1": state.enc.b1.tolist(),
            "W_mu": state.enc.W_mu.tolist(), "b_mu": state.enc.b_mu.tolist(),
            "W_lv": state.enc.W_lv.tolist(), "b_lv": state.enc.b_lv.tolist(),
        },
        "decoder": {
            "beta": state.dec.beta.tolist(), "b_dec": state.dec.b_dec.tolist(),
        },
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path: str, expect_vocab_hash: str | None = None) -> ModelState:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint {path}: unsupported format_version {doc.get('format_version')}")
    if expect_vocab_hash is not None and doc["vocab_hash"] != expect_vocab_hash:
        raise DataError(f"checkpoint {path}: vocabulary hash mismatch")
    try:
        enc = ntm.EncoderParams(
            W1=np.array(doc["encoder"]["W1"], dtype=np.float64),
            b1=np.array(doc["encoder"]["b1"], dtype=np.float64),
            W_mu=np.array(doc["encoder"]["W_mu"], dtype=np.float64),
            b_mu=np.array(doc["encoder"]["b_mu"], dtype=np.float64),
            W_lv=np.array(doc["encoder"]["W_lv"], dtype=np.float64),
            b_lv=np.array(doc["encoder"]["b_lv"], dtype=np.float64))
        dec = ntm.DecoderParams(
            beta=np.array(doc["decoder"]["beta"], dtype=np.float64),
            b_dec=np.array(doc["decoder"]["b_dec"], dtype=np.float64))
        rng_state = doc["rng_state"]
        bitgen = getattr(np.random, rng_state["bit_generator"])()
        bitgen.state = rng_state
        rng = np.random.Generator(bitgen)
        return ModelState(enc=enc, dec=dec, V=int(doc["V"]), H=int(doc["H"]),
                          T=int(doc["T"]), vocab_hash=doc["vocab_hash"], rng=rng)
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise DataError(f"checkpoint {path} is malformed: {exc}") from exc
