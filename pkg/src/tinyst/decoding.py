"""Inference: beam search with length normalization, model ensembling, and
greedy CTC collapse for encoder diagnostics.

Every beam step scores all vocabulary extensions of every live hypothesis
with `ensemble_log_prob` (a single model is the one-row case), keeps the
top `beam` by cumulative log-probability, and retires hypotheses that emit
eos into a finished pool ranked by normalized score.  Tie-breaking is fully
specified (score, then smaller token id, then parent rank) so decoding is
reproducible to the token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EncoderOutput, SpeechTranslator
from .tensor import Tensor, no_grad
from .text import BLANK_ID, BOS_ID, EOS_ID


@dataclass
class DecodeConfig:
    beam: int = 5
    lennorm_beta: float = 1.0
    max_len_factor: float = 1.0
    extra_len: int = 10

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError(f"beam must be >= 1, got {self.beam}")
        if self.lennorm_beta < 0:
            raise ValueError(f"lennorm_beta must be >= 0, got {self.lennorm_beta}")
        if self.max_len_factor <= 0:
            raise ValueError(f"max_len_factor must be > 0, got {self.max_len_factor}")


@dataclass
class Hypothesis:
    tokens: list                  # starts with bos; ends with eos when finished
    logprob: float = 0.0
    finished: bool = False
    norm_score: float = 0.0

    @property
    def generated(self) -> int:
        return len(self.tokens) - 1


def length_normalize(logprob: float, length: int, beta: float) -> float:
    """norm_score = logprob / length**beta."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return logprob / length ** beta


def ensemble_log_prob(rows) -> np.ndarray:
    """Combine K per-model log-prob rows by averaging probabilities in log
    space: log((1/K) sum_k exp(row_k)), max-shifted for stability.

    Identical rows come back exactly (the shifted exponent is exp(0)), so an
    ensemble of one checkpoint repeated K times decodes identically to the
    single model.
    """
    if isinstance(rows, (list, tuple)):
        sizes = {np.asarray(r).shape for r in rows}
        if len(sizes) > 1:
            raise ValueError(f"ensemble rows disagree on vocabulary size: "
                             f"{sorted(sizes)}")
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError(f"expected K rows over one vocabulary, got shape {mat.shape}")
    m = mat.max(axis=0)
    return m + np.log(np.exp(mat - m).mean(axis=0))


def _step_distribution(models, prefix: np.ndarray) -> np.ndarray:
    rows = []
    for model, enc in models:
        logits = model.decoder_step(enc, prefix)
        rows.append(logits.log_softmax(axis=-1).data[0])
    sizes = {r.shape[0] for r in rows}
    if len(sizes) > 1:
        raise ValueError(f"models disagree on vocabulary size: {sorted(sizes)}")
    return ensemble_log_prob(np.stack(rows))


def beam_search(models: list, cfg: DecodeConfig,
                max_len: int | None = None) -> list:
    """Decode one utterance with an ensemble of (model, EncoderOutput) pairs.

    Returns finished hypotheses ranked by norm_score (best first).  If the
    length cap fires with nothing finished, the best unfinished hypothesis
    is returned alone, flagged finished=False.
    """
    if not models:
        raise ValueError("need at least one model")
    if max_len is None:
        t_prime = models[0][1].out_lengths[0]
        max_len = int(cfg.max_len_factor * t_prime) + cfg.extra_len
    live = [Hypothesis([BOS_ID])]
    finished = []
    with no_grad():
        for _ in range(max_len):
            if not live:
                break
            candidates = []
            for rank, hyp in enumerate(live):
                row = _step_distribution(models, np.array([hyp.tokens]))
                for token in range(row.shape[0]):
                    candidates.append((hyp.logprob + row[token], token, rank))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            next_live = []
            for score, token, rank in candidates[:cfg.beam]:
                parent = live[rank]
                hyp = Hypothesis(parent.tokens + [token], score)
                if token == EOS_ID:
                    hyp.finished = True
                    hyp.norm_score = length_normalize(score, hyp.generated,
                                                      cfg.lennorm_beta)
                    finished.append(hyp)
                else:
                    next_live.append(hyp)
            live = next_live
    if finished:
        finished.sort(key=lambda h: (-h.norm_score, h.tokens))
        return finished
    best = max(live, key=lambda h: (h.logprob, [-t for t in h.tokens]))
    best.norm_score = length_normalize(best.logprob, max(best.generated, 1),
                                       cfg.lennorm_beta)
    return [best]


def greedy_decode(models: list, max_len: int) -> Hypothesis:
    """Reference greedy decoder: argmax token each step until eos or cap."""
    hyp = Hypothesis([BOS_ID])
    with no_grad():
        for _ in range(max_len):
            row = _step_distribution(models, np.array([hyp.tokens]))
            token = int(row.argmax())
            hyp = Hypothesis(hyp.tokens + [token], hyp.logprob + row[token])
            if token == EOS_ID:
                hyp.finished = True
                break
    return hyp


def ctc_greedy_decode(ctc_logits, blank: int = BLANK_ID) -> list:
    """Per-frame argmax, collapse consecutive repeats, drop blanks."""
    arr = ctc_logits.data if isinstance(ctc_logits, Tensor) else np.asarray(ctc_logits)
    if arr.ndim != 2:
        raise ValueError(f"expected (T, V) logits, got shape {arr.shape}")
    best = arr.argmax(axis=-1)
    out = []
    prev = None
    for sym in best:
        if sym != prev and sym != blank:
            out.append(int(sym))
        prev = sym
    return out


def encode_for_decoding(model: SpeechTranslator, features: np.ndarray) -> EncoderOutput:
    """Eval-mode encoder pass over one utterance's (T, 80) features."""
    with no_grad():
        return model.encode(Tensor(features[None, :, :]))
