"""Corpus-level evaluation: 4-gram BLEU, edit distance, token accuracy.

BLEU is case-sensitive over whitespace tokens with brevity penalty.  At toy
scale, higher-order n-gram matches can vanish entirely, so precisions for
n >= 2 get add-one smoothing when their match count is zero; unigram
precision is never smoothed (an empty or fully wrong hypothesis set scores
zero, as it should).
"""

from __future__ import annotations

import math


def _ngram_counts(tokens: list, n: int) -> dict:
    counts = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i:i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def corpus_bleu(hypotheses: list, references: list, max_n: int = 4) -> float:
    """4-gram corpus BLEU x 100 with brevity penalty.

    Args:
        hypotheses: system outputs, one string per segment.
        references: aligned references, same count.

    Returns:
        BLEU percentage in [0, 100]; identical corpora give exactly 100.0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs "
                         f"{len(references)} references")
    if not hypotheses:
        raise ValueError("BLEU needs at least one segment")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = hyp.split()
        r = ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            h_counts = _ngram_counts(h, n)
            r_counts = _ngram_counts(r, n)
            totals[n - 1] += max(len(h) - n + 1, 0)
            matches[n - 1] += sum(min(c, r_counts.get(g, 0))
                                  for g, c in h_counts.items())
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if n >= 2 and m == 0:
            m, t = m + 1, t + 1
        log_precision += math.log(m / t) / max_n
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)


def edit_distance(a: list, b: list) -> int:
    """Levenshtein distance between two token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_accuracy(hypotheses: list, references: list) -> float:
    """1 - (total edit distance / total reference tokens), floored at 0.

    Token sequences are whitespace splits; measures how much of the
    reference survives in the hypothesis, robust to length mismatch.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs "
                         f"{len(references)} references")
    total_dist = 0
    total_ref = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = hyp.split(), ref.split()
        total_dist += edit_distance(h, r)
        total_ref += len(r)
    if total_ref == 0:
        raise ValueError("references contain no tokens")
    return max(0.0, 1.0 - total_dist / total_ref)


def token_accuracy(hypotheses: list, references: list) -> float:
    """Position-aligned token match rate: sum of per-position matches over
    sum of max(len(hyp), len(ref))."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs "
                         f"{len(references)} references")
    match = 0
    denom = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = hyp.split(), ref.split()
        match += sum(1 for x, y in zip(h, r) if x == y)
        denom += max(len(h), len(r))
    if denom == 0:
        raise ValueError("no tokens to score")
    return match / denom
