"""Training objectives: CTC, label-smoothed cross-entropy, and their mixture.

The CTC forward algorithm runs entirely in log-space on the autodiff graph,
so its gradient is exact rather than hand-derived.  Dead dynamic-programming
cells hold LOG_ZERO instead of -inf; they lose against any live cell inside
logsumexp by a margin far beyond float range, so they contribute exactly
zero probability and exactly zero gradient while every intermediate stays
finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import LOG_ZERO, Tensor, concat, stack
from .text import BLANK_ID, PAD_ID


class CtcInfeasibleError(ValueError):
    """Raised when no alignment path of the given length can emit the target."""


@dataclass
class LossWeights:
    alpha: float = 0.3
    epsilon_ls: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon_ls < 1.0:
            raise ValueError(f"epsilon_ls must be in [0, 1), got {self.epsilon_ls}")


def ctc_min_frames(target) -> int:
    """Fewest frames that can emit `target`: its length plus one blank per
    adjacent repeat."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_feasible(n_frames: int, target) -> bool:
    return n_frames >= ctc_min_frames(target)


def ctc_loss_batch(log_probs: Tensor, targets, blank: int = BLANK_ID) -> Tensor:
    """Forward-algorithm CTC loss for a batch of equal-length targets.

    Args:
        log_probs: (B, T, V) per-frame log-distributions, blank included.
        targets: B sequences of label ids, all the same length, none equal
            to `blank`.
        blank: vocabulary id of the blank label.

    Returns:
        (B,) tensor of per-utterance losses
        -log P(target | log_probs), differentiable through `log_probs`.
    """
    if log_probs.ndim != 3:
        raise ValueError(f"log_probs must be (B, T, V), got shape {log_probs.shape}")
    b, t_max, vocab = log_probs.shape
    targets = [list(t) for t in targets]
    if len(targets) != b:
        raise ValueError(f"{b} utterances but {len(targets)} targets")
    lengths = {len(t) for t in targets}
    if len(lengths) > 1:
        raise ValueError(f"batch targets must share one length, got {sorted(lengths)}")
    for i, tgt in enumerate(targets):
        if any(not 0 <= y < vocab or y == blank for y in tgt):
            raise ValueError(f"target {i} contains an invalid label id")
        if not ctc_feasible(t_max, tgt):
            raise CtcInfeasibleError(
                f"target {i} needs at least {ctc_min_frames(tgt)} frames, got {t_max}")
    length = lengths.pop() if lengths else 0
    s = 2 * length + 1

    # Blank-extended targets and the positions allowed to skip a blank.
    ext = np.full((b, s), blank, dtype=np.intp)
    for i, tgt in enumerate(targets):
        ext[i, 1::2] = tgt
    allowed_skip = np.zeros((b, s))
    if s >= 3:
        labels = ext[:, 2:]
        allowed_skip[:, 2:] = (labels != blank) & (labels != ext[:, :-2])

    rows = np.arange(b)[:, None]
    init_mask = np.zeros((1, s))
    init_mask[0, :min(2, s)] = 1.0
    log_zero_row = Tensor(np.full((b, s), LOG_ZERO))

    emit0 = log_probs[(rows, 0, ext)]
    alpha = emit0 * init_mask + Tensor((1.0 - init_mask) * LOG_ZERO)
    for t in range(1, t_max):
        stay = alpha
        step = concat([log_zero_row[:, :1], alpha[:, :-1]], axis=1)
        if s >= 3:
            skip = concat([log_zero_row[:, :2], alpha[:, :-2]], axis=1)
            skip = skip * allowed_skip + Tensor((1.0 - allowed_skip) * LOG_ZERO)
            paths = stack([stay, step, skip], axis=0)
        else:
            paths = stack([stay, step], axis=0)
        alpha = paths.logsumexp(axis=0) + log_probs[(rows, t, ext)]

    if s >= 2:
        tail = stack([alpha[:, s - 1], alpha[:, s - 2]], axis=0).logsumexp(axis=0)
    else:
        tail = alpha[:, 0]
    return -tail


def ctc_loss(log_probs: Tensor, target, blank: int = BLANK_ID) -> Tensor:
    """Single-utterance CTC loss; see ctc_loss_batch."""
    if log_probs.ndim != 2:
        raise ValueError(f"log_probs must be (T, V), got shape {log_probs.shape}")
    t, v = log_probs.shape
    return ctc_loss_batch(log_probs.reshape(1, t, v), [list(target)], blank=blank)[0]


def label_smoothed_ce(logits: Tensor, targets, epsilon_ls: float = 0.1,
                      pad: int = PAD_ID) -> Tensor:
    """Cross-entropy against the smoothed distribution
    q = (1 - eps) * onehot(target) + eps / V, averaged over non-pad tokens.

    Args:
        logits: (N, V) unnormalized scores.
        targets: N reference ids; positions equal to `pad` are excluded.
        epsilon_ls: smoothing mass spread uniformly over the vocabulary.

    Returns:
        scalar tensor, mean loss per non-pad token.
    """
    if logits.ndim != 2:
        raise ValueError(f"logits must be (N, V), got shape {logits.shape}")
    n, vocab = logits.shape
    targets = np.asarray(list(targets), dtype=np.intp)
    if targets.shape != (n,):
        raise ValueError(f"{n} logit rows but {targets.size} targets")
    keep = targets != pad
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ValueError("all target positions are padding")
    log_p = logits.log_softmax(axis=-1)
    picked = log_p[(np.arange(n), targets)]
    per_token = picked * (1.0 - epsilon_ls) + log_p.sum(axis=-1) * (epsilon_ls / vocab)
    return -(per_token * keep.astype(np.float64)).sum() * (1.0 / n_keep)


def multitask_loss(ce, ctc, weights: LossWeights):
    """total = (1 - alpha) * ce + alpha * ctc."""
    return ce * (1.0 - weights.alpha) + ctc * weights.alpha


def ctc_loss_brute_force(log_probs: np.ndarray, target, blank: int = BLANK_ID) -> float:
    """Reference CTC loss by explicit enumeration of all V^T frame paths.

    Exponential; intended for cross-checking the forward algorithm on tiny
    shapes only.
    """
    import itertools

    lp = np.asarray(log_probs, dtype=np.float64)
    t_max, vocab = lp.shape
    target = tuple(target)
    matches = []
    for path in itertools.product(range(vocab), repeat=t_max):
        collapsed = []
        prev = None
        for sym in path:
            if sym != prev and sym != blank:
                collapsed.append(sym)
            prev = sym
        if tuple(collapsed) == target:
            matches.append(sum(lp[i, sym] for i, sym in enumerate(path)))
    if not matches:
        raise CtcInfeasibleError(f"no path of length {t_max} emits {target}")
    m = max(matches)
    return -(m + np.log(np.exp(np.array(matches) - m).sum()))
