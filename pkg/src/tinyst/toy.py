"""Synthetic speech-translation task small enough for CPU acceptance runs.

Each "utterance" is a sequence of symbols from a 20-letter alphabet; its
acoustic features repeat a fixed random 80-dim pattern per symbol
(frames_per_token times) plus Gaussian noise, and its "translation" applies
a fixed bijective symbol substitution with optional reversal.  Sequences
never repeat a symbol twice in a row, so after 4x downsampling every CTC
target stays feasible (one output frame per source token).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .audio import save_features
from .data import ManifestEntry, write_manifest
from .rng import RngStream

SYMBOLS = tuple("abcdefghijklmnopqrst")


@dataclass
class ToyTaskConfig:
    n_symbols: int = 20
    min_len: int = 3
    max_len: int = 12
    frames_per_token: int = 4
    noise_std: float = 0.1
    identity_mapping: bool = False
    reverse: bool = False
    train_size: int = 2000
    dev_size: int = 100
    test_size: int = 100

    def __post_init__(self):
        if not 2 <= self.n_symbols <= len(SYMBOLS):
            raise ValueError(f"n_symbols must be in [2, {len(SYMBOLS)}], "
                             f"got {self.n_symbols}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"invalid length range [{self.min_len}, {self.max_len}]")
        if self.frames_per_token < 1:
            raise ValueError("frames_per_token must be >= 1")
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise ValueError("split sizes must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def toy_mapping(cfg: ToyTaskConfig, rng: RngStream) -> dict:
    """The fixed bijective source->target symbol substitution."""
    symbols = SYMBOLS[:cfg.n_symbols]
    if cfg.identity_mapping:
        return {s: s for s in symbols}
    perm = rng.child("mapping").permutation(cfg.n_symbols)
    return {symbols[i]: symbols[perm[i]] for i in range(cfg.n_symbols)}


def toy_patterns(cfg: ToyTaskConfig, rng: RngStream) -> np.ndarray:
    """Per-symbol 80-dim acoustic signatures, fixed across the corpus."""
    return rng.child("patterns").normal(0.0, 1.0, size=(cfg.n_symbols, 80))


def _draw_sequence(cfg: ToyTaskConfig, rng: RngStream) -> list:
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    seq = []
    for _ in range(length):
        sym = int(rng.integers(0, cfg.n_symbols))
        while seq and sym == seq[-1]:
            sym = int(rng.integers(0, cfg.n_symbols))
        seq.append(sym)
    return seq


def toy_utterance(cfg: ToyTaskConfig, rng: RngStream, utt_id: str,
                  mapping: dict, patterns: np.ndarray):
    """One sample: (utt_id, features (4L, 80), transcript, translation)."""
    seq = _draw_sequence(cfg, rng.child("seq", utt_id))
    symbols = SYMBOLS[:cfg.n_symbols]
    source = [symbols[i] for i in seq]
    target = [mapping[s] for s in source]
    if cfg.reverse:
        target = target[::-1]
    feats = np.repeat(patterns[seq], cfg.frames_per_token, axis=0)
    if cfg.noise_std > 0:
        feats = feats + rng.child("noise", utt_id).normal(
            0.0, cfg.noise_std, size=feats.shape)
    return utt_id, feats, " ".join(source), " ".join(target)


def toy_generate(cfg: ToyTaskConfig, rng: RngStream, out_dir) -> dict:
    """Write train/dev/test manifests plus cached features under out_dir.

    Returns {"train": manifest_path, "dev": ..., "test": ...}.  Fully
    deterministic for a given rng seed.
    """
    mapping = toy_mapping(cfg, rng)
    patterns = toy_patterns(cfg, rng)
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    paths = {}
    for split, size in (("train", cfg.train_size), ("dev", cfg.dev_size),
                        ("test", cfg.test_size)):
        entries = []
        for i in range(size):
            utt_id = f"{split}-{i:05d}"
            _, feats, transcript, translation = toy_utterance(
                cfg, rng, utt_id, mapping, patterns)
            rel = os.path.join("features", f"{utt_id}.feat")
            save_features(os.path.join(out_dir, rel), feats)
            entries.append(ManifestEntry(utt_id, rel, feats.shape[0],
                                         transcript, translation))
        manifest = os.path.join(out_dir, f"{split}.tsv")
        write_manifest(manifest, entries)
        paths[split] = manifest
    return paths
