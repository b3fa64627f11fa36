"""Posterior-to-string decoders.

Greedy best-path decoding, prefix beam search over per-prefix
(blank-ending, non-blank-ending) log-mass pairs, and an exhaustive
marginal-argmax oracle for small instances.

Tie-breaking is identical everywhere: higher score first, then shorter
label, then lexicographically smaller symbol tuple. Decoders are pure
functions of their inputs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .ctc import ENUMERATION_LIMIT, Alphabet, FramePosteriors, LabelSequence, _collapse_tuple
from .errors import EnumerationLimitError, ShapeError


@dataclass(frozen=True)
class BeamConfig:
    """width: prefixes kept per frame; prune_threshold: per-frame
    posterior floor below which an emission is not expanded (0 = keep all)."""

    width: int = 16
    prune_threshold: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.width}")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError(f"prune_threshold must lie in [0, 1), got {self.prune_threshold}")


@dataclass(frozen=True)
class Decoding:
    """A decoded label with the log-score its decoder assigns to it."""

    label: LabelSequence
    score: float


def _rank_key(item):
    # (mass desc, shorter label first, lexicographic) as a sort key
    prefix, mass = item
    return (-mass, len(prefix), prefix)


def greedy_decode(y: FramePosteriors, alphabet: Alphabet) -> Decoding:
    """Collapse the per-frame argmax path. Score is the log-probability of
    that single path; argmax ties go to the lowest symbol index."""
    if y.symbols != alphabet.extended_size:
        raise ShapeError(
            f"posteriors have K={y.symbols} columns, alphabet needs {alphabet.extended_size}"
        )
    v = y.values
    path = np.argmax(v, axis=1)  # first occurrence = lowest index on ties
    label = LabelSequence(_collapse_tuple(path.tolist(), alphabet.blank_index))
    score = float(np.log(v[np.arange(v.shape[0]), path]).sum())
    return Decoding(label=label, score=min(0.0, score))


def _beam_search(values, alphabet: Alphabet, width: int, prune_threshold: float):
    """One pass of prefix beam search. Returns the final mapping
    prefix -> (log_pb, log_pnb). Exact for every surviving prefix when
    nothing is pruned."""
    blank = alphabet.blank_index
    n_labels = len(alphabet.labels)
    neg = -np.inf
    beams = {(): (0.0, neg)}
    for row in values:
        with np.errstate(divide="ignore"):
            log_row = np.log(row)
        nxt = {}

        def bump(prefix, slot, value):
            pb, pnb = nxt.get(prefix, (neg, neg))
            if slot == 0:
                nxt[prefix] = (np.logaddexp(pb, value), pnb)
            else:
                nxt[prefix] = (pb, np.logaddexp(pnb, value))

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            if row[blank] > 0.0 and row[blank] >= prune_threshold:
                bump(prefix, 0, total + log_row[blank])
            if prefix:
                last = prefix[-1]
                if row[last] > 0.0 and row[last] >= prune_threshold:
                    # same symbol again extends the current run
                    bump(prefix, 1, pnb + log_row[last])
            for s in range(n_labels):
                if row[s] <= 0.0 or row[s] < prune_threshold:
                    continue
                source = pb if (prefix and s == prefix[-1]) else total
                bump(prefix + (s,), 1, source + log_row[s])
        if not nxt:
            raise ValueError("prune_threshold removed every candidate at some frame")
        ranked = sorted(
            ((p, np.logaddexp(m[0], m[1])) for p, m in nxt.items()), key=_rank_key
        )
        beams = {p: nxt[p] for p, _ in ranked[:width]}
    return beams


def beam_decode(y: FramePosteriors, alphabet: Alphabet, cfg: BeamConfig) -> Decoding:
    """Highest accumulated-marginal prefix under beam search. Width 1 is
    exactly best-path search and delegates to the greedy decoder."""
    if cfg.width == 1:
        return greedy_decode(y, alphabet)
    beams = _beam_search(y.values, alphabet, cfg.width, cfg.prune_threshold)
    ranked = sorted(
        ((p, np.logaddexp(m[0], m[1])) for p, m in beams.items()), key=_rank_key
    )
    prefix, mass = ranked[0]
    return Decoding(label=LabelSequence(prefix), score=min(0.0, float(mass)))


def exhaustive_decode(y: FramePosteriors, alphabet: Alphabet) -> Decoding:
    """Argmax over every label sequence of the exact marginal, computed by
    full path enumeration. Verification oracle, not a production decoder."""
    T = y.timesteps
    K = alphabet.extended_size
    if K**T > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"|A'|^T = {K}^{T} exceeds {ENUMERATION_LIMIT}")
    blank = alphabet.blank_index
    rows = y.values.tolist()
    masses = {}
    for path in itertools.product(range(K), repeat=T):
        p = 1.0
        for t, s in enumerate(path):
            p *= rows[t][s]
        label = _collapse_tuple(path, blank)
        masses[label] = masses.get(label, 0.0) + p
    best = min(masses.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
    with np.errstate(divide="ignore"):
        score = float(np.log(best[1]))
    return Decoding(label=LabelSequence(best[0]), score=min(0.0, score))
