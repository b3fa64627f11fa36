"""Exact connectionist temporal classification.

Collapse map, path and marginal probabilities, the log-space
forward-backward loss with analytic gradients, and a brute-force
enumeration oracle used to verify the dynamic program.

Conventions fixed across the package:

  * the blank symbol occupies the LAST index of the extended alphabet
    (index 10 for the ten digits);
  * log space throughout, with -inf as the exact logarithm of zero;
    `numpy.logaddexp` propagates -inf correctly;
  * the backward recursion is initialised without the frame emission, so
    that sum_s alpha_t(s) * beta_t(s) equals the sequence probability at
    every timestep t.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EnumerationLimitError,
    InfeasibleLabelError,
    InvalidSymbolError,
    NumericError,
    ShapeError,
)

# ceiling on |A'|**T for the enumeration oracles
ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class Alphabet:
    """Base symbol set; the blank is implicit at the last extended index."""

    labels: tuple = tuple("0123456789")

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) == 0:
            raise InvalidSymbolError("alphabet needs at least one base label")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidSymbolError("alphabet labels must be distinct")

    @property
    def blank_index(self) -> int:
        return len(self.labels)

    @property
    def extended_size(self) -> int:
        return len(self.labels) + 1

    @classmethod
    def digits(cls) -> "Alphabet":
        return cls(tuple("0123456789"))

    def label_from_string(self, text: str) -> "LabelSequence":
        symbols = []
        for ch in text:
            if ch not in self.labels:
                raise InvalidSymbolError(f"character {ch!r} not in alphabet")
            symbols.append(self.labels.index(ch))
        return LabelSequence(tuple(symbols))

    def string_of(self, label: "LabelSequence") -> str:
        for s in label.symbols:
            if not 0 <= s < len(self.labels):
                raise InvalidSymbolError(f"symbol index {s} out of range")
        return "".join(self.labels[s] for s in label.symbols)


@dataclass(frozen=True)
class LabelSequence:
    """Ground-truth sequence of base-alphabet indices (never blank)."""

    symbols: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        if any(s < 0 for s in self.symbols):
            raise InvalidSymbolError("label symbols must be non-negative indices")

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class Path:
    """Frame-level symbol sequence over the extended alphabet."""

    symbols: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)


class FramePosteriors:
    """T x K row-stochastic matrix of per-frame symbol probabilities.

    K is the extended alphabet size (base labels plus blank). Rows must
    sum to one within 1e-9 and all entries must be finite probabilities.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
            raise ShapeError(f"posteriors must be T x K with T >= 1, K >= 2, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("posteriors contain NaN or Inf")
        if (arr < 0.0).any() or (arr > 1.0 + 1e-9).any():
            raise ValueError("posterior entries must lie in [0, 1]")
        if np.abs(arr.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("posterior rows must sum to 1 within 1e-9")
        self.values = arr

    @property
    def timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def symbols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ExtendedLabel:
    """Blank-interleaved label: blank, I1, blank, I2, ..., blank."""

    symbols: tuple

    @classmethod
    def from_label(cls, label: LabelSequence, alphabet: Alphabet) -> "ExtendedLabel":
        blank = alphabet.blank_index
        out = [blank]
        for s in label.symbols:
            out.append(s)
            out.append(blank)
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass
class CtcResult:
    """Per-sample loss in nats and gradients w.r.t. posteriors and logits."""

    loss: float
    grad_posteriors: np.ndarray  # d loss / d y, shape T x K
    grad_logits: np.ndarray      # d loss / d a where y = softmax(a) per row


def collapse(path: Path, alphabet: Alphabet) -> LabelSequence:
    """Merge maximal runs of identical symbols, then delete blanks."""
    blank = alphabet.blank_index
    size = alphabet.extended_size
    out = []
    prev = -1
    for s in path.symbols:
        if not 0 <= s < size:
            raise InvalidSymbolError(f"path symbol {s} out of range for |A'|={size}")
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return LabelSequence(tuple(out))


def _collapse_tuple(path, blank):
    # allocation-light collapse used by the enumeration oracles
    out = []
    prev = -1
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def path_probability(path: Path, y: FramePosteriors) -> float:
    """Product over frames of the posterior of the path's symbol."""
    v = y.values
    if len(path) != v.shape[0]:
        raise ShapeError(f"path length {len(path)} != T={v.shape[0]}")
    for s in path.symbols:
        if not 0 <= s < v.shape[1]:
            raise InvalidSymbolError(f"path symbol {s} out of range for K={v.shape[1]}")
    idx = np.asarray(path.symbols, dtype=np.intp)
    return float(np.prod(v[np.arange(v.shape[0]), idx]))


def _check_label(label: LabelSequence, alphabet: Alphabet) -> None:
    for s in label.symbols:
        if not 0 <= s < len(alphabet.labels):
            raise InvalidSymbolError(f"label symbol {s} is not a base label")


def _check_extended_width(y: FramePosteriors, alphabet: Alphabet) -> None:
    if y.symbols != alphabet.extended_size:
        raise ShapeError(
            f"posteriors have K={y.symbols} columns, alphabet needs {alphabet.extended_size}"
        )


def marginal_probability_bruteforce(
    label: LabelSequence, y: FramePosteriors, alphabet: Alphabet
) -> float:
    """Marginal straight from the definition: enumerate every path and sum
    the ones that collapse to `label`. Verification oracle for the DP."""
    _check_label(label, alphabet)
    _check_extended_width(y, alphabet)
    T = y.timesteps
    K = alphabet.extended_size
    if K**T > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"|A'|^T = {K}^{T} exceeds {ENUMERATION_LIMIT}")
    blank = alphabet.blank_index
    target = label.symbols
    rows = y.values.tolist()
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        if _collapse_tuple(path, blank) != target:
            continue
        p = 1.0
        for t, s in enumerate(path):
            p *= rows[t][s]
        total += p
    return total


def _lattice(label: LabelSequence, alphabet: Alphabet):
    """Extended-label symbol array and the skip-transition mask."""
    ext = np.asarray(ExtendedLabel.from_label(label, alphabet).symbols, dtype=np.intp)
    blank = alphabet.blank_index
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return ext, skip


def _min_feasible_length(label: LabelSequence) -> int:
    pairs = sum(1 for a, b in zip(label.symbols, label.symbols[1:]) if a == b)
    return len(label) + pairs


def _forward(log_y, ext, skip):
    """Alpha recursion. Returns (log_alpha, log_alpha_in, log_p) where
    log_alpha_in excludes the frame emission (used for d p / d y)."""
    T = log_y.shape[0]
    S = len(ext)
    neg = -np.inf
    log_alpha = np.full((T, S), neg)
    log_alpha_in = np.full((T, S), neg)
    log_alpha_in[0, 0] = 0.0
    if S > 1:
        log_alpha_in[0, 1] = 0.0
    log_alpha[0] = log_alpha_in[0] + log_y[0, ext]
    for t in range(1, T):
        prev = log_alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        log_alpha_in[t] = acc
        log_alpha[t] = acc + log_y[t, ext]
    if S > 1:
        log_p = np.logaddexp(log_alpha[T - 1, S - 1], log_alpha[T - 1, S - 2])
    else:
        log_p = log_alpha[T - 1, S - 1]
    return log_alpha, log_alpha_in, float(log_p)


def _backward(log_y, ext, skip):
    """Beta recursion, initialised at 1 on the two terminal states so that
    sum_s alpha_t(s) * beta_t(s) = p(I|y) for every t."""
    T = log_y.shape[0]
    S = len(ext)
    neg = -np.inf
    log_beta = np.full((T, S), neg)
    log_beta[T - 1, S - 1] = 0.0
    if S > 1:
        log_beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = log_beta[t + 1] + log_y[t + 1, ext]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        log_beta[t] = acc
    return log_beta


def marginal_probability(label: LabelSequence, y: FramePosteriors, alphabet: Alphabet) -> float:
    """Exact p(label | y) via the forward recursion; 0.0 when unreachable."""
    _check_label(label, alphabet)
    _check_extended_width(y, alphabet)
    if y.timesteps < _min_feasible_length(label):
        return 0.0
    ext, skip = _lattice(label, alphabet)
    with np.errstate(divide="ignore"):
        log_y = np.log(y.values)
    _, _, log_p = _forward(log_y, ext, skip)
    return math.exp(log_p)


def ctc_forward_backward(
    label: LabelSequence, y: FramePosteriors, alphabet: Alphabet
) -> CtcResult:
    """Negative log marginal probability of `label` with exact gradients.

    Gradients are returned both w.r.t. the posteriors y and w.r.t.
    row-wise pre-softmax logits (the form the network trains on).
    Labels with probability exactly zero raise InfeasibleLabelError;
    the loss is never silently infinite.
    """
    _check_label(label, alphabet)
    _check_extended_width(y, alphabet)
    T = y.timesteps
    need = _min_feasible_length(label)
    if T < need:
        raise InfeasibleLabelError(
            f"label needs at least {need} frames (length plus repeats), got T={T}"
        )
    ext, skip = _lattice(label, alphabet)
    with np.errstate(divide="ignore"):
        log_y = np.log(y.values)
    log_alpha, log_alpha_in, log_p = _forward(log_y, ext, skip)
    if log_p == -np.inf:
        raise InfeasibleLabelError("label has probability zero under these posteriors")
    log_beta = _backward(log_y, ext, skip)

    K = alphabet.extended_size
    # group lattice states by their symbol once; K and S are both small
    grad_posteriors = np.zeros((T, K))
    grad_logits = y.values.copy()
    for k in range(K):
        sel = np.flatnonzero(ext == k)
        if sel.size == 0:
            continue
        # d p / d y[t,k] uses alpha without the frame emission
        log_dp = np.logaddexp.reduce(log_alpha_in[:, sel] + log_beta[:, sel], axis=1)
        grad_posteriors[:, k] = -np.exp(log_dp - log_p)
        # occupancy gamma uses the full alpha
        log_gamma = np.logaddexp.reduce(log_alpha[:, sel] + log_beta[:, sel], axis=1)
        grad_logits[:, k] -= np.exp(log_gamma - log_p)
    return CtcResult(loss=-log_p, grad_posteriors=grad_posteriors, grad_logits=grad_logits)


def ctc_batch_loss(samples, alphabet: Alphabet, reduction: str = "sum"):
    """Total loss over (posteriors, label) pairs plus per-sample results.

    The definitional reduction is the plain sum; `reduction="mean"` divides
    by the sample count for gradient-scale control during training.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    results = []
    for i, (y, label) in enumerate(samples):
        try:
            results.append(ctc_forward_backward(label, y, alphabet))
        except InfeasibleLabelError as e:
            raise InfeasibleLabelError(f"sample {i}: {e}") from None
    total = float(sum(r.loss for r in results))
    if reduction == "mean" and results:
        total /= len(results)
    return total, results
