"""ADADELTA updates and the deterministic epoch driver.

ADADELTA keeps two exponential accumulators per parameter (squared
gradients and squared updates) and needs no learning rate; the only
constants are the decay rho and the conditioning epsilon.

An epoch shuffles with a generator derived purely from the given seed,
walks fixed-size batches, accumulates each batch's gradient through one
batched backward pass, and applies one optimizer step per batch. Within a
batch, per-sample CTC losses may be evaluated on a thread pool; results
are collected and reduced in sample-index order, so the outcome is
byte-identical for any thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ctc import Alphabet, FramePosteriors, ctc_forward_backward, _collapse_tuple
from .errors import InfeasibleLabelError, NumericError, TrainingError
from .seeding import derive_rng


@dataclass
class AdadeltaState:
    """Per-parameter accumulators E[g^2] and E[dx^2] plus the two constants."""

    rho: float = 0.95
    epsilon: float = 1e-6
    acc_grad: dict = field(default_factory=dict)
    acc_update: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, rho=0.95, epsilon=1e-6):
        return cls(
            rho=rho,
            epsilon=epsilon,
            acc_grad={k: np.zeros_like(v) for k, v in params.items()},
            acc_update={k: np.zeros_like(v) for k, v in params.items()},
        )


def adadelta_step(params, grads, state: AdadeltaState):
    """In-place update of params and state:

        E[g^2]  <- rho E[g^2] + (1-rho) g^2
        dx       = -sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps) * g
        E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
        x       <- x + dx

    Aborts atomically (no state touched) on any non-finite gradient.
    """
    if set(grads) != set(params):
        raise TrainingError("gradient keys do not match parameter keys")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}; update aborted")
    rho, eps = state.rho, state.epsilon
    for name in sorted(params):
        g = grads[name]
        eg = state.acc_grad[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        dx = -np.sqrt((state.acc_update[name] + eps) / (eg + eps)) * g
        eu = state.acc_update[name]
        eu *= rho
        eu += (1.0 - rho) * dx * dx
        params[name] += dx


def clip_gradients(grads, max_norm):
    """Scale all gradients jointly so the global L2 norm is at most
    max_norm. Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if max_norm is not None and norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass(frozen=True)
class EpochStats:
    mean_loss: float
    recognition_rate: float
    infeasible: int
    sample_count: int
    step_count: int


def _ctc_one(post_row, label, alphabet):
    try:
        return ctc_forward_backward(label, FramePosteriors(post_row), alphabet)
    except InfeasibleLabelError:
        return None


def train_epoch(
    net,
    samples,
    batch_size,
    state: AdadeltaState,
    seed: int,
    alphabet: Alphabet,
    threads: int = 1,
    clip: float | None = None,
) -> EpochStats:
    """One pass over (image, LabelSequence) pairs. Samples whose label
    cannot be aligned in the network's frame budget are counted and
    skipped; everything else contributes to one summed CTC gradient per
    batch and one ADADELTA step. Deterministic given the seed."""
    if len(samples) == 0:
        raise TrainingError("training set is empty")
    if batch_size < 1:
        raise TrainingError(f"batch_size must be >= 1, got {batch_size}")
    order = derive_rng(seed, "shuffle").permutation(len(samples))
    blank = alphabet.blank_index
    total_loss = 0.0
    n_feasible = 0
    n_correct = 0
    infeasible = 0
    steps = 0
    for start in range(0, len(order), batch_size):
        batch_idx = order[start : start + batch_size]
        images = np.stack([samples[i][0] for i in batch_idx])
        labels = [samples[i][1] for i in batch_idx]
        logits, cache = net.forward(images)
        post = net.posteriors(logits)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(
                    pool.map(lambda i: _ctc_one(post[i], labels[i], alphabet), range(len(labels)))
                )
        else:
            results = [_ctc_one(post[i], labels[i], alphabet) for i in range(len(labels))]
        dlogits = np.zeros_like(logits)
        for i, res in enumerate(results):
            if res is None:
                infeasible += 1
                continue
            total_loss += res.loss
            n_feasible += 1
            dlogits[i] = res.grad_logits
            decoded = _collapse_tuple(np.argmax(post[i], axis=1).tolist(), blank)
            if decoded == labels[i].symbols:
                n_correct += 1
        grads = net.backward(dlogits, cache)
        if clip is not None:
            clip_gradients(grads, clip)
        adadelta_step(net.params, grads, state)
        steps += 1
    if n_feasible == 0:
        raise TrainingError("every sample in the epoch was infeasible for the frame budget")
    return EpochStats(
        mean_loss=total_loss / n_feasible,
        recognition_rate=n_correct / n_feasible,
        infeasible=infeasible,
        sample_count=len(samples),
        step_count=steps,
    )
