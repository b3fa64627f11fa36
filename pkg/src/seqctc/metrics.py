"""String-level evaluation: hard full-sequence match rate with a
per-length breakdown and a mismatch listing.

The machine-readable serialization is line-oriented `key = value`; the
mismatch values use colon-separated fields (sample index, truth,
prediction) since labels are digit strings and never contain colons.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ctc import Alphabet
from .errors import UsageError


@dataclass(frozen=True)
class EvalReport:
    total: int
    correct: int
    rate: float
    per_length: dict  # length -> (total, correct, rate)
    mismatches: tuple  # (sample index, truth string, prediction string)


def evaluate(predictions, truths, alphabet: Alphabet | None = None) -> EvalReport:
    """Hard metric: a sample counts as correct only when the whole
    predicted sequence equals the ground truth."""
    if len(predictions) != len(truths):
        raise UsageError(
            f"prediction/truth counts differ: {len(predictions)} vs {len(truths)}"
        )
    if not truths:
        raise UsageError("cannot evaluate an empty sample set")
    alphabet = alphabet or Alphabet.digits()
    correct = 0
    by_length = {}
    mismatches = []
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        n = len(truth)
        tot_n, cor_n = by_length.get(n, (0, 0))
        hit = pred.symbols == truth.symbols
        by_length[n] = (tot_n + 1, cor_n + (1 if hit else 0))
        if hit:
            correct += 1
        else:
            mismatches.append((i, alphabet.string_of(truth), alphabet.string_of(pred)))
    per_length = {
        n: (tot, cor, cor / tot) for n, (tot, cor) in sorted(by_length.items())
    }
    return EvalReport(
        total=len(truths),
        correct=correct,
        rate=correct / len(truths),
        per_length=per_length,
        mismatches=tuple(mismatches),
    )


def report_to_lines(report: EvalReport):
    """Machine-readable `key = value` lines; floats use repr so parsing
    recovers the exact values."""
    lines = [
        f"total = {report.total}",
        f"correct = {report.correct}",
        f"rate = {report.rate!r}",
    ]
    for n, (tot, cor, rate) in sorted(report.per_length.items()):
        lines.append(f"length.{n}.total = {tot}")
        lines.append(f"length.{n}.correct = {cor}")
        lines.append(f"length.{n}.rate = {rate!r}")
    for k, (idx, truth, pred) in enumerate(report.mismatches):
        lines.append(f"mismatch.{k} = {idx}:{truth}:{pred}")
    return lines


def report_from_lines(lines) -> EvalReport:
    kv = {}
    order = []
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise UsageError(f"malformed report line: {line!r}")
        kv[key] = value
        order.append(key)
    try:
        total = int(kv["total"])
        correct = int(kv["correct"])
        rate = float(kv["rate"])
    except KeyError as e:
        raise UsageError(f"report is missing key {e.args[0]!r}") from None
    per_length = {}
    mismatches = []
    for key in order:
        if key.startswith("length.") and key.endswith(".total"):
            n = int(key.split(".")[1])
            per_length[n] = (
                int(kv[f"length.{n}.total"]),
                int(kv[f"length.{n}.correct"]),
                float(kv[f"length.{n}.rate"]),
            )
        elif key.startswith("mismatch."):
            idx, truth, pred = kv[key].split(":")
            mismatches.append((int(idx), truth, pred))
    return EvalReport(
        total=total,
        correct=correct,
        rate=rate,
        per_length=per_length,
        mismatches=tuple(mismatches),
    )


def format_report_table(report: EvalReport) -> str:
    """Human-readable summary."""
    rows = [
        "length   total   correct   rate",
        "------   -----   -------   ------",
    ]
    for n, (tot, cor, rate) in sorted(report.per_length.items()):
        rows.append(f"{n:>6}   {tot:>5}   {cor:>7}   {rate:.4f}")
    rows.append("------   -----   -------   ------")
    rows.append(f"   all   {report.total:>5}   {report.correct:>7}   {report.rate:.4f}")
    return "\n".join(rows)
