"""Accuracy table and confusion matrix of a classifier evaluation, as text and JSON."""
from __future__ import annotations

import numpy as np

from .errors import UsageError


def _r2(x):
    return float(f"{x:.2f}")


def pipeline_report(ev, title="Chip state prediction accuracy"):
    """Return ``(text, summary)`` for an :class:`~qdm.classify.Evaluation`.

    The summary holds the same two-decimal values the text shows, under
    ``table`` and ``confusion``, plus unrounded values and counts.
    """
    counts = np.asarray(ev.counts, dtype=int)
    if int(counts.sum()) == 0:
        raise UsageError("the evaluation holds no test images")
    classes = [int(c) for c in ev.classes]
    acc = [_r2(a) for a in ev.per_class_accuracy]
    total = _r2(ev.total_accuracy)
    norm_r = [[_r2(v) for v in row] for row in np.asarray(ev.confusion, dtype=float)]

    w = max(6, max(len(str(c)) for c in classes) + 1)
    head = "State (ROs)".ljust(12) + "".join(str(c).rjust(w) for c in classes) + "Total".rjust(w + 1)
    line = "Accuracy".ljust(12) + "".join(f"{a:.2f}".rjust(w) for a in acc) + \
        f"{total:.2f}".rjust(w + 1)
    out = [title, head, line, "",
           "Confusion matrix (rows: true state, columns: predicted, row-normalized)",
           "true\\pred".ljust(12) + "".join(str(c).rjust(w) for c in classes)]
    for c, row in zip(classes, norm_r):
        out.append(str(c).ljust(12) + "".join(f"{v:.2f}".rjust(w) for v in row))
    adj = ev.adjacent_error_fraction()
    n_err = int(np.sum(ev.predictions != ev.truth))
    out += ["", f"test images: {int(counts.sum())}, errors: {n_err}, "
                f"adjacent-state errors: {'n/a' if n_err == 0 else f'{adj:.2f}'}"]
    summary = {
        "title": title,
        "table": {"states": classes, "accuracy": acc, "total": total},
        "confusion": {"states": classes, "row_normalized": norm_r},
        "exact": {"per_class_accuracy": [float(a) for a in ev.per_class_accuracy],
                  "total_accuracy": float(ev.total_accuracy),
                  "images_per_state": counts.sum(axis=1).tolist(),
                  "confusion_counts": counts.tolist(),
                  "adjacent_error_fraction": None if n_err == 0 else float(adj),
                  "n_errors": n_err},
    }
    return "\n".join(out) + "\n", summary


def parse_report_table(text):
    """Read the state and accuracy rows back out of a report's text."""
    lines = text.splitlines()
    head = next(ln for ln in lines if ln.startswith("State (ROs)"))
    acc = next(ln for ln in lines if ln.startswith("Accuracy"))
    states = [int(t) for t in head[len("State (ROs)"):].split()[:-1]]
    vals = [float(t) for t in acc[len("Accuracy"):].split()]
    return {"states": states, "accuracy": vals[:-1], "total": vals[-1]}
