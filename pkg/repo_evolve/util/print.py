import math
from typing import Dict, Iterable, List, Sequence

from repo_evolve.grouping import ScanRow
from repo_evolve.network import EpochRecord


def _fmt(value) -> str:
    if isinstance(value, float):
        return "n/a" if math.isnan(value) else f"{value:.4f}"
    return str(value)


def format_tree(tree: Dict, prefix: str = "") -> List[str]:
    """
    Renders a nested summary with the same connectors as a directory listing.
    """
    lines = []
    items = list(tree.items())
    for i, (key, value) in enumerate(items):
        is_last = i == len(items) - 1
        connector = "└── " if is_last else "├── "
        if isinstance(value, dict):
            lines.append(f"{prefix}{connector}{key}")
            lines.extend(format_tree(value, prefix + ("    " if is_last else "│   ")))
        else:
            lines.append(f"{prefix}{connector}{key}: {_fmt(value)}")
    return lines


def format_report(summary: Dict) -> str:
    return "\n".join(["report"] + format_tree(summary))


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    rows = [[_fmt(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


def format_scan(rows: Sequence[ScanRow]) -> str:
    return format_table(("k", "inertia", "silhouette"), [(r.k, r.inertia, r.silhouette) for r in rows])


def format_history(history: Sequence[EpochRecord], best_epoch: int) -> str:
    return format_table(
        ("epoch", "train", "val", "type", "delay", "group", "best"),
        [
            (h.epoch, h.train_loss, h.val_loss, h.type_loss, h.delay_loss, h.group_loss, "*" if h.epoch == best_epoch else "")
            for h in history
        ],
    )
