"""Append-only metrics CSV with the fixed schema epoch,ratio,split,ce,kl,acc,lr.

Ratios render as exact rational strings; absent values render empty.
"""

from __future__ import annotations

import os
from fractions import Fraction

HEADER = "epoch,ratio,split,ce,kl,acc,lr"


def format_ratio(r: Fraction) -> str:
    return str(r)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w") as f:
                f.write(HEADER + "\n")

    def row(self, epoch: int, ratio: Fraction, split: str,
            ce=None, kl=None, acc=None, lr=None):
        cells = [str(epoch), format_ratio(ratio), split,
                 _cell(ce), _cell(kl), _cell(acc), _cell(lr)]
        with open(self.path, "a") as f:
            f.write(",".join(cells) + "\n")
