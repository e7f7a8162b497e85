"""Confusion counts and precision / recall / F1 with explicit undefined values."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_predictions(cls, truth: Iterable[bool], pred: Iterable[bool]) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for y, p in zip(truth, pred):
            if y and p:
                tp += 1
            elif p:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)

    def __add__(self, o: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + o.tp, self.fp + o.fp, self.fn + o.fn, self.tn + o.tn)

    @property
    def precision(self) -> Optional[float]:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> Optional[float]:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> Optional[float]:
        """Harmonic mean of P and R; undefined whenever either one is."""
        p, r = self.precision, self.recall
        if p is None or r is None:
            return None
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def specificity(self) -> Optional[float]:
        d = self.tn + self.fp
        return self.tn / d if d else None

    def summary(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": encode(self.precision), "recall": encode(self.recall),
                "f1": encode(self.f1), "specificity": encode(self.specificity)}


def encode(x: Optional[float]):
    """JSON-safe metric value: undefined becomes the string ``"nan/0"``."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan/0"
    return x


def decode(x) -> Optional[float]:
    return None if x == "nan/0" else float(x)


def mean_defined(xs: Iterable[Optional[float]]) -> Optional[float]:
    vals = [x for x in xs if x is not None]
    return sum(vals) / len(vals) if vals else None
