"""Reconstruction-loss anomaly scoring and the detector failure criterion.

A sample's anomaly score is the loss between the sample and its own
reconstruction, in raw input space. The detector fails on a point that is
far from all training data yet scores at or below the *minimum* training
score: it would be ranked less anomalous than everything the detector was
trained on.

Two loss conventions are exposed because absolute reported numbers depend
on whether the squared error is averaged or summed over features; "mean"
is the default and every table records which one produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import numlin
from .datagen import Dataset
from .errors import InputDomainError
from .models import model_input_dim, reconstruct

CONVENTIONS = ("mean", "sum")


@dataclass
class ScoreEntry:
    index: int
    score: float
    label: int | None


@dataclass
class ScoreTable:
    """Per-sample anomaly scores, sorted descending (most anomalous first)."""

    entries: list[ScoreEntry]
    min_score: float
    max_score: float
    role: str
    convention: str

    @property
    def min_normal_score(self) -> float:
        if self.role != "train":
            raise InputDomainError("min_normal_score is defined for train-role tables")
        return self.min_score

    @property
    def max_normal_score(self) -> float:
        if self.role != "train":
            raise InputDomainError("max_normal_score is defined for train-role tables")
        return self.max_score


@dataclass
class Verdict:
    """Outcome of the failure criterion for one candidate input."""

    undetected: bool
    score: float
    min_normal_score: float
    margin: float  # min_normal_score - score; positive means undetected
    ratio: float  # score / min_normal_score; < 1 is the portable criterion


def sample_scores(model, x: np.ndarray, convention: str = "mean") -> np.ndarray:
    """Vector of per-row reconstruction losses."""
    if convention not in CONVENTIONS:
        raise InputDomainError(f"convention must be one of {CONVENTIONS}")
    xm = numlin.as_matrix(x, "samples")
    if xm.shape[1] != model_input_dim(model):
        raise InputDomainError(
            f"data has {xm.shape[1]} features, model expects {model_input_dim(model)}"
        )
    xhat = reconstruct(model, xm)
    sq = np.sum((xm - xhat) ** 2, axis=1)
    if convention == "mean":
        sq = sq / xm.shape[1]
    return sq


def score(model, dataset: Dataset, convention: str = "mean") -> ScoreTable:
    """Score every sample of a dataset; table is sorted by descending score."""
    scores = sample_scores(model, dataset.x, convention)
    order = np.argsort(-scores, kind="stable")
    entries = [
        ScoreEntry(
            index=int(i),
            score=float(scores[i]),
            label=None if dataset.labels is None else int(dataset.labels[i]),
        )
        for i in order
    ]
    return ScoreTable(
        entries=entries,
        min_score=float(scores.min()),
        max_score=float(scores.max()),
        role=dataset.role,
        convention=convention,
    )


def is_undetected(a, model, train_scores: ScoreTable) -> Verdict:
    """Apply the failure criterion: score(a) <= min training score.

    Ties count as undetected. The ratio score/min is the seed-robust
    quantity; the margin is in absolute loss units.
    """
    if train_scores.role != "train":
        raise InputDomainError("train_scores must come from a train-role dataset")
    av = numlin.as_vector(np.asarray(a, dtype=np.float64), "candidate")
    s = float(sample_scores(model, av[None, :], train_scores.convention)[0])
    floor = train_scores.min_score
    ratio = s / floor if floor > 0 else (0.0 if s == 0.0 else float("inf"))
    return Verdict(
        undetected=s <= floor,
        score=s,
        min_normal_score=floor,
        margin=floor - s,
        ratio=ratio,
    )


def write_score_csv(table: ScoreTable, path) -> None:
    """CSV export: index,score,label rows in table (descending) order."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("index,score,label\n")
        for e in table.entries:
            label = "" if e.label is None else str(e.label)
            f.write(f"{e.index},{repr(e.score)},{label}\n")


def table_summary(table: ScoreTable) -> dict:
    return {
        "count": len(table.entries),
        "min_score": table.min_score,
        "max_score": table.max_score,
        "role": table.role,
        "convention": table.convention,
    }


def write_score_summary(table: ScoreTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(table_summary(table), f, sort_keys=True, indent=1)
        f.write("\n")
