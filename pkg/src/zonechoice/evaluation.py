"""Cross-validated evaluation of choice models.

Top-k accuracies are averaged across fold test sets; precision, recall,
and F1 are computed on the confusion matrix summed across folds (macro =
unweighted mean over classes with support, weighted = support-weighted).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from zonechoice.choice import ChoiceModel
from zonechoice.district import District, DomainError


@dataclass
class EvalReport:
    model: str
    accuracy: float
    top3_accuracy: float | None
    top5_accuracy: float | None
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_fold: list[dict] = field(default_factory=list)
    confusion: np.ndarray | None = None
    missing_classes: tuple[str, ...] = ()

    def to_csv(self, path: str | Path) -> None:
        cols = [
            "model", "accuracy", "top3_accuracy", "top5_accuracy",
            "macro_precision", "macro_recall", "macro_f1",
            "weighted_precision", "weighted_recall", "weighted_f1",
        ]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            w.writerow([
                self.model,
                f"{self.accuracy:.6f}",
                "" if self.top3_accuracy is None else f"{self.top3_accuracy:.6f}",
                "" if self.top5_accuracy is None else f"{self.top5_accuracy:.6f}",
                f"{self.macro_precision:.6f}",
                f"{self.macro_recall:.6f}",
                f"{self.macro_f1:.6f}",
                f"{self.weighted_precision:.6f}",
                f"{self.weighted_recall:.6f}",
                f"{self.weighted_f1:.6f}",
            ])


def top_k_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Share of rows whose label ranks in the k highest probabilities.

    Ties rank the lower class index first, matching the model's own
    argmax convention.
    """
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Accuracy plus macro/weighted precision, recall, F1 (zero-division -> 0)."""
    cm = np.asarray(cm, dtype=float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    present = support > 0
    weights = support[present] / support.sum()
    return {
        "accuracy": float(tp.sum() / cm.sum()),
        "macro_precision": float(precision[present].mean()),
        "macro_recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
        "weighted_precision": float(precision[present] @ weights),
        "weighted_recall": float(recall[present] @ weights),
        "weighted_f1": float(f1[present] @ weights),
    }


def evaluate(
    model: ChoiceModel,
    district: District,
    folds: int = 10,
    seed: int = 0,
    point_mass: bool | None = None,
) -> EvalReport:
    """K-fold CV of a choice model against the actual-school labels.

    Each fold retrains the model on the remaining students (a no-op for
    rule-based models) and predicts with the status-quo zoned school as
    the candidate. ``point_mass`` suppresses top-3/top-5 for degenerate
    models; by default it is inferred from the model type.
    """
    if folds < 2:
        raise DomainError("folds must be >= 2")
    if point_mass is None:
        point_mass = model.name == "follow"

    N, S = district.num_students, district.num_schools
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    fold_slices = np.array_split(perm, folds)

    zoned = district.status_quo_assignment[district.student_block]
    labels = district.student_actual

    cm = np.zeros((S, S), dtype=int)
    per_fold = []
    seen_in_training = np.zeros(S, dtype=bool)
    for f, test_idx in enumerate(fold_slices):
        train_idx = np.setdiff1d(perm, test_idx)
        model.fit(train_idx)
        seen_in_training |= np.isin(np.arange(S), labels[train_idx])

        probs = np.vstack(
            [model.probabilities(int(n), int(zoned[n])) for n in test_idx]
        )
        pred = probs.argmax(axis=1)
        truth = labels[test_idx]
        np.add.at(cm, (truth, pred), 1)

        fold = {"fold": f, "accuracy": float((pred == truth).mean())}
        if not point_mass:
            fold["top3_accuracy"] = top_k_hits(probs, truth, min(3, S))
            fold["top5_accuracy"] = top_k_hits(probs, truth, min(5, S))
        per_fold.append(fold)

    missing = tuple(
        district.school_ids[s]
        for s in range(S)
        if not seen_in_training[s] and (labels == s).any()
    )

    m = metrics_from_confusion(cm)
    top3 = top5 = None
    if not point_mass:
        top3 = float(np.mean([f["top3_accuracy"] for f in per_fold]))
        top5 = float(np.mean([f["top5_accuracy"] for f in per_fold]))
    return EvalReport(
        model=model.name,
        accuracy=m["accuracy"],
        top3_accuracy=top3,
        top5_accuracy=top5,
        macro_precision=m["macro_precision"],
        macro_recall=m["macro_recall"],
        macro_f1=m["macro_f1"],
        weighted_precision=m["weighted_precision"],
        weighted_recall=m["weighted_recall"],
        weighted_f1=m["weighted_f1"],
        per_fold=per_fold,
        confusion=cm,
        missing_classes=missing,
    )
